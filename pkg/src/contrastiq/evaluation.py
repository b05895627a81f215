"""Evaluation harness: rank correlation, logistic remapping, variance-ratio
significance, and the repeated content-disjoint train/test protocol.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .features import MdmParams, extract_batch
from .imgio import DatasetManifest
from .pixelops import round_half_away
from . import svm


class ZeroVarianceError(Exception):
    """Correlation or variance ratio is undefined for constant input."""


class DegenerateInputError(Exception):
    """Curve fitting needs nonconstant scores."""


def _check_paired(x: np.ndarray, y: np.ndarray, minimum: int) -> None:
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < minimum:
        raise ValueError(f"need at least {minimum} samples, got {x.size}")


def pearson(x, y) -> float:
    """Product-moment correlation."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    _check_paired(x, y, 3)
    cx = x - x.mean()
    cy = y - y.mean()
    denom = math.sqrt(float(cx @ cx) * float(cy @ cy))
    if denom == 0.0:
        raise ZeroVarianceError("correlation undefined for constant input")
    return float(cx @ cy) / denom


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    order = np.argsort(v, kind="stable")
    sv = v[order]
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank-order correlation: Pearson correlation of average-ranked data."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    _check_paired(x, y, 3)
    return pearson(_average_ranks(x), _average_ranks(y))


# ---------------------------------------------------------------------------
# Five-parameter logistic remapping of raw scores onto the subjective scale.


@dataclass
class LogisticFit:
    """Fitted b1*(1/2 - 1/(1+exp(b2*(x-b3)))) + b4*x + b5."""

    beta: np.ndarray
    rmse: float
    converged: bool

    def apply(self, x) -> np.ndarray:
        return _logistic5(np.asarray(x, dtype=np.float64), self.beta)


def _logistic5(x: np.ndarray, beta: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4, b5 = beta
    z = np.clip(b2 * (x - b3), -500.0, 500.0)
    return b1 * (0.5 - 1.0 / (1.0 + np.exp(z))) + b4 * x + b5


def _nelder_mead(objective, x0: np.ndarray, max_iter: int = 5000,
                 diameter_tol: float = 1e-8):
    """Plain downhill-simplex minimizer.

    Converged when every vertex lies within diameter_tol (sup norm) of the
    best one.  Returns (best_point, best_value, converged).
    """
    n = x0.size
    simplex = [np.array(x0, dtype=np.float64)]
    for i in range(n):
        p = simplex[0].copy()
        p[i] = p[i] * 1.05 if p[i] != 0.0 else 0.00025
        simplex.append(p)
    values = [float(objective(p)) for p in simplex]

    converged = False
    for _ in range(max_iter):
        order = np.argsort(values, kind="stable")
        simplex = [simplex[k] for k in order]
        values = [values[k] for k in order]

        diameter = max(float(np.max(np.abs(p - simplex[0]))) for p in simplex[1:])
        if diameter < diameter_tol:
            converged = True
            break

        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]

        reflected = centroid + (centroid - worst)
        f_reflected = float(objective(reflected))
        if values[0] <= f_reflected < values[-2]:
            simplex[-1], values[-1] = reflected, f_reflected
            continue

        if f_reflected < values[0]:
            expanded = centroid + 2.0 * (centroid - worst)
            f_expanded = float(objective(expanded))
            if f_expanded < f_reflected:
                simplex[-1], values[-1] = expanded, f_expanded
            else:
                simplex[-1], values[-1] = reflected, f_reflected
            continue

        contracted = centroid + 0.5 * (worst - centroid)
        f_contracted = float(objective(contracted))
        if f_contracted < values[-1]:
            simplex[-1], values[-1] = contracted, f_contracted
            continue

        best = simplex[0]
        simplex = [best] + [best + 0.5 * (p - best) for p in simplex[1:]]
        values = [values[0]] + [float(objective(p)) for p in simplex[1:]]

    order = np.argsort(values, kind="stable")
    return simplex[order[0]], values[order[0]], converged


def fit_logistic(scores, mos) -> LogisticFit:
    """Fit the five-parameter mapping by mean-square error.

    Two deterministic restarts (sigmoid-dominant and line-dominant) guard
    against the fit's initialization sensitivity; the lower-error result
    wins.
    """
    x = np.asarray(scores, dtype=np.float64).ravel()
    z = np.asarray(mos, dtype=np.float64).ravel()
    _check_paired(x, z, 5)
    x_range = float(x.max() - x.min())
    if x_range == 0.0:
        raise DegenerateInputError("scores are constant; nothing to fit")

    def mse(beta):
        r = _logistic5(x, beta) - z
        return float(r @ r) / r.size

    z_range = float(z.max() - z.min())
    sigmoid_start = np.array([z_range, 10.0 / x_range, float(x.mean()), 0.0, float(z.mean())])

    var_x = float(np.var(x))
    slope = float(np.cov(x, z, bias=True)[0, 1]) / var_x if var_x > 0 else 0.0
    intercept = float(z.mean()) - slope * float(x.mean())
    line_start = np.array([0.0, 10.0 / x_range, float(x.mean()), slope, intercept])

    best = None
    for start in (sigmoid_start, line_start):
        beta, value, ok = _nelder_mead(mse, start)
        if best is None or value < best[1]:
            best = (beta, value, ok)
    beta, value, ok = best
    return LogisticFit(beta=beta, rmse=math.sqrt(max(value, 0.0)), converged=ok)


# ---------------------------------------------------------------------------
# Variance-ratio significance test on residuals.


class FTestOutcome(Enum):
    SUPERIOR_A = "superior_a"
    SUPERIOR_B = "superior_b"
    INDISTINGUISHABLE = "indistinguishable"


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # Lentz's algorithm for the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), accurate to ~1e-14 over the unit interval."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def f_cdf(value: float, dof_num: int, dof_den: int) -> float:
    """P(F <= value) for the variance-ratio distribution."""
    if value <= 0.0:
        return 0.0
    t = dof_num * value / (dof_num * value + dof_den)
    return regularized_incomplete_beta(dof_num / 2.0, dof_den / 2.0, t)


def f_quantile(prob: float, dof_num: int, dof_den: int) -> float:
    """Inverse of f_cdf by bracket-and-bisect."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {prob}")
    hi = 1.0
    while f_cdf(hi, dof_num, dof_den) < prob:
        hi *= 2.0
        if hi > 1e12:
            break
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f_cdf(mid, dof_num, dof_den) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def f_test(resid_a, resid_b, alpha: float = 0.05) -> FTestOutcome:
    """Two-sided variance-ratio test between two residual vectors.

    The larger sample variance goes on top; the ratio is checked against the
    upper alpha/2 quantile with (n-1, n-1) degrees of freedom.  A significant
    ratio marks the smaller-variance side as superior.
    """
    ra = np.asarray(resid_a, dtype=np.float64).ravel()
    rb = np.asarray(resid_b, dtype=np.float64).ravel()
    if ra.size < 3 or rb.size < 3:
        raise ValueError("both residual vectors need at least 3 entries")
    var_a = float(np.var(ra, ddof=1))
    var_b = float(np.var(rb, ddof=1))
    if var_a == 0.0 and var_b == 0.0:
        raise ZeroVarianceError("both residual vectors are constant")

    if var_a >= var_b:
        big, small = var_a, var_b
        dof = (ra.size - 1, rb.size - 1)
        loser_is_a = True
    else:
        big, small = var_b, var_a
        dof = (rb.size - 1, ra.size - 1)
        loser_is_a = False

    critical = f_quantile(1.0 - alpha / 2.0, *dof)
    ratio = math.inf if small == 0.0 else big / small
    if ratio <= critical:
        return FTestOutcome.INDISTINGUISHABLE
    return FTestOutcome.SUPERIOR_B if loser_is_a else FTestOutcome.SUPERIOR_A


# ---------------------------------------------------------------------------
# Single-split evaluation and the repeated-split protocol.


@dataclass
class EvalReport:
    """Correlation summary for one set of predictions against MOS."""

    src: float
    pcc: float
    fit: LogisticFit
    residuals: np.ndarray
    n: int


def evaluate_scores(scores, mos) -> EvalReport:
    """SRC of raw scores plus PCC and residuals after the logistic remap."""
    x = np.asarray(scores, dtype=np.float64).ravel()
    z = np.asarray(mos, dtype=np.float64).ravel()
    src = spearman(x, z)
    fit = fit_logistic(x, z)
    mapped = fit.apply(x)
    pcc = pearson(mapped, z)
    return EvalReport(src=src, pcc=pcc, fit=fit, residuals=mapped - z, n=x.size)


@dataclass(frozen=True)
class SplitSpec:
    """Repeated random content-disjoint splitting."""

    train_frac: float = 0.8
    repetitions: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_frac < 1.0:
            raise ValueError(f"train_frac must be in (0, 1), got {self.train_frac}")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")


@dataclass
class ProtocolReport:
    """Median correlations over the repetitions that produced a valid split."""

    median_src: float
    median_pcc: float
    reps_used: int
    reps_skipped: int
    per_rep: list = field(default_factory=list)  # (rep_index, src, pcc)


@dataclass
class ClassificationReport:
    median_accuracy: float
    reps_used: int
    reps_skipped: int
    per_rep: list = field(default_factory=list)  # (rep_index, accuracy)


def _canonical_records(manifest: DatasetManifest):
    # row order must not matter: sort records by a stable content-level key
    return sorted(manifest.records, key=lambda r: (r.content_id, r.image_path, r.mos))


def _split_contents(contents: np.ndarray, rep: int, seed: int, train_frac: float):
    rng = np.random.default_rng([np.uint32(seed), np.uint32(rep)])
    perm = rng.permutation(contents.size)
    n_train = round_half_away(train_frac * contents.size)
    n_train = min(max(n_train, 1), contents.size - 1)
    train_set = set(contents[perm[:n_train]].tolist())
    return train_set


def _resolve_hyper(hyper, x, z, content_ids, task: str):
    """Fixed (c, gamma[, epsilon]) passes through; None means CV over the default grids."""
    if hyper is not None:
        if task == "regression":
            c, gamma, epsilon = hyper
            return float(c), float(gamma), float(epsilon)
        c, gamma = hyper[0], hyper[1]
        return float(c), float(gamma), 0.0
    n_contents = len(set(content_ids))
    if n_contents < 2:
        return DEFAULT_FALLBACK_HYPER
    try:
        best = svm.grid_search(x, z, content_ids, task=task, folds=min(5, n_contents))
        return best.c, best.gamma, best.epsilon
    except ValueError:
        return DEFAULT_FALLBACK_HYPER


DEFAULT_FALLBACK_HYPER = (svm.DEFAULT_C_GRID[0], svm.DEFAULT_GAMMA_GRID[0], svm.DEFAULT_EPSILON_GRID[0])


def _regression_rep(args):
    x, mos, contents, contents_unique, rep, seed, train_frac, hyper = args
    train_set = _split_contents(contents_unique, rep, seed, train_frac)
    train = np.array([c in train_set for c in contents])
    test = ~train
    if train.sum() < 2 or test.sum() < 3:
        return (rep, None, None)
    try:
        c, gamma, epsilon = _resolve_hyper(hyper, x[train], mos[train], contents[train], "regression")
        model = svm.train_svr(x[train], mos[train], c=c, gamma=gamma, epsilon=epsilon)
        pred = svm.predict_mos_batch(model, x[test])
        report = evaluate_scores(pred, mos[test])
    except (ZeroVarianceError, DegenerateInputError, svm.TooFewSamplesError):
        return (rep, None, None)
    return (rep, report.src, report.pcc)


def _classification_rep(args):
    x, labels, contents, contents_unique, rep, seed, train_frac, hyper = args
    train_set = _split_contents(contents_unique, rep, seed, train_frac)
    train = np.array([c in train_set for c in contents])
    test = ~train
    if train.sum() < 2 or test.sum() < 1 or len(set(labels[train])) < 2:
        return (rep, None)
    try:
        c, gamma, _ = _resolve_hyper(hyper, x[train], labels[train], contents[train], "classification")
        model = svm.train_svc(x[train], list(labels[train]), c=c, gamma=gamma)
        pred = svm.predict_label_batch(model, x[test])
    except (svm.SingleClassError, svm.TooFewSamplesError):
        return (rep, None)
    accuracy = float(np.mean([p == v for p, v in zip(pred, labels[test])]))
    return (rep, accuracy)


def _run_reps(worker, payloads, jobs: int):
    if jobs <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, payloads, chunksize=max(1, len(payloads) // (4 * jobs))))


def _manifest_feature_table(manifest: DatasetManifest, params: MdmParams,
                            use_downsample: bool, jobs: int):
    records = _canonical_records(manifest)
    paths = [manifest.resolve(r) for r in records]
    x = extract_batch(paths, params, use_downsample=use_downsample, jobs=jobs)
    mos = np.array([r.mos for r in records], dtype=np.float64)
    labels = np.array([r.distortion for r in records])
    contents = np.array([r.content_id for r in records])
    contents_unique = np.array(sorted(set(contents.tolist())))
    if contents_unique.size < 2:
        raise ValueError(f"need at least 2 distinct content ids, got {contents_unique.size}")
    return x, mos, labels, contents, contents_unique


def run_protocol(manifest: DatasetManifest, params: MdmParams = MdmParams(),
                 split: SplitSpec = SplitSpec(), hyper=None,
                 use_downsample: bool = True, jobs: int = 1) -> ProtocolReport:
    """Repeated content-disjoint regression protocol; medians over repetitions.

    hyper is a fixed (c, gamma, epsilon) triple, or None to cross-validate
    the default grid inside every repetition's training side.  Degenerate
    repetitions (too-small or constant test splits) are skipped and counted.
    """
    x, mos, _, contents, contents_unique = _manifest_feature_table(
        manifest, params, use_downsample, jobs)
    payloads = [
        (x, mos, contents, contents_unique, rep, split.seed, split.train_frac, hyper)
        for rep in range(split.repetitions)
    ]
    results = _run_reps(_regression_rep, payloads, jobs)
    per_rep = [(rep, s, p) for rep, s, p in results if s is not None]
    if not per_rep:
        raise ValueError("every repetition produced a degenerate split")
    srcs = np.array([s for _, s, _ in per_rep])
    pccs = np.array([p for _, _, p in per_rep])
    return ProtocolReport(
        median_src=float(np.median(srcs)),
        median_pcc=float(np.median(pccs)),
        reps_used=len(per_rep),
        reps_skipped=split.repetitions - len(per_rep),
        per_rep=per_rep,
    )


def run_classification_protocol(manifest: DatasetManifest, params: MdmParams = MdmParams(),
                                split: SplitSpec = SplitSpec(), hyper=None,
                                use_downsample: bool = True, jobs: int = 1) -> ClassificationReport:
    """Repeated content-disjoint distortion-type classification protocol."""
    x, _, labels, contents, contents_unique = _manifest_feature_table(
        manifest, params, use_downsample, jobs)
    payloads = [
        (x, labels, contents, contents_unique, rep, split.seed, split.train_frac, hyper)
        for rep in range(split.repetitions)
    ]
    results = _run_reps(_classification_rep, payloads, jobs)
    per_rep = [(rep, a) for rep, a in results if a is not None]
    if not per_rep:
        raise ValueError("every repetition produced a degenerate split")
    accs = np.array([a for _, a in per_rep])
    return ClassificationReport(
        median_accuracy=float(np.median(accs)),
        reps_used=len(per_rep),
        reps_skipped=split.repetitions - len(per_rep),
        per_rep=per_rep,
    )


@dataclass(frozen=True)
class SweepRow:
    rho: int
    q: int
    median_src: float
    median_pcc: float


def sweep(manifest: DatasetManifest, rho_grid, q_grid, split: SplitSpec = SplitSpec(),
          hyper=None, use_downsample: bool = True, jobs: int = 1) -> list[SweepRow]:
    """Run the regression protocol over a (rho, q) grid."""
    rho_values = list(rho_grid)
    q_values = list(q_grid)
    if not rho_values or not q_values:
        raise ValueError("rho and q grids must be nonempty")
    rows = []
    for rho in rho_values:
        for q in q_values:
            report = run_protocol(
                manifest, MdmParams(rho=int(rho), q=int(q)), split, hyper,
                use_downsample=use_downsample, jobs=jobs)
            rows.append(SweepRow(rho=int(rho), q=int(q),
                                 median_src=report.median_src, median_pcc=report.median_pcc))
    return rows
