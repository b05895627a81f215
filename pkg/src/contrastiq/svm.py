"""Kernel machines mapping feature vectors to quality scores and distortion labels.

Both the epsilon-tube regressor and the soft-margin classifier share one
sequential-minimal-optimization solver for the dual problem

    min  1/2 a'Qa + p'a   s.t.  y'a = 0,  0 <= a_i <= C

with maximal-violating-pair working-set selection.  Training data is put
into a canonical order before solving, so the fitted model is independent
of the order samples arrive in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .features import FeatureVector

MODEL_SCHEMA_VERSION = 1

DEFAULT_C_GRID = (1.0, 10.0, 100.0, 1000.0)
DEFAULT_GAMMA_GRID = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0)
DEFAULT_EPSILON_GRID = (0.01, 0.1)

KKT_TOLERANCE = 1e-3
_MAX_SMO_ITER = 500_000


class TooFewSamplesError(Exception):
    """Training needs at least two samples."""


class SingleClassError(Exception):
    """Classification training needs at least two distinct labels."""


class TaskMismatchError(Exception):
    """Model trained for a different task than the prediction asked for."""


class SchemaVersionMismatchError(Exception):
    """Model file carries an unknown schema version."""


class CorruptModelError(Exception):
    """Model file cannot be parsed into a valid model."""


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a_i - b_j||^2) for all row pairs."""
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


@dataclass
class Scaler:
    """Per-feature min-max scaler fitted on the training set."""

    feat_min: np.ndarray
    feat_max: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        return cls(feat_min=x.min(axis=0), feat_max=x.max(axis=0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        span = self.feat_max - self.feat_min
        safe = np.where(span > 0.0, span, 1.0)
        return (x - self.feat_min) / safe


@dataclass
class PairMachine:
    """One binary decision machine inside a one-vs-one multiclass model."""

    label_neg: str
    label_pos: str
    svs: np.ndarray
    coefs: np.ndarray
    bias: float


@dataclass
class SvModel:
    """Trained kernel machine plus everything needed to reproduce predictions."""

    task: str  # "regression" | "classification"
    gamma: float
    c: float
    epsilon: float
    scaler: Scaler
    svs: np.ndarray
    coefs: np.ndarray
    bias: float
    labels: list[str] | None = None
    target_min: float = 0.0
    target_max: float = 1.0
    degenerate: bool = False
    pairs: list[PairMachine] | None = None
    diag: dict = field(default_factory=dict, repr=False, compare=False)


def _as_matrix(features) -> np.ndarray:
    """Accept a list of FeatureVector or any (n, 3) array-like."""
    if len(features) and isinstance(features[0], FeatureVector):
        return np.array([f.as_array() for f in features], dtype=np.float64)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) feature matrix, got shape {x.shape}")
    return x


def _as_vector(f) -> np.ndarray:
    if isinstance(f, FeatureVector):
        return f.as_array()
    v = np.asarray(f, dtype=np.float64).ravel()
    if v.size != 3:
        raise ValueError(f"expected a 3-component feature vector, got {v.size}")
    return v


def _smo(q: np.ndarray, y: np.ndarray, p: np.ndarray, c: float,
         tol: float, max_iter: int = _MAX_SMO_ITER):
    """Solve the box-constrained dual by second-order working-set SMO.

    The first index is the worst violator; the partner is the index whose
    pairwise step promises the largest objective decrease.  Returns
    (a, bias, kkt_gap, iterations, converged).  Ties in pair selection
    break toward the lowest index, so the run is deterministic.
    """
    n = p.size
    a = np.zeros(n)
    grad = p.astype(np.float64, copy=True)
    qdiag = np.ascontiguousarray(np.diag(q))
    snap = 1e-12 * max(1.0, c)
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        neg_yg = -(y * grad)
        movable_up = ((y > 0) & (a < c)) | ((y < 0) & (a > 0))
        movable_dn = ((y < 0) & (a < c)) | ((y > 0) & (a > 0))
        if not movable_up.any() or not movable_dn.any():
            converged = True
            break
        i = int(np.argmax(np.where(movable_up, neg_yg, -np.inf)))
        gap = neg_yg[i] - np.min(np.where(movable_dn, neg_yg, np.inf))
        if gap <= tol:
            converged = True
            break

        # curvature along each candidate pair direction, floored for safety
        drop = neg_yg[i] - neg_yg
        quad_all = np.maximum(qdiag[i] + qdiag - 2.0 * y[i] * (y * q[:, i]), 1e-12)
        usable = movable_dn & (drop > 0.0)
        decrease = np.where(usable, -(drop * drop) / quad_all, np.inf)
        j = int(np.argmin(decrease))

        step = drop[j] / quad_all[j]
        limit_i = (c - a[i]) if y[i] > 0 else a[i]
        limit_j = a[j] if y[j] > 0 else (c - a[j])
        step = min(step, limit_i, limit_j)

        da_i = y[i] * step
        da_j = -y[j] * step
        a[i] += da_i
        a[j] += da_j
        for t in (i, j):
            if a[t] < snap:
                a[t] = 0.0
            elif a[t] > c - snap:
                a[t] = c
        grad += q[:, i] * da_i + q[:, j] * da_j

    # fresh gradient: incremental updates drift slightly over many steps
    grad = q @ a + p
    neg_yg = -(y * grad)
    movable_up = ((y > 0) & (a < c)) | ((y < 0) & (a > 0))
    movable_dn = ((y < 0) & (a < c)) | ((y > 0) & (a > 0))
    hi = np.max(neg_yg[movable_up]) if movable_up.any() else None
    lo = np.min(neg_yg[movable_dn]) if movable_dn.any() else None
    if hi is not None and lo is not None:
        bias = 0.5 * (hi + lo)
        kkt_gap = float(hi - lo)
    else:
        bias = float(hi if hi is not None else (lo if lo is not None else 0.0))
        kkt_gap = 0.0
    return a, float(bias), kkt_gap, iterations, converged


def _svr_dual(kernel: np.ndarray, targets: np.ndarray, c: float, epsilon: float, tol: float):
    """Epsilon-insensitive regression dual via the doubled-variable mapping."""
    n = targets.size
    signs = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - targets, epsilon + targets])
    k_ext = np.tile(kernel, (2, 2))
    q = (signs[:, None] * signs[None, :]) * k_ext
    a, bias, gap, iters, ok = _smo(q, signs, p, c, tol)
    beta = a[:n] - a[n:]
    return beta, bias, {"kkt_gap": gap, "iterations": iters, "converged": ok}


def _svc_dual(kernel: np.ndarray, y: np.ndarray, c: float, tol: float):
    """Soft-margin binary classification dual."""
    q = (y[:, None] * y[None, :]) * kernel
    p = -np.ones(y.size)
    a, bias, gap, iters, ok = _smo(q, y, p, c, tol)
    return a, bias, {"kkt_gap": gap, "iterations": iters, "converged": ok}


def _canonical_order(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Sample order by (feature columns, target): makes training order-free."""
    return np.lexsort((t, x[:, 2], x[:, 1], x[:, 0]))


_SV_EPS = 1e-12


def train_svr(features, targets, c: float, gamma: float, epsilon: float,
              tol: float = KKT_TOLERANCE) -> SvModel:
    """Fit the quality regressor.

    Features are min-max scaled to [0, 1]; targets are scaled to [0, 1] for
    the solve and predictions are mapped back.  All-equal targets yield a
    constant predictor with the degenerate flag set.
    """
    x = _as_matrix(features)
    z = np.asarray(targets, dtype=np.float64).ravel()
    if x.shape[0] != z.size:
        raise ValueError(f"{x.shape[0]} feature rows vs {z.size} targets")
    if x.shape[0] < 2:
        raise TooFewSamplesError(f"need at least 2 samples, got {x.shape[0]}")
    if not np.isfinite(z).all():
        raise ValueError("targets must be finite")
    if c <= 0 or gamma <= 0 or epsilon < 0:
        raise ValueError(f"invalid hyperparameters c={c}, gamma={gamma}, epsilon={epsilon}")

    order = _canonical_order(x, z)
    x, z = x[order], z[order]

    scaler = Scaler.fit(x)
    xs = scaler.transform(x)
    t_min, t_max = float(z.min()), float(z.max())
    span = t_max - t_min
    zs = (z - t_min) / span if span > 0.0 else np.zeros_like(z)

    kernel = rbf_kernel(xs, xs, gamma)
    beta, bias, diag = _svr_dual(kernel, zs, c, epsilon, tol)

    keep = np.abs(beta) > _SV_EPS
    return SvModel(
        task="regression",
        gamma=gamma,
        c=c,
        epsilon=epsilon,
        scaler=scaler,
        svs=xs[keep],
        coefs=beta[keep],
        bias=bias,
        target_min=t_min,
        target_max=t_max,
        degenerate=span == 0.0,
        diag=diag,
    )


def train_svc(features, labels, c: float, gamma: float,
              tol: float = KKT_TOLERANCE) -> SvModel:
    """Fit the distortion-type classifier (one-vs-one above two classes)."""
    x = _as_matrix(features)
    lab = [str(v) for v in labels]
    if x.shape[0] != len(lab):
        raise ValueError(f"{x.shape[0]} feature rows vs {len(lab)} labels")
    classes = sorted(set(lab))
    if len(classes) < 2:
        raise SingleClassError(f"need at least 2 classes, got {classes}")
    if c <= 0 or gamma <= 0:
        raise ValueError(f"invalid hyperparameters c={c}, gamma={gamma}")

    class_index = {name: k for k, name in enumerate(classes)}
    t = np.array([class_index[v] for v in lab], dtype=np.float64)
    order = _canonical_order(x, t)
    x, t = x[order], t[order]

    scaler = Scaler.fit(x)
    xs = scaler.transform(x)

    def fit_pair(neg: str, pos: str):
        mask = (t == class_index[neg]) | (t == class_index[pos])
        xp = xs[mask]
        y = np.where(t[mask] == class_index[pos], 1.0, -1.0)
        kernel = rbf_kernel(xp, xp, gamma)
        alpha, bias, diag = _svc_dual(kernel, y, c, tol)
        keep = alpha > _SV_EPS
        return PairMachine(neg, pos, xp[keep], (alpha * y)[keep], bias), diag

    if len(classes) == 2:
        machine, diag = fit_pair(classes[0], classes[1])
        return SvModel(
            task="classification",
            gamma=gamma,
            c=c,
            epsilon=0.0,
            scaler=scaler,
            svs=machine.svs,
            coefs=machine.coefs,
            bias=machine.bias,
            labels=classes,
            diag=diag,
        )

    machines = []
    diags = []
    for neg, pos in combinations(classes, 2):
        machine, diag = fit_pair(neg, pos)
        machines.append(machine)
        diags.append(diag)
    return SvModel(
        task="classification",
        gamma=gamma,
        c=c,
        epsilon=0.0,
        scaler=scaler,
        svs=np.zeros((0, 3)),
        coefs=np.zeros(0),
        bias=0.0,
        labels=classes,
        pairs=machines,
        diag={"pairs": diags},
    )


def _decision(svs: np.ndarray, coefs: np.ndarray, bias: float,
              xs: np.ndarray, gamma: float) -> np.ndarray:
    if svs.shape[0] == 0:
        return np.full(xs.shape[0], bias)
    return rbf_kernel(xs, svs, gamma) @ coefs + bias


def predict_mos_batch(model: SvModel, features) -> np.ndarray:
    """Predicted quality scores for an (n, 3) feature batch."""
    if model.task != "regression":
        raise TaskMismatchError(f"model task is {model.task!r}, expected regression")
    xs = model.scaler.transform(_as_matrix(features))
    raw = _decision(model.svs, model.coefs, model.bias, xs, model.gamma)
    return model.target_min + raw * (model.target_max - model.target_min)


def predict_label_batch(model: SvModel, features) -> list[str]:
    """Predicted distortion labels for an (n, 3) feature batch."""
    if model.task != "classification":
        raise TaskMismatchError(f"model task is {model.task!r}, expected classification")
    xs = model.scaler.transform(_as_matrix(features))
    assert model.labels is not None
    if model.pairs is None:
        dec = _decision(model.svs, model.coefs, model.bias, xs, model.gamma)
        return [model.labels[1] if d > 0 else model.labels[0] for d in dec]

    votes = np.zeros((xs.shape[0], len(model.labels)), dtype=np.int64)
    index = {name: k for k, name in enumerate(model.labels)}
    for machine in model.pairs:
        dec = _decision(machine.svs, machine.coefs, machine.bias, xs, model.gamma)
        for row, d in enumerate(dec):
            votes[row, index[machine.label_pos if d > 0 else machine.label_neg]] += 1
    # argmax returns the first maximum: ties go to the earliest sorted label
    return [model.labels[k] for k in votes.argmax(axis=1)]


def predict_mos(model: SvModel, f) -> float:
    return float(predict_mos_batch(model, [_as_vector(f)])[0])


def predict_label(model: SvModel, f) -> str:
    return predict_label_batch(model, [_as_vector(f)])[0]


def predict(model: SvModel, f):
    """Quality score for regression models, class label for classifiers."""
    if model.task == "regression":
        return predict_mos(model, f)
    return predict_label(model, f)


@dataclass(frozen=True)
class GridResult:
    c: float
    gamma: float
    epsilon: float
    score: float


def _content_folds(content_ids, k: int) -> list[list[str]]:
    contents = sorted(set(content_ids))
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    k = min(k, len(contents))
    if k < 2:
        raise ValueError(f"need at least 2 distinct content ids, got {len(contents)}")
    return [contents[f::k] for f in range(k)]


def grid_search(features, targets, content_ids, task: str = "regression",
                c_grid=DEFAULT_C_GRID, gamma_grid=DEFAULT_GAMMA_GRID,
                epsilon_grid=DEFAULT_EPSILON_GRID, folds: int = 5) -> GridResult:
    """Pick hyperparameters by content-disjoint cross-validation.

    Regression scores by mean validation rank correlation, classification by
    mean validation accuracy.  Ties break toward smaller c, then smaller
    gamma, then smaller epsilon.
    """
    from .evaluation import ZeroVarianceError, spearman

    x = _as_matrix(features)
    content_ids = [str(v) for v in content_ids]
    if len(content_ids) != x.shape[0]:
        raise ValueError("content_ids length must match features")
    fold_sets = _content_folds(content_ids, folds)
    contents = np.array(content_ids)

    if task == "regression":
        z = np.asarray(targets, dtype=np.float64).ravel()
    elif task == "classification":
        lab = np.array([str(v) for v in targets])
    else:
        raise ValueError(f"unknown task {task!r}")

    c_values = sorted(set(float(v) for v in c_grid))
    gamma_values = sorted(set(float(v) for v in gamma_grid))
    epsilon_values = sorted(set(float(v) for v in epsilon_grid)) if task == "regression" else [0.0]

    best = None
    for c in c_values:
        for gamma in gamma_values:
            for epsilon in epsilon_values:
                scores = []
                for fold in fold_sets:
                    val = np.isin(contents, fold)
                    train = ~val
                    if train.sum() < 2 or val.sum() == 0:
                        continue
                    try:
                        if task == "regression":
                            if val.sum() < 3:
                                continue
                            model = train_svr(x[train], z[train], c=c, gamma=gamma, epsilon=epsilon)
                            pred = predict_mos_batch(model, x[val])
                            scores.append(spearman(pred, z[val]))
                        else:
                            if len(set(lab[train])) < 2:
                                continue
                            model = train_svc(x[train], list(lab[train]), c=c, gamma=gamma)
                            pred = predict_label_batch(model, x[val])
                            scores.append(float(np.mean([p == v for p, v in zip(pred, lab[val])])))
                    except (ZeroVarianceError, TooFewSamplesError, SingleClassError):
                        continue
                if not scores:
                    continue
                score = float(np.mean(scores))
                if best is None or score > best.score + 1e-12:
                    best = GridResult(c=c, gamma=gamma, epsilon=epsilon, score=score)
    if best is None:
        raise ValueError("every fold was degenerate; cannot select hyperparameters")
    return best


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _fmt_matrix(m: np.ndarray) -> list[list[str]]:
    return [[_fmt(v) for v in row] for row in m]


def _parse_matrix(rows, width: int = 3) -> np.ndarray:
    out = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    if out.size == 0:
        return np.zeros((0, width))
    return out


def save_model(model: SvModel, path: str) -> None:
    """Serialize as versioned JSON; reals go through 17-significant-digit strings."""
    doc = {
        "version": MODEL_SCHEMA_VERSION,
        "task": model.task,
        "kernel": {"type": "rbf", "gamma": _fmt(model.gamma)},
        "c": _fmt(model.c),
        "epsilon": _fmt(model.epsilon),
        "scaler": {
            "min": [_fmt(v) for v in model.scaler.feat_min],
            "max": [_fmt(v) for v in model.scaler.feat_max],
        },
        "svs": _fmt_matrix(model.svs),
        "coefs": [_fmt(v) for v in model.coefs],
        "bias": _fmt(model.bias),
        "labels": model.labels or [],
        "degenerate": model.degenerate,
    }
    if model.task == "regression":
        doc["target_scaler"] = {"min": _fmt(model.target_min), "max": _fmt(model.target_max)}
    if model.pairs is not None:
        doc["pairs"] = [
            {
                "labels": [m.label_neg, m.label_pos],
                "svs": _fmt_matrix(m.svs),
                "coefs": [_fmt(v) for v in m.coefs],
                "bias": _fmt(m.bias),
            }
            for m in model.pairs
        ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path: str) -> SvModel:
    """Load a model saved by save_model; inverse within one float ulp (i.e. exact)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"{path}: not valid model JSON ({exc})") from exc

    version = doc.get("version")
    if version != MODEL_SCHEMA_VERSION:
        raise SchemaVersionMismatchError(f"{path}: schema version {version!r}, expected {MODEL_SCHEMA_VERSION}")

    try:
        task = doc["task"]
        if task not in ("regression", "classification"):
            raise CorruptModelError(f"{path}: unknown task {task!r}")
        kernel = doc["kernel"]
        if kernel.get("type") != "rbf":
            raise CorruptModelError(f"{path}: unknown kernel type {kernel.get('type')!r}")
        scaler = Scaler(
            feat_min=np.array([float(v) for v in doc["scaler"]["min"]]),
            feat_max=np.array([float(v) for v in doc["scaler"]["max"]]),
        )
        model = SvModel(
            task=task,
            gamma=float(kernel["gamma"]),
            c=float(doc["c"]),
            epsilon=float(doc["epsilon"]),
            scaler=scaler,
            svs=_parse_matrix(doc["svs"]),
            coefs=np.array([float(v) for v in doc["coefs"]], dtype=np.float64),
            bias=float(doc["bias"]),
            labels=list(doc["labels"]) or None,
            degenerate=bool(doc.get("degenerate", False)),
        )
        if task == "regression":
            model.target_min = float(doc["target_scaler"]["min"])
            model.target_max = float(doc["target_scaler"]["max"])
        if "pairs" in doc:
            model.pairs = [
                PairMachine(
                    label_neg=m["labels"][0],
                    label_pos=m["labels"][1],
                    svs=_parse_matrix(m["svs"]),
                    coefs=np.array([float(v) for v in m["coefs"]], dtype=np.float64),
                    bias=float(m["bias"]),
                )
                for m in doc["pairs"]
            ]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptModelError(f"{path}: malformed model document ({exc})") from exc

    if model.coefs.shape[0] != model.svs.shape[0]:
        raise CorruptModelError(f"{path}: {model.coefs.shape[0]} coefficients for {model.svs.shape[0]} support vectors")
    return model
