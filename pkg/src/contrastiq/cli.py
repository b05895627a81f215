"""Command-line entry point.

Machine-parseable output goes to stdout, diagnostics to stderr.  Exit codes:
0 success, 1 usage error, 2 I/O error, 3 model or data error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from . import evaluation, features, imgio, svm, synth
from .features import MdmParams
from .pixelops import DegenerateOutputError


class _UsageError(Exception):
    """Semantic command-line misuse not caught by argparse itself."""


class _Parser(argparse.ArgumentParser):
    # the exit-code contract reserves 1 for usage errors; argparse
    # defaults to 2, which is taken by I/O failures
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _g17(v: float) -> str:
    return format(float(v), ".17g")


def _parse_size(text: str) -> tuple[int, int]:
    """'WxH' -> (width, height)."""
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise _UsageError(f"bad size {text!r}, expected WxH")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise _UsageError(f"bad size {text!r}, expected WxH") from None
    if w < 1 or h < 1:
        raise _UsageError(f"bad size {text!r}, dimensions must be positive")
    return w, h


def _parse_number_list(text: str, kind, what: str) -> list:
    try:
        values = [kind(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise _UsageError(f"bad {what} list {text!r}") from None
    if not values:
        raise _UsageError(f"empty {what} list")
    return values


def _mdm_params(args) -> MdmParams:
    try:
        return MdmParams(rho=args.rho, q=args.q)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None


def _fixed_hyper(args, with_epsilon: bool):
    """All of c/gamma(/epsilon) set -> fixed triple; none -> None (grid CV)."""
    given = [args.c is not None, args.gamma is not None]
    if with_epsilon:
        given.append(args.epsilon is not None)
    if not any(given):
        return None
    if not all(given):
        names = "--c, --gamma, --epsilon" if with_epsilon else "--c, --gamma"
        raise _UsageError(f"give all of {names} or none of them")
    if with_epsilon:
        return (args.c, args.gamma, args.epsilon)
    return (args.c, args.gamma)


def _feature_table(rows: list[dict]):
    x = np.array([[r["mdm_d"], r["mdm_dc"], r["entropy"]] for r in rows])
    mos = np.array([r["mos"] for r in rows])
    return x, mos


def _require_labels(rows: list[dict], path: str) -> None:
    if "content_id" not in rows[0]:
        raise ValueError(
            f"{path}: feature file lacks distortion/content_id columns; "
            "re-run extract on a manifest")


# ---------------------------------------------------------------------------
# Subcommand bodies.  Each returns the process exit code.


def _cmd_score(args) -> int:
    img = imgio.load_gray(args.image)
    fv = features.extract(img, _mdm_params(args), use_downsample=not args.no_downsample)
    lines = [f"mdm_d,{_g17(fv.mdm_d)}",
             f"mdm_dc,{_g17(fv.mdm_dc)}",
             f"entropy,{_g17(fv.entropy_bits)}"]
    if args.model is not None:
        model = svm.load_model(args.model)
        if model.task == "regression":
            lines.append(f"quality,{_g17(svm.predict_mos(model, fv))}")
        else:
            lines.append(f"label,{svm.predict_label(model, fv)}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _cmd_extract(args) -> int:
    manifest = imgio.parse_manifest(args.manifest)
    params = _mdm_params(args)
    paths = [manifest.resolve(r) for r in manifest.records]
    table = features.extract_batch(paths, params,
                                   use_downsample=not args.no_downsample,
                                   jobs=args.jobs)
    rows = []
    for rec, feat in zip(manifest.records, table):
        rows.append({
            "path": rec.image_path,
            "mdm_d": float(feat[0]),
            "mdm_dc": float(feat[1]),
            "entropy": float(feat[2]),
            "mos": rec.mos,
            "distortion": rec.distortion,
            "content_id": rec.content_id,
        })
    features.write_feature_csv(args.out, rows)
    sys.stderr.write(f"wrote {len(rows)} feature rows to {args.out}\n")
    return 0


def _cmd_train(args) -> int:
    rows = features.read_feature_csv(args.features)
    x, mos = _feature_table(rows)
    hyper = _fixed_hyper(args, with_epsilon=True)
    if hyper is None:
        _require_labels(rows, args.features)
        contents = [r["content_id"] for r in rows]
        best = svm.grid_search(x, mos, contents, task="regression",
                               folds=min(5, len(set(contents))))
        hyper = (best.c, best.gamma, best.epsilon)
        sys.stderr.write(
            f"grid search picked c={hyper[0]:g} gamma={hyper[1]:g} epsilon={hyper[2]:g}\n")
    model = svm.train_svr(x, mos, c=hyper[0], gamma=hyper[1], epsilon=hyper[2])
    svm.save_model(model, args.out)
    sys.stderr.write(f"wrote regression model to {args.out}\n")
    return 0


def _cmd_classify_train(args) -> int:
    rows = features.read_feature_csv(args.features)
    _require_labels(rows, args.features)
    x, _ = _feature_table(rows)
    labels = [r["distortion"] for r in rows]
    hyper = _fixed_hyper(args, with_epsilon=False)
    if hyper is None:
        contents = [r["content_id"] for r in rows]
        best = svm.grid_search(x, labels, contents, task="classification",
                               folds=min(5, len(set(contents))))
        hyper = (best.c, best.gamma)
        sys.stderr.write(f"grid search picked c={hyper[0]:g} gamma={hyper[1]:g}\n")
    model = svm.train_svc(x, labels, c=hyper[0], gamma=hyper[1])
    svm.save_model(model, args.out)
    sys.stderr.write(f"wrote classification model to {args.out}\n")
    return 0


def _cmd_classify(args) -> int:
    model = svm.load_model(args.model)
    params = _mdm_params(args)
    out = []
    for path in args.images:
        img = imgio.load_gray(path)
        fv = features.extract(img, params, use_downsample=not args.no_downsample)
        out.append(f"{path},{svm.predict_label(model, fv)}")
    sys.stdout.write("\n".join(out) + "\n")
    return 0


def _cmd_eval(args) -> int:
    manifest = imgio.parse_manifest(args.manifest)
    split = evaluation.SplitSpec(train_frac=args.train_frac,
                                 repetitions=args.reps, seed=args.seed)
    hyper = _fixed_hyper(args, with_epsilon=True)
    report = evaluation.run_protocol(
        manifest, _mdm_params(args), split, hyper,
        use_downsample=not args.no_downsample, jobs=args.jobs)
    lines = ["metric,value",
             f"median_src,{_g17(report.median_src)}",
             f"median_pcc,{_g17(report.median_pcc)}",
             f"reps_used,{report.reps_used}",
             f"reps_skipped,{report.reps_skipped}"]
    sys.stdout.write("\n".join(lines) + "\n")
    if args.dump_reps is not None:
        with open(args.dump_reps, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rep", "src", "pcc"])
            for rep, src, pcc in report.per_rep:
                writer.writerow([rep, _g17(src), _g17(pcc)])
    return 0


def _cmd_sweep(args) -> int:
    manifest = imgio.parse_manifest(args.manifest)
    rho_grid = _parse_number_list(args.rho_grid, int, "rho")
    q_grid = _parse_number_list(args.q_grid, int, "q")
    split = evaluation.SplitSpec(train_frac=args.train_frac,
                                 repetitions=args.reps, seed=args.seed)
    hyper = _fixed_hyper(args, with_epsilon=True)
    rows = evaluation.sweep(manifest, rho_grid, q_grid, split, hyper,
                            use_downsample=not args.no_downsample, jobs=args.jobs)
    lines = ["rho,q,src,pcc"]
    for row in rows:
        lines.append(f"{row.rho},{row.q},{_g17(row.median_src)},{_g17(row.median_pcc)}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _cmd_synth(args) -> int:
    w, h = _parse_size(args.size)
    levels = _parse_number_list(args.levels, float, "severity")
    sources = synth.generate_sources(args.contents, height=h, width=w, seed=args.seed)
    manifest = synth.make_dataset(sources, args.out, levels=levels)
    sys.stdout.write(f"manifest,{args.out}/manifest.csv\nrecords,{len(manifest)}\n")
    return 0


def _cmd_bench(args) -> int:
    params = _mdm_params(args)
    sizes = [_parse_size(tok) for tok in args.sizes.split(",") if tok.strip()]
    if not sizes:
        raise _UsageError("empty size list")
    if args.reps < 1:
        raise _UsageError(f"--reps must be >= 1, got {args.reps}")
    lines = ["size,median_ms"]
    for w, h in sizes:
        rng = np.random.default_rng([np.uint32(args.seed), np.uint32(w), np.uint32(h)])
        img = imgio.GrayImage(rng.random((h, w)))
        features.extract(img, params, use_downsample=not args.no_downsample)  # warm-up
        samples = []
        for _ in range(args.reps):
            t0 = time.perf_counter()
            features.extract(img, params, use_downsample=not args.no_downsample)
            samples.append((time.perf_counter() - t0) * 1000.0)
        lines.append(f"{w}x{h},{format(float(np.median(samples)), '.6g')}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly.


def _add_mdm_flags(p) -> None:
    p.add_argument("--rho", type=int, default=features.DEFAULT_RHO,
                   help="deviation order (default %(default)s)")
    p.add_argument("--q", type=int, default=features.DEFAULT_Q,
                   help="power-law exponent (default %(default)s)")
    p.add_argument("--no-downsample", action="store_true",
                   help="skip block-average downsampling")


def _add_hyper_flags(p, with_epsilon: bool) -> None:
    p.add_argument("--c", type=float, default=None, help="box constraint")
    p.add_argument("--gamma", type=float, default=None, help="RBF width")
    if with_epsilon:
        p.add_argument("--epsilon", type=float, default=None, help="regression tube")


def _add_protocol_flags(p) -> None:
    p.add_argument("--reps", type=int, default=1000,
                   help="split repetitions (default %(default)s)")
    p.add_argument("--train-frac", type=float, default=0.8,
                   help="fraction of contents used for training (default %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default %(default)s)")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes (default %(default)s)")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contrastiq",
                     description="No-reference contrast-distortion quality toolbox.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("score", help="print features (and model outputs) for one image")
    p.add_argument("image")
    _add_mdm_flags(p)
    p.add_argument("--model", default=None, help="apply a trained model as well")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("extract", help="feature CSV for every manifest row")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_mdm_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train", help="fit the quality regressor from a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    _add_hyper_flags(p, with_epsilon=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("classify-train", help="fit the distortion classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    _add_hyper_flags(p, with_epsilon=False)
    p.set_defaults(func=_cmd_classify_train)

    p = sub.add_parser("classify", help="label images with a classification model")
    p.add_argument("--model", required=True)
    p.add_argument("images", nargs="+")
    _add_mdm_flags(p)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("eval", help="repeated content-disjoint protocol on a manifest")
    p.add_argument("--manifest", required=True)
    _add_mdm_flags(p)
    _add_hyper_flags(p, with_epsilon=True)
    _add_protocol_flags(p)
    p.add_argument("--dump-reps", default=None, help="write per-repetition CSV here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="protocol medians over a rho/q grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rho-grid", required=True, help="comma-separated rho values")
    p.add_argument("--q-grid", required=True, help="comma-separated q values")
    p.add_argument("--no-downsample", action="store_true")
    _add_hyper_flags(p, with_epsilon=True)
    _add_protocol_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("synth", help="generate the synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--contents", type=int, default=20,
                   help="number of source scenes (default %(default)s)")
    p.add_argument("--size", default="64x64", help="scene size WxH (default %(default)s)")
    p.add_argument("--levels", default=",".join(str(v) for v in synth.DEFAULT_LEVELS),
                   help="comma-separated severities (default %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("bench", help="time feature extraction on random images")
    p.add_argument("--sizes", default="384x512,2160x3840",
                   help="comma-separated WxH sizes (default %(default)s)")
    p.add_argument("--reps", type=int, default=5,
                   help="timing repetitions per size (default %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    _add_mdm_flags(p)
    p.set_defaults(func=_cmd_bench)

    return parser


_IO_ERRORS = (OSError, imgio.ImageError, imgio.ManifestError)
_MODEL_ERRORS = (
    svm.TooFewSamplesError, svm.SingleClassError, svm.TaskMismatchError,
    svm.SchemaVersionMismatchError, svm.CorruptModelError,
    evaluation.ZeroVarianceError, evaluation.DegenerateInputError,
    DegenerateOutputError, ValueError,
)


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except _UsageError as exc:
        sys.stderr.write(f"contrastiq: error: {exc}\n")
        return 1
    except _IO_ERRORS as exc:
        sys.stderr.write(f"contrastiq: i/o error: {exc}\n")
        return 2
    except _MODEL_ERRORS as exc:
        sys.stderr.write(f"contrastiq: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
