"""Command-line interface: ``crtb fit | predict | flag | cv | simulate``.

Input files are delimited numeric text with one header row.  Every command
writes into ``--out-dir``; if a command fails, the files it created are
removed and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, serialize
from .errors import CrtbError
from .estimator import CrtbConfig, CrtbFit, cell_weight_report, fit_crtb, fit_tb
from .modelselect import CvGrid, kfold_cv
from .preprocess import fit_scaler, prefilter, transform
from .robustweights import PsiSpec
from .simlab import (
    PRESETS,
    RECORD_COLUMNS,
    SUMMARY_COLUMNS,
    detection_metrics,
    relative_increase,
    run_study,
    study_from_dict,
    write_csv,
)

log = logging.getLogger("crtb")

METHOD_NAMES = {"tb": "tb_dense", "tb-sparse": "tb_sparse", "crtb": "crtb_dense", "crtb-sparse": "crtb_sparse"}
SPARSE_DEFAULT_ETA = 0.5


class CliError(Exception):
    """A user-facing failure with a message and exit status 1."""


# --------------------------------------------------------------------------- io


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Read a delimited numeric file with a header row.

    The delimiter (comma, tab or semicolon) is detected from the header.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CliError(f"{path} is empty")
    delim = max(",\t;", key=lines[0].count)
    rows = list(csv.reader(lines, delimiter=delim))
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise CliError(f"{path}: header names are not unique")
    if len(rows) < 2:
        raise CliError(f"{path} has a header but no data rows")
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CliError(f"{path} line {i}: expected {len(header)} fields, got {len(row)}")
        try:
            data[i - 2] = [float(v) for v in row]
        except ValueError:
            raise CliError(f"{path} line {i}: non-numeric field") from None
    if not np.all(np.isfinite(data)):
        raise CliError(f"{path} contains non-finite values")
    return header, data


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


class Outputs:
    """Track files written by a command so a failure can remove them."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.created_dir = not self.dir.exists()
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.files.append(p)
        return p

    def table(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return p

    def text(self, name: str, content: str) -> Path:
        p = self.path(name)
        p.write_text(content, encoding="utf-8")
        return p

    def rollback(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        if self.created_dir and self.dir.exists() and not any(self.dir.iterdir()):
            self.dir.rmdir()


# ---------------------------------------------------------------------- config


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_model_flags(p: argparse.ArgumentParser, cv: bool = False) -> None:
    d = CrtbConfig()
    p.add_argument("--method", choices=sorted(METHOD_NAMES), default="crtb-sparse" if cv else "crtb")
    if not cv:
        p.add_argument("--kx", type=int, default=d.k_x, help="X components (default %(default)s)")
        p.add_argument("--ky", type=int, default=d.k_y, help="Y components (default %(default)s)")
        p.add_argument("--eta-x", type=float, default=None, help="X sparsity; default 0 (dense) or 0.5 (sparse)")
        p.add_argument("--eta-y", type=float, default=None, help="Y sparsity; default 0")
    p.add_argument("--centering", choices=("mean", "median"), default=None,
                   help="default mean for tb methods, median for crtb methods")
    p.add_argument("--scaling", choices=("std", "mad", "tau2"), default=None,
                   help="default std for tb methods, mad for crtb methods")
    p.add_argument("--alpha-cell", type=float, default=d.alpha_cell)
    p.add_argument("--psi", choices=("hampel", "huber", "fair", "none"), default=d.psi.family.value)
    p.add_argument("--alphas", type=_floats, default=d.psi.probs, help="three probabilities a1,a2,a3")
    p.add_argument("--calibration", choices=("quantile", "median_ratio"), default=d.psi.calibration.value,
                   help="how chi-square quantiles become psi cutoffs")
    p.add_argument("--tol", type=float, default=d.tol)
    p.add_argument("--max-iter", type=int, default=d.max_iter)


def _config(args, kx=None, ky=None) -> CrtbConfig:
    method = METHOD_NAMES[args.method]
    robust = method.startswith("crtb")
    try:
        psi = PsiSpec(args.psi, tuple(args.alphas), args.calibration)
        return CrtbConfig(
            k_x=kx if kx is not None else args.kx,
            k_y=ky if ky is not None else args.ky,
            location=args.centering or ("median" if robust else "mean"),
            scale=args.scaling or ("mad" if robust else "std"),
            alpha_cell=args.alpha_cell,
            psi=psi,
            tol=args.tol,
            max_iter=args.max_iter,
        )
    except CrtbError as exc:
        raise CliError(str(exc)) from None


def _etas(args) -> tuple[float, float]:
    sparse = args.method.endswith("sparse")
    ex = args.eta_x if args.eta_x is not None else (SPARSE_DEFAULT_ETA if sparse else 0.0)
    ey = args.eta_y if args.eta_y is not None else 0.0
    if not sparse and (ex != 0.0 or ey != 0.0):
        raise CliError(f"--method {args.method} is dense; use {args.method}-sparse for nonzero eta")
    return ex, ey


def _read_pair(x_file, y_file):
    xh, X = read_table(x_file)
    yh, Y = read_table(y_file)
    if X.shape[0] != Y.shape[0]:
        raise CliError(f"row counts differ: {x_file} has {X.shape[0]} rows, {y_file} has {Y.shape[0]}")
    return xh, X, yh, Y


def _truth(path, shape):
    if path is None:
        return None
    h, T = read_table(path)
    if T.shape != shape:
        raise CliError(f"truth mask {path} has shape {T.shape}, expected {shape}")
    if not np.isin(T, (0, 1)).all():
        raise CliError(f"truth mask {path} must be 0/1")
    return T.astype(np.uint8)


# -------------------------------------------------------------------- commands


def cmd_fit(args, out: Outputs) -> None:
    xh, X, yh, Y = _read_pair(args.x_file, args.y_file)
    cfg = _config(args)
    ex, ey = _etas(args)
    method = METHOD_NAMES[args.method]
    if method.startswith("tb"):
        fit = fit_tb(X, Y, cfg.k_x, cfg.k_y, ex, ey, cfg.location, cfg.scale)
    else:
        fit = fit_crtb(X, Y, replace(cfg, eta_x=ex, eta_y=ey))
    meta = {"method": args.method, "x_columns": xh, "y_columns": yh}
    lines = [
        f"method: {args.method}",
        f"n: {X.shape[0]}  p: {X.shape[1]}  q: {Y.shape[1]}",
        f"components: k_x={fit.model.k_x} k_y={fit.model.k_y}",
        f"eta_x: {ex!r}  eta_y: {ey!r}",
        f"selected_x: {int(fit.model.selected_x.sum())} of {X.shape[1]}",
    ]
    if isinstance(fit, CrtbFit):
        _, _, fx, fy = cell_weight_report(fit)
        lines += [
            f"n_iter: {fit.n_iter}",
            f"converged: {fit.converged}",
            f"prefilter_flag_rate_x: {float(np.mean(1 - fit.floor_x))!r}",
            f"prefilter_flag_rate_y: {float(np.mean(1 - fit.floor_y))!r}",
            f"cell_flag_rate_x: {float(np.mean(fx))!r}",
            f"cell_flag_rate_y: {float(np.mean(fy))!r}",
        ]
        for blk, flags, truth_path, shape in (("x", fx, args.truth_x, X.shape), ("y", fy, args.truth_y, Y.shape)):
            truth = _truth(truth_path, shape)
            if truth is not None:
                pr, rc, f1 = detection_metrics(flags, truth)
                lines.append(f"detection_{blk}: precision={pr!r} recall={rc!r} f1={f1!r}")
        out.table("flags_x.csv", xh, fx.tolist())
        out.table("flags_y.csv", yh, fy.tolist())
        out.table("case_weights.csv", ["wx", "wy"], zip(fit.wx.tolist(), fit.wy.tolist()))
    out.table("coefficients.csv", ["variable", *yh], ([name, *row] for name, row in zip(xh, fit.B.tolist())))
    out.text("report.txt", "\n".join(lines) + "\n")
    serialize.save(fit, out.path("model.json"), meta)
    print("\n".join(lines))


def cmd_predict(args, out: Outputs) -> None:
    try:
        fit = serialize.load(args.model_file)
        meta = serialize.load_meta(args.model_file)
    except OSError as exc:
        raise CliError(f"cannot read {args.model_file}: {exc.strerror}") from None
    xh, X = read_table(args.x_file)
    if X.shape[1] != fit.B.shape[0]:
        raise CliError(f"model expects {fit.B.shape[0]} X columns, {args.x_file} has {X.shape[1]}")
    expected = meta.get("x_columns")
    if expected and expected != xh:
        raise CliError(f"X header {xh} does not match the training header {expected}")
    Yhat = fit.predict(X)
    names = meta.get("y_columns") or [f"y{j + 1}" for j in range(Yhat.shape[1])]
    out.table("predictions.csv", names, Yhat.tolist())


def cmd_flag(args, out: Outputs) -> None:
    blocks = [("x", *read_table(args.x_file))]
    if args.y_file:
        blocks.append(("y", *read_table(args.y_file)))
        if blocks[0][2].shape[0] != blocks[1][2].shape[0]:
            raise CliError(
                f"row counts differ: {args.x_file} has {blocks[0][2].shape[0]} rows, "
                f"{args.y_file} has {blocks[1][2].shape[0]}"
            )
    for name, header, Z in blocks:
        s = fit_scaler(Z, args.centering, args.scaling)
        flags = 1 - prefilter(transform(Z, s), args.alpha_cell)
        out.table(f"flags_{name}.csv", header, flags.tolist())
        print(f"{name}: {int(flags.sum())} of {flags.size} cells flagged")


def cmd_cv(args, out: Outputs) -> None:
    xh, X, yh, Y = _read_pair(args.x_file, args.y_file)
    cfg = _config(args, kx=args.kx_grid[0], ky=args.ky_grid[0])
    try:
        grid = CvGrid(args.eta_grid, args.eta_y_grid, args.kx_grid, args.ky_grid, args.folds, args.seed)
    except CrtbError as exc:
        raise CliError(str(exc)) from None
    res = kfold_cv(X, Y, grid, METHOD_NAMES[args.method], cfg)
    out.text("cv_table.csv", res.to_csv())
    best = {**res.best, "method": args.method, "folds": args.folds, "seed": args.seed}
    out.text("cv_best.json", json.dumps(best, indent=1) + "\n")
    for msg in res.errors:
        log.warning("fold failure: %s", msg)
    print(f"best: k_x={best['k_x']} k_y={best['k_y']} eta_x={best['eta_x']!r} eta_y={best['eta_y']!r} "
          f"mean={best['mean']!r}")


def cmd_simulate(args, out: Outputs) -> None:
    if args.scenario:
        try:
            doc = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read {args.scenario}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.scenario} is not valid JSON: {exc}") from None
        study = study_from_dict(doc)
    elif args.preset in PRESETS:
        study = PRESETS[args.preset]
    else:
        raise CliError(f"unknown preset {args.preset!r}; available presets: {', '.join(sorted(PRESETS))}")
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    results = run_study(study, args.replicates, args.seed, workers)
    records = [rec for res in results for rec in res.records]
    summary = [row for res in results for row in res.summary]
    write_csv(records, RECORD_COLUMNS, out.path("records.csv"))
    write_csv(summary, SUMMARY_COLUMNS, out.path("summary.csv"))
    rel = relative_increase(results)
    write_csv(rel, ("method", "level", "mse_b_median", "relative_increase"), out.path("relative_increase.csv"))
    print(f"{study.name}: {len(results)} levels x {len(records) // max(len(results), 1)} records")


# ------------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crtb", description="Cellwise robust twoblock dimension reduction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write the artifact and report")
    p.add_argument("x_file")
    p.add_argument("y_file")
    _add_model_flags(p)
    p.add_argument("--truth-x", help="0/1 truth mask for X cells (scores detection)")
    p.add_argument("--truth-y", help="0/1 truth mask for Y cells")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict Y from a saved model")
    p.add_argument("model_file")
    p.add_argument("x_file")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("flag", help="run the cellwise pre-filter alone")
    p.add_argument("x_file")
    p.add_argument("y_file", nargs="?")
    p.add_argument("--alpha-cell", type=float, default=CrtbConfig().alpha_cell)
    p.add_argument("--centering", choices=("mean", "median"), default="median")
    p.add_argument("--scaling", choices=("std", "mad", "tau2"), default="mad")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_flag)

    p = sub.add_parser("cv", help="k-fold cross-validation over a sparsity/component grid")
    p.add_argument("x_file")
    p.add_argument("y_file")
    _add_model_flags(p, cv=True)
    p.add_argument("--eta-grid", type=_floats, default=CvGrid().eta_x, help="eta_x values")
    p.add_argument("--eta-y-grid", type=_floats, default=CvGrid().eta_y, help="eta_y values")
    p.add_argument("--kx-grid", type=_ints, default=CvGrid().k_x)
    p.add_argument("--ky-grid", type=_ints, default=CvGrid().k_y)
    p.add_argument("--folds", type=int, default=CvGrid().folds)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="run a simulation preset or scenario file")
    p.add_argument("preset", nargs="?", default="cellwise-p30", help=f"one of {', '.join(sorted(PRESETS))}")
    p.add_argument("--scenario", help="JSON scenario file (overrides the preset)")
    p.add_argument("--replicates", type=int, default=None, help="default 50")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="default: all cores")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Outputs(args.out_dir)
    try:
        args.func(args, out)
    except (CliError, CrtbError, np.linalg.LinAlgError) as exc:
        out.rollback()
        print(f"crtb {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        out.rollback()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
