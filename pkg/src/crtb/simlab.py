"""Simulation laboratory: latent-variable data, signal-targeted cellwise and
rowwise contamination, accuracy / selection / detection metrics, and the
replicated scenario runner.

Randomness uses numpy's PCG64 bit generator.  A master seed is expanded
with :class:`numpy.random.SeedSequence`; replicate ``r`` uses child ``r``,
which splits further into a data stream and a contamination stream, so a
replicate reproduces independently of how many others are run and of the
order in which they finish.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import CrtbError, InvalidInputError
from .estimator import CrtbConfig, fit_crtb, fit_tb
from .modelselect import CvGrid, kfold_cv

log = logging.getLogger(__name__)

METHODS = ("tb_dense", "crtb_dense", "tb_sparse", "crtb_sparse")

RECORD_COLUMNS = (
    "replicate",
    "method",
    "regime",
    "cell_pct",
    "row_pct",
    "p",
    "mse_b",
    "sel_precision",
    "sel_recall",
    "sel_f1",
    "det_precision_x",
    "det_recall_x",
    "det_f1_x",
    "det_precision_y",
    "det_recall_y",
    "det_f1_y",
    "eta_chosen",
    "n_iter",
    "converged",
    "error",
)


@dataclass(frozen=True)
class DgpParams:
    n: int = 100
    k: int = 3
    q: int = 4
    p_signal: int = 20
    p_noise: int = 10
    sigma_e: float = 0.5
    sigma_f: float = 0.5
    seed: int | None = 0

    def __post_init__(self):
        for name in ("n", "k", "q", "p_signal"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be positive")
        if self.p_noise < 0 or self.sigma_e <= 0 or self.sigma_f <= 0:
            raise InvalidInputError("p_noise must be >= 0 and noise scales positive")
        if self.k > self.p_signal:
            raise InvalidInputError("latent dimension exceeds the number of signal variables")

    @property
    def p(self) -> int:
        return self.p_signal + self.p_noise


@dataclass(frozen=True)
class ContaminationSpec:
    regime: str = "cellwise"
    row_rate: float = 0.70
    cell_pct: float = 0.0
    row_pct: float = 0.0
    delta: float = 10.0
    seed: int | None = 0

    def __post_init__(self):
        if self.regime not in ("cellwise", "rowwise"):
            raise InvalidInputError(f"unknown contamination regime {self.regime!r}")
        for name in ("row_rate", "cell_pct", "row_pct"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1]")
        if not math.isfinite(self.delta):
            raise InvalidInputError("delta must be finite")


def _count(rate: float, n: int) -> int:
    # round first: 0.7 * 100 is 70.00000000000001 in floating point
    return min(n, math.ceil(round(rate * n, 9)))


def generate_dgp(params: DgpParams, rng: np.random.Generator | None = None):
    """Draw ``(X, Y, B_true, P_signal, C)`` from the latent-variable model.

    ``X = [T P' + E, noise]`` and ``Y = T C + F``.  ``B_true`` is the
    population best linear predictor, ``P C / (1 + sigma_e^2)`` on the
    signal rows and zero on the noise rows.
    """
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    n, k, q, ps, pn = params.n, params.k, params.q, params.p_signal, params.p_noise
    T = rng.standard_normal((n, k))
    P_signal, _ = np.linalg.qr(rng.standard_normal((ps, k)))
    C = rng.standard_normal((k, q))
    E = params.sigma_e * rng.standard_normal((n, ps))
    noise = params.sigma_e * rng.standard_normal((n, pn))
    F = params.sigma_f * rng.standard_normal((n, q))
    X = np.hstack([T @ P_signal.T + E, noise])
    Y = T @ C + F
    B_true = np.vstack([P_signal @ C / (1.0 + params.sigma_e**2), np.zeros((pn, q))])
    return X, Y, B_true, P_signal, C


def contaminate_cellwise(X, Y, spec: ContaminationSpec, p_signal: int, rng: np.random.Generator | None = None):
    """Add ``+delta`` to randomly chosen signal-X and Y cells.

    ``ceil(row_rate * n)`` rows are affected.  In each, the number of
    contaminated signal-X cells is Poisson(cell_pct * p_signal) truncated to
    [1, p_signal] and the number of Y cells Poisson(cell_pct * q) truncated
    to [1, q].  With ``cell_pct == 0`` nothing is changed.

    Returns ``(Xc, Yc, truth_x, truth_y)``; truth marks contaminated cells
    with 1.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    X, Y = np.array(X, dtype=float), np.array(Y, dtype=float)
    n, q = Y.shape
    truth_x = np.zeros(X.shape, dtype=np.uint8)
    truth_y = np.zeros(Y.shape, dtype=np.uint8)
    if spec.cell_pct == 0.0 or spec.row_rate == 0.0:
        return X, Y, truth_x, truth_y
    rows = np.sort(rng.choice(n, _count(spec.row_rate, n), replace=False))
    lam_x, lam_y = spec.cell_pct * p_signal, spec.cell_pct * q
    for i in rows:
        kx = int(np.clip(rng.poisson(lam_x), 1, p_signal))
        truth_x[i, rng.choice(p_signal, kx, replace=False)] = 1
        ky = int(np.clip(rng.poisson(lam_y), 1, q))
        truth_y[i, rng.choice(q, ky, replace=False)] = 1
    X += spec.delta * truth_x
    Y += spec.delta * truth_y
    return X, Y, truth_x, truth_y


def contaminate_rowwise(X, Y, spec: ContaminationSpec, p_signal: int, rng: np.random.Generator | None = None):
    """Shift ``ceil(row_pct * n)`` whole rows by ``+delta`` on every signal-X
    and every Y column.

    Returns ``(Xc, Yc, truth_rows, truth_x, truth_y)``.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    X, Y = np.array(X, dtype=float), np.array(Y, dtype=float)
    n = X.shape[0]
    truth_rows = np.zeros(n, dtype=np.uint8)
    rows = rng.choice(n, _count(spec.row_pct, n), replace=False)
    truth_rows[rows] = 1
    truth_x = np.zeros(X.shape, dtype=np.uint8)
    truth_x[rows, :p_signal] = 1
    truth_y = np.zeros(Y.shape, dtype=np.uint8)
    truth_y[rows] = 1
    X += spec.delta * truth_x
    Y += spec.delta * truth_y
    return X, Y, truth_rows, truth_x, truth_y


def mse_B(B_hat, B_true) -> float:
    B_hat, B_true = np.asarray(B_hat, dtype=float), np.asarray(B_true, dtype=float)
    if B_hat.shape != B_true.shape:
        raise InvalidInputError(f"shape mismatch {B_hat.shape} vs {B_true.shape}")
    return float(np.sum((B_hat - B_true) ** 2) / B_hat.size)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if tp == 0:
        return 0.0, 0.0, 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return precision, recall, 2 * precision * recall / (precision + recall)


def confusion_metrics(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1 from confusion counts (all 0 when TP = 0)."""
    return _prf(int(tp), int(fp), int(fn))


def detection_metrics(flagged, truth) -> tuple[float, float, float]:
    """Precision, recall and F1 of binary ``flagged`` against ``truth``
    (cells, or rows when given indicator vectors)."""
    flagged, truth = np.asarray(flagged).astype(bool), np.asarray(truth).astype(bool)
    if flagged.shape != truth.shape:
        raise InvalidInputError(f"shape mismatch {flagged.shape} vs {truth.shape}")
    tp = int(np.sum(flagged & truth))
    fp = int(np.sum(flagged & ~truth))
    fn = int(np.sum(~flagged & truth))
    return _prf(tp, fp, fn)


def selection_f1(model, p_signal: int, p_noise: int) -> tuple[float, float, float]:
    """Variable-selection precision/recall/F1 with signal variables
    ``0 .. p_signal - 1``; a variable is selected when any of its weights is
    nonzero."""
    W = model.W if hasattr(model, "W") else np.asarray(model)
    if W.shape[0] != p_signal + p_noise:
        raise InvalidInputError("weight matrix rows do not match p_signal + p_noise")
    selected = np.any(W != 0, axis=1)
    if not selected.any():
        warnings.warn("no variable selected", RuntimeWarning, stacklevel=2)
        return 0.0, 0.0, 0.0
    truth = np.zeros(W.shape[0], dtype=bool)
    truth[:p_signal] = True
    return detection_metrics(selected, truth)


@dataclass
class ScenarioResult:
    """Per-replicate records (one per replicate and method) and a per-method
    summary."""

    dgp: DgpParams
    contamination: ContaminationSpec
    records: list[dict]
    summary: list[dict] = field(default_factory=list)

    def records_csv(self, path=None) -> str:
        return write_csv(self.records, RECORD_COLUMNS, path)

    def summary_csv(self, path=None) -> str:
        return write_csv(self.summary, SUMMARY_COLUMNS, path)


SUMMARY_COLUMNS = (
    "method",
    "regime",
    "cell_pct",
    "row_pct",
    "p",
    "n_ok",
    "mse_b_mean",
    "mse_b_sd",
    "mse_b_median",
    "sel_f1_mean",
    "sel_f1_sd",
    "det_f1_x_mean",
    "det_f1_x_sd",
    "det_f1_y_mean",
    "det_f1_y_sd",
    "n_iter_mean",
    "converged_rate",
)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(rows, columns, path=None) -> str:
    """Write dict rows as delimited text with round-trip float precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def replicate_streams(seed: int, replicate: int, replicates: int):
    """Data, contamination and CV seed sequences for one replicate."""
    child = np.random.SeedSequence(seed).spawn(replicates)[replicate]
    return tuple(child.spawn(3))


def _blank_record(r: int, method: str, dgp: DgpParams, spec: ContaminationSpec) -> dict:
    rec = {c: math.nan for c in RECORD_COLUMNS}
    rec.update(
        replicate=r,
        method=method,
        regime=spec.regime,
        cell_pct=spec.cell_pct,
        row_pct=spec.row_pct,
        p=dgp.p,
        n_iter=0,
        converged=False,
        error="",
    )
    return rec


def _fit_method(method, Xc, Yc, dgp, cfg, grid, tb_sparse_eta, cv_seed):
    """Fit one method; returns (fit, chosen eta or nan)."""
    k = dgp.k
    if method == "tb_dense":
        return fit_tb(Xc, Yc, k, k), math.nan
    if method == "crtb_dense":
        return fit_crtb(Xc, Yc, replace(cfg, k_x=k, k_y=k, eta_x=0.0, eta_y=0.0)), math.nan
    g = replace(grid, k_x=(k,), k_y=(k,), seed=cv_seed)
    if method == "tb_sparse":
        if tb_sparse_eta is None:
            eta = kfold_cv(Xc, Yc, g, "tb_sparse", cfg).best["eta_x"]
        else:
            eta = tb_sparse_eta
        return fit_tb(Xc, Yc, k, k, eta, 0.0), eta
    if method == "crtb_sparse":
        best = kfold_cv(Xc, Yc, g, "crtb_sparse", replace(cfg, k_x=k, k_y=k)).best
        fit = fit_crtb(Xc, Yc, replace(cfg, k_x=k, k_y=k, eta_x=best["eta_x"], eta_y=best["eta_y"]))
        return fit, best["eta_x"]
    raise InvalidInputError(f"unknown method {method!r}; choose from {METHODS}")


def run_replicate(r, dgp, spec, methods, replicates, seed, cfg, grid, tb_sparse_eta) -> list[dict]:
    """All method records for replicate ``r``; failures are recorded, not raised."""
    s_data, s_cont, s_cv = replicate_streams(seed, r, replicates)
    X, Y, B_true, _, _ = generate_dgp(dgp, np.random.default_rng(s_data))
    rng_c = np.random.default_rng(s_cont)
    if spec.regime == "cellwise":
        Xc, Yc, truth_x, truth_y = contaminate_cellwise(X, Y, spec, dgp.p_signal, rng_c)
    else:
        Xc, Yc, _, truth_x, truth_y = contaminate_rowwise(X, Y, spec, dgp.p_signal, rng_c)
    has_truth = bool(truth_x.any() or truth_y.any())
    cv_seed = int(s_cv.generate_state(1)[0])
    out = []
    for method in methods:
        rec = _blank_record(r, method, dgp, spec)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit, eta = _fit_method(method, Xc, Yc, dgp, cfg, grid, tb_sparse_eta, cv_seed)
                rec["mse_b"] = mse_B(fit.B, B_true)
                rec["eta_chosen"] = eta
                if method.endswith("sparse"):
                    sp, sr, sf = selection_f1(fit.model, dgp.p_signal, dgp.p_noise)
                    rec.update(sel_precision=sp, sel_recall=sr, sel_f1=sf)
            if method.startswith("crtb"):
                rec["n_iter"], rec["converged"] = fit.n_iter, fit.converged
                if has_truth:
                    for blk, floor, truth in (("x", fit.floor_x, truth_x), ("y", fit.floor_y, truth_y)):
                        dp, dr, df = detection_metrics(1 - floor, truth)
                        rec.update({f"det_precision_{blk}": dp, f"det_recall_{blk}": dr, f"det_f1_{blk}": df})
            else:
                rec["n_iter"], rec["converged"] = 1, True
        except (CrtbError, np.linalg.LinAlgError) as exc:
            log.info("replicate %d method %s failed: %s", r, method, exc)
            rec["error"] = f"{type(exc).__name__}: {exc}"
        out.append(rec)
    return out


def _stats(values) -> tuple[float, float, float]:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    sd = float(np.std(v, ddof=1)) if v.size > 1 else math.nan
    return float(np.mean(v)), sd, float(np.median(v))


def summarise(records, methods=METHODS) -> list[dict]:
    rows = []
    for method in methods:
        rs = [r for r in records if r["method"] == method]
        if not rs:
            continue
        ok = [r for r in rs if not r["error"]]
        mse = _stats(r["mse_b"] for r in ok)
        sel = _stats(r["sel_f1"] for r in ok)
        dx = _stats(r["det_f1_x"] for r in ok)
        dy = _stats(r["det_f1_y"] for r in ok)
        rows.append(
            {
                "method": method,
                "regime": rs[0]["regime"],
                "cell_pct": rs[0]["cell_pct"],
                "row_pct": rs[0]["row_pct"],
                "p": rs[0]["p"],
                "n_ok": len(ok),
                "mse_b_mean": mse[0],
                "mse_b_sd": mse[1],
                "mse_b_median": mse[2],
                "sel_f1_mean": sel[0],
                "sel_f1_sd": sel[1],
                "det_f1_x_mean": dx[0],
                "det_f1_x_sd": dx[1],
                "det_f1_y_mean": dy[0],
                "det_f1_y_sd": dy[1],
                "n_iter_mean": float(np.mean([r["n_iter"] for r in ok])) if ok else math.nan,
                "converged_rate": float(np.mean([r["converged"] for r in ok])) if ok else math.nan,
            }
        )
    return rows


def run_scenario(
    dgp: DgpParams,
    spec: ContaminationSpec,
    methods=METHODS,
    replicates: int = 50,
    seed: int = 0,
    cfg: CrtbConfig | None = None,
    grid: CvGrid | None = None,
    tb_sparse_eta: float | None = 0.5,
    workers: int = 1,
) -> ScenarioResult:
    """Replicated comparison of the methods on one data/contamination setting.

    Replicate ``r`` draws its data, contamination and CV folds from child
    ``r`` of ``SeedSequence(seed)``, so records are identical whatever the
    worker count.  ``tb_sparse_eta=None`` selects TB-sparse's eta by CV
    instead of fixing it.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise InvalidInputError(f"unknown method {m!r}; choose from {METHODS}")
    if replicates < 1:
        raise InvalidInputError("replicates must be at least 1")
    cfg = cfg or CrtbConfig()
    grid = grid or CvGrid()
    args = (dgp, spec, methods, replicates, seed, cfg, grid, tb_sparse_eta)
    if workers is None or workers <= 0:
        workers = os.cpu_count() or 1
    if workers == 1 or replicates == 1:
        chunks = [run_replicate(r, *args) for r in range(replicates)]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, replicates)) as pool:
            futures = [pool.submit(run_replicate, r, *args) for r in range(replicates)]
            chunks = [f.result() for f in futures]
    order = {m: i for i, m in enumerate(methods)}
    records = sorted((rec for chunk in chunks for rec in chunk), key=lambda d: (d["replicate"], order[d["method"]]))
    return ScenarioResult(dgp, spec, records, summarise(records, methods))


@dataclass(frozen=True)
class Study:
    """A named family of scenarios sharing data settings and a master seed.

    Each grid point reuses the master seed, so the same underlying data are
    contaminated at every level (common random numbers).
    """

    name: str
    dgp: DgpParams
    regime: str
    levels: tuple[float, ...]
    methods: tuple[str, ...] = METHODS
    replicates: int = 50
    seed: int = 0
    row_rate: float = 0.70
    delta: float = 10.0
    tb_sparse_eta: float | None = 0.5

    def specs(self) -> list[ContaminationSpec]:
        if self.regime == "cellwise":
            return [ContaminationSpec("cellwise", self.row_rate, lvl, 0.0, self.delta) for lvl in self.levels]
        return [ContaminationSpec("rowwise", self.row_rate, 0.0, lvl, self.delta) for lvl in self.levels]


def _grid(stop: float) -> tuple[float, ...]:
    return tuple(round(0.05 * i, 2) for i in range(int(round(stop / 0.05)) + 1))


PRESETS = {
    "cellwise-p30": Study("cellwise-p30", DgpParams(p_noise=10), "cellwise", _grid(0.20)),
    "cellwise-p100": Study("cellwise-p100", DgpParams(p_noise=80), "cellwise", _grid(0.20)),
    "rowwise-p30": Study("rowwise-p30", DgpParams(p_noise=10), "rowwise", _grid(0.25)),
    "sweep-p100": Study(
        "sweep-p100", DgpParams(p_noise=80), "cellwise", _grid(0.35), methods=("tb_dense", "crtb_dense")
    ),
}


def study_from_dict(doc: dict) -> Study:
    """Build a :class:`Study` from a parsed scenario file.

    Recognised keys: ``name``, ``dgp`` (DgpParams fields), ``regime``,
    ``levels``, ``methods``, ``replicates``, ``seed``, ``row_rate``,
    ``delta``, ``tb_sparse_eta`` (null for CV).  A ``preset`` key starts
    from that preset and overrides the given fields.
    """
    doc = dict(doc)
    if "preset" in doc:
        name = doc.pop("preset")
        if name not in PRESETS:
            raise InvalidInputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        base = asdict(PRESETS[name])
    else:
        base = {}
    dgp = {**base.pop("dgp", {}), **doc.pop("dgp", {})}
    merged = {**base, **doc}
    unknown = set(merged) - set(Study.__dataclass_fields__)
    if unknown:
        raise InvalidInputError(f"unknown scenario keys {sorted(unknown)}")
    merged.setdefault("name", "custom")
    merged["levels"] = tuple(float(v) for v in merged.get("levels", (0.0,)))
    merged["methods"] = tuple(merged.get("methods", METHODS))
    if "regime" not in merged:
        raise InvalidInputError("scenario needs a regime")
    try:
        return Study(dgp=DgpParams(**dgp), **merged)
    except TypeError as exc:
        raise InvalidInputError(f"bad scenario: {exc}") from None


def run_study(study: Study, replicates: int | None = None, seed: int | None = None, workers: int = 1, cfg=None):
    """Run every grid point of ``study``; returns a list of ScenarioResult."""
    reps = study.replicates if replicates is None else replicates
    sd = study.seed if seed is None else seed
    return [
        run_scenario(study.dgp, spec, study.methods, reps, sd, cfg, None, study.tb_sparse_eta, workers)
        for spec in study.specs()
    ]


def relative_increase(results: list[ScenarioResult]) -> list[dict]:
    """Median MSE(B) at each level relative to the level-0 median, per method.

    Requires the first result to be the uncontaminated setting.
    """
    base = {row["method"]: row["mse_b_median"] for row in results[0].summary}
    rows = []
    for res in results:
        for row in res.summary:
            rows.append(
                {
                    "method": row["method"],
                    "level": res.contamination.cell_pct
                    if res.contamination.regime == "cellwise"
                    else res.contamination.row_pct,
                    "mse_b_median": row["mse_b_median"],
                    "relative_increase": row["mse_b_median"] / base[row["method"]],
                }
            )
    return rows
