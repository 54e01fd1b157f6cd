"""Experiment harnesses: block-norm concentration sweeps, decay-rate fits over
the class count, structure metrics on full Hessians, and Adam training traces.

Cases:
  linear_ce   - linear model, CE loss, output blocks (v0,v0) vs (v0,v1)
  mlp_ce_ww   - MLP CE hidden blocks (w0,w0) vs (w0,w1)
  mlp_mse_ww  - MLP squared-loss hidden blocks (Frobenius norms divided by the
                factor-2 convention so they compare to u, which is stated
                without it)
  mlp_ce_vv   - MLP CE output blocks

Report rows carry the fixed CSV schema
  case,C,trial,H11,H12,r,Htilde11,Htilde12,rtilde
with the columns not applicable to a case left as NaN.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import hessian as hk
from . import limits as lim
from .models import forward, grad, loss, softmax
from .randkit import Dataset, ModelParams, RngStream, gen_gaussian_dataset, lecun_init

CASES = ("linear_ce", "mlp_ce_ww", "mlp_mse_ww", "mlp_ce_vv")


class BudgetExceededError(RuntimeError):
    pass


class DegenerateFitError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


class LayoutMismatchError(ValueError):
    pass


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("HLAB_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, threads: Optional[int]):
    n = default_threads() if threads is None else max(1, threads)
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass
class ConcentrationRow:
    case: str
    C: int
    trial: int
    H11: float = math.nan
    H12: float = math.nan
    r: float = math.nan
    Htilde11: float = math.nan
    Htilde12: float = math.nan
    rtilde: float = math.nan


@dataclass
class ConcentrationSummary:
    case: str
    C: int
    trials: int
    mean_H11: float
    se_H11: float
    mean_H12: float
    se_H12: float
    theory_H11: Optional[lim.LimitEstimate] = None
    theory_H12: Optional[lim.LimitEstimate] = None
    limit_H11: Optional[lim.LimitEstimate] = None
    limit_H12: Optional[lim.LimitEstimate] = None


def _trial_row(case: str, d: int, N: int, C: int, m: int, trial: int,
               stream: RngStream) -> ConcentrationRow:
    data = gen_gaussian_dataset(d, N, C, stream.child("data"))
    if case == "linear_ce":
        params = lecun_init("linear", d, None, C, stream.child("init"))
        cache = hk._Cache(params, data, "ce")
        b11 = hk.block_fro_sq(hk.hessian_block_linear(params, data, "ce", 0, 0, cache=cache).M)
        b12 = hk.block_fro_sq(hk.hessian_block_linear(params, data, "ce", 0, 1, cache=cache).M)
        return ConcentrationRow(case, C, trial, H11=C**2 * b11 / d, H12=C**4 * b12 / d,
                                r=b12 / b11)
    params = lecun_init("mlp", d, m, C, stream.child("init"))
    if case == "mlp_ce_vv":
        cache = hk._Cache(params, data, "ce")
        b11 = hk.block_fro_sq(hk.hessian_block_mlp_vv(params, data, "ce", 0, 0, cache=cache).M)
        b12 = hk.block_fro_sq(hk.hessian_block_mlp_vv(params, data, "ce", 0, 1, cache=cache).M)
        return ConcentrationRow(case, C, trial, H11=C**2 * b11, H12=C**4 * b12, r=b12 / b11)
    loss_kind = "ce" if case == "mlp_ce_ww" else "mse"
    cache = hk._Cache(params, data, loss_kind)
    t11 = hk.block_fro_sq(hk.hessian_block_mlp_ww(params, data, loss_kind, 0, 0, cache=cache).M)
    t12 = hk.block_fro_sq(hk.hessian_block_mlp_ww(params, data, loss_kind, 0, 1, cache=cache).M)
    t22 = hk.block_fro_sq(hk.hessian_block_mlp_ww(params, data, loss_kind, 1, 1, cache=cache).M)
    if loss_kind == "mse":
        # strip the squared-loss factor 2; u is stated without it
        t11 /= 4.0
        t12 /= 4.0
        t22 /= 4.0
    return ConcentrationRow(case, C, trial, Htilde11=t11 / d, Htilde12=C * t12 / d,
                            rtilde=t12 / t22)


def _theory_for(case: str, gamma: float, C: int, m: int, rng: RngStream,
                n_mc: int):
    """(finite-C theory, large-C limit) pairs at the report scalings."""
    if case == "linear_ce":
        g_ii = lim.eval_g(gamma, C, "ii", n_mc, rng.child("th-ii"))
        g_ij = lim.eval_g(gamma, C, "ij", n_mc, rng.child("th-ij"))
        t11 = lim.LimitEstimate("C^2*g_ii", C**2 * g_ii.value, C**2 * g_ii.std_error,
                                g_ii.method, g_ii.n_samples, g_ii.parameters)
        t12 = lim.LimitEstimate("C^4*g_ij", C**4 * g_ij.value, C**4 * g_ij.std_error,
                                g_ij.method, g_ij.n_samples, g_ij.parameters)
        return t11, t12, lim.eval_g(gamma, C, "ii", limit=True), lim.eval_g(gamma, C, "ij", limit=True)
    if case == "mlp_ce_vv":
        q_ii = lim.eval_q(gamma, C, m, "ii", n_mc, rng.child("th-ii"))
        q_ij = lim.eval_q(gamma, C, m, "ij", n_mc, rng.child("th-ij"))
        t11 = lim.LimitEstimate("C^2*q_ii", C**2 * q_ii.value, C**2 * q_ii.std_error,
                                q_ii.method, q_ii.n_samples, q_ii.parameters)
        t12 = lim.LimitEstimate("C^4*q_ij", C**4 * q_ij.value, C**4 * q_ij.std_error,
                                q_ij.method, q_ij.n_samples, q_ij.parameters)
        return t11, t12, lim.eval_q(gamma, C, m, "ii", limit=True), lim.eval_q(gamma, C, m, "ij", limit=True)
    if case == "mlp_ce_ww":
        h_ii = lim.eval_h(gamma, C, m, "ii", n_mc, rng.child("th-ii"))
        h_ij = lim.eval_h(gamma, C, m, "ij", n_mc, rng.child("th-ij"))
        t12 = lim.LimitEstimate("C*h_ij", C * h_ij.value, C * h_ij.std_error,
                                h_ij.method, h_ij.n_samples, h_ij.parameters)
        return h_ii, t12, lim.eval_h(gamma, C, m, "ii", limit=True), lim.eval_h(gamma, C, m, "ij", limit=True)
    u_ii = lim.eval_u(gamma, C, m, "ii")
    u_ij = lim.eval_u(gamma, C, m, "ij")
    t12 = lim.LimitEstimate("C*u_ij", C * u_ij.value, 0.0, "closed_form", parameters=u_ij.parameters)
    return u_ii, t12, lim.eval_u(gamma, C, m, "ii", limit=True), lim.eval_u(gamma, C, m, "ij", limit=True)


def concentration_sweep(case: str, d: int, N: int, C_list: Sequence[int], m: int,
                        trials: int, rng: RngStream, theory_samples: int = 10**5,
                        with_theory: bool = True, threads: Optional[int] = None):
    """Per-trial block norms over a C grid, with theory comparison columns.

    Returns (rows, summaries). Every trial draws fresh data and a fresh
    initialization from its own keyed stream, so results are independent of
    the execution schedule.
    """
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    gamma = d / N
    rows = []
    summaries = []
    for C in C_list:
        trial_rows = _map(
            lambda t: _trial_row(case, d, N, C, m, t, rng.child(f"{case}/C{C}/t{t}")),
            range(trials), threads,
        )
        rows.extend(trial_rows)
        if case in ("linear_ce", "mlp_ce_vv"):
            a = np.array([r.H11 for r in trial_rows])
            b = np.array([r.H12 for r in trial_rows])
        else:
            a = np.array([r.Htilde11 for r in trial_rows])
            b = np.array([r.Htilde12 for r in trial_rows])
        sm = ConcentrationSummary(
            case, C, trials,
            float(a.mean()), float(a.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
            float(b.mean()), float(b.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
        )
        if with_theory:
            sm.theory_H11, sm.theory_H12, sm.limit_H11, sm.limit_H12 = _theory_for(
                case, gamma, C, m, rng.child(f"theory/C{C}"), theory_samples
            )
        summaries.append(sm)
    return rows, summaries


@dataclass
class DecayFit:
    case: str
    C_grid: list
    ratios: list
    std_ratios: list
    trials: int
    slope: float
    slope_stderr: float
    intercept: float

    def to_json_dict(self) -> dict:
        return {
            "case": self.case,
            "C_grid": self.C_grid,
            "ratios": self.ratios,
            "std_ratios": self.std_ratios,
            "trials": self.trials,
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "intercept": self.intercept,
        }


def _ols_loglog(Cs: np.ndarray, ys: np.ndarray):
    x = np.log(Cs)
    y = np.log(ys)
    xb = x - x.mean()
    denom = (xb * xb).sum()
    if denom <= 0:
        raise DegenerateFitError("need at least two distinct C values")
    slope = float((xb * y).sum() / denom)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = max(len(x) - 2, 1)
    se = float(math.sqrt((resid * resid).sum() / dof / denom))
    return slope, se, intercept


def decay_sweep(case: str, d: int, N: int, m: int, C_grid: Sequence[int], trials: int,
                rng: RngStream, threads: Optional[int] = None) -> DecayFit:
    """log-log OLS of the mean off/diagonal block-norm ratio against C."""
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    if len(set(C_grid)) < 2:
        raise DegenerateFitError("C grid must contain at least two distinct values")
    means = []
    stds = []
    for C in C_grid:
        trial_rows = _map(
            lambda t: _trial_row(case, d, N, C, m, t, rng.child(f"decay/{case}/C{C}/t{t}")),
            range(trials), threads,
        )
        rr = np.array([r.r if case in ("linear_ce", "mlp_ce_vv") else r.rtilde for r in trial_rows])
        if not np.all(np.isfinite(rr)) or rr.mean() <= 0:
            raise DegenerateFitError(f"ratio at C={C} is nonpositive or not finite")
        means.append(float(rr.mean()))
        stds.append(float(rr.std(ddof=1)) if trials > 1 else 0.0)
    slope, se, intercept = _ols_loglog(np.array(C_grid, dtype=float), np.array(means))
    return DecayFit(case, list(C_grid), means, stds, trials, slope, se, intercept)


@dataclass
class StructureMetrics:
    diag_ww: float
    diag_vv: float
    diag_full: float
    circ_wv: float


def _diag_score(H: np.ndarray, slices) -> float:
    """diag / (diag + off) over a group partition; exactly 1 when every
    off-diagonal block is exactly zero."""
    diag = 0.0
    off = 0.0
    for a, sa in enumerate(slices):
        diag += float((H[sa, sa] ** 2).sum())
        for sb in slices[a + 1 :]:
            off += 2.0 * float((H[sa, sb] ** 2).sum())
    total = diag + off
    return diag / total if total > 0 else math.nan


def structure_metrics(full: hk.FullHessian) -> StructureMetrics:
    """Diagonal-block energy fractions and the cross-layer one-column score."""
    H = full.H
    lay = full.layout
    if H.shape != (lay.side, lay.side):
        raise LayoutMismatchError("matrix side disagrees with layout")
    all_slices = [sl for _, _, sl in lay.groups()]
    diag_full = _diag_score(H, all_slices)
    if lay.kind == "linear":
        return StructureMetrics(math.nan, diag_full, diag_full, math.nan)
    diag_ww = _diag_score(H, [lay.w_slice(i) for i in range(lay.m)])
    diag_vv = _diag_score(H, [lay.v_slice(j) for j in range(lay.C)])
    scores = []
    for i in range(lay.m):
        for j in range(lay.C):
            B = H[lay.w_slice(i), lay.v_slice(j)]
            tot = float((B * B).sum())
            if tot > 1e-30:
                scores.append(float((B[:, i] ** 2).sum()) / tot)
    circ = float(np.mean(scores)) if scores else math.nan
    return StructureMetrics(diag_ww, diag_vv, diag_full, circ)


@dataclass
class TrainConfig:
    steps: int
    loss_kind: str = "ce"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "cosine"  # cosine anneal to zero
    seed: int = 0

    def validate(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.schedule != "cosine":
            raise ValueError("only the cosine schedule is supported")


@dataclass
class TraceRecord:
    step: int
    loss: float
    diag_ww: float
    diag_vv: float
    circ_wv: float
    mean_p_dev: float  # mean |p_{n, y_n} - 1|


@dataclass
class StructureTrace:
    config: TrainConfig
    records: list = field(default_factory=list)


def _adam_step(theta: np.ndarray, g: np.ndarray, state: dict, lr: float, cfg: TrainConfig,
               t: int) -> None:
    state["m"] = cfg.beta1 * state["m"] + (1 - cfg.beta1) * g
    state["v"] = cfg.beta2 * state["v"] + (1 - cfg.beta2) * g * g
    mhat = state["m"] / (1 - cfg.beta1 ** (t + 1))
    vhat = state["v"] / (1 - cfg.beta2 ** (t + 1))
    theta -= lr * mhat / (np.sqrt(vhat) + cfg.eps)


def train_and_trace(params0: ModelParams, data: Dataset, cfg: TrainConfig,
                    snapshot_steps: Iterable[int], max_side: int = 5000) -> StructureTrace:
    """Full-batch Adam with cosine-annealed learning rate; Hessian snapshots.

    At every step in snapshot_steps the full Hessian is assembled and the
    structure metrics, loss, and mean |p_y - 1| are recorded.
    """
    cfg.validate()
    if params0.kind != "mlp":
        raise ValueError("training traces are defined for the mlp model")
    snaps = sorted(set(int(s) for s in snapshot_steps))
    if snaps and (snaps[0] < 0 or snaps[-1] > cfg.steps):
        raise ValueError("snapshot steps must lie in [0, steps]")
    params = ModelParams(kind="mlp", V=params0.V.copy(), W=params0.W.copy())
    states = {
        "W": {"m": np.zeros_like(params.W), "v": np.zeros_like(params.W)},
        "V": {"m": np.zeros_like(params.V), "v": np.zeros_like(params.V)},
    }
    trace = StructureTrace(config=cfg)

    def snapshot(step: int) -> None:
        full = hk.assemble_full_hessian(params, data, cfg.loss_kind, max_side=max_side)
        met = structure_metrics(full)
        lv = loss(params, data, cfg.loss_kind).value
        logits, _ = forward(params, data)
        P = softmax(logits).P
        pdev = float(np.abs(P[data.labels, np.arange(data.N)] - 1.0).mean())
        trace.records.append(TraceRecord(step, lv, met.diag_ww, met.diag_vv, met.circ_wv, pdev))

    for t in range(cfg.steps + 1):
        if t in snaps:
            snapshot(t)
        if t == cfg.steps:
            break
        lv = loss(params, data, cfg.loss_kind).value
        if not math.isfinite(lv):
            raise DivergenceError(f"loss became non-finite at step {t}", step=t)
        g = grad(params, data, cfg.loss_kind)
        lr_t = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * t / cfg.steps))
        _adam_step(params.W, g.W, states["W"], lr_t, cfg, t)
        _adam_step(params.V, g.V, states["V"], lr_t, cfg, t)
    return trace
