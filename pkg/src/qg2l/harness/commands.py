"""Experiment orchestration behind the CLI subcommands.

Every command is a pure function of (config, seed) at the level of the bytes it
writes; wall-clock data goes to the manifest only.  Ensembles are split into
fixed-size chunks before being scheduled on threads, so chunk composition and
results never depend on the thread count.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import rng as R
from ..coupling import (
    CoupledRecord,
    concat_coupled,
    girsanov_cost_bound,
    run_coupled_ensemble,
)
from ..ergodics import (
    SemimetricParams,
    check_A1,
    check_A3,
    check_assumptions,
    compute_constants,
    contraction_factor,
    rho_formula,
    wasserstein_coupling_bound,
)
from ..model import BlowUpError, TrajectoryRecord, concat_records, integrate_ensemble, run_chunked
from ..spectral import Operators, SpectralField2L, measure_k0, random_field
from .config import ExperimentConfig
from .manifest import SCHEMA_VERSION, Output

CHUNK = 16
EXIT_OK, EXIT_INVALID, EXIT_BLOWUP, EXIT_CONDITION = 0, 2, 3, 4
MAX_K0_EXTRA = 2048


@dataclass
class Context:
    cfg: ExperimentConfig
    out: Output
    seed: int
    threads: int
    quiet: bool = False

    def say(self, msg: str):
        if not self.quiet:
            print(msg)


def initial_state(cfg: ExperimentConfig, ops: Operators, seed: int, index: int) -> np.ndarray:
    """Random state with spectral slope ``run.init_slope`` scaled to ``V = run.init_energy``."""
    g = ops.grid
    e = cfg["run.init_energy"]
    if e == 0:
        return np.zeros((2, g.n_modes), dtype=complex)
    q = random_field(g, R.stream(seed, R.INITIAL, index), slope=cfg["run.init_slope"]).modes
    return q * math.sqrt(e / float(ops.vort_minus1_sq(q)))


def _steps(T: float, dt: float) -> int:
    return int(round(T / dt))


def run_singles(p, spec, q0s: np.ndarray, T: float, seed: int, purpose: int, threads: int,
                sample_every: int = 1) -> TrajectoryRecord:
    idx = list(range(len(q0s)))

    def run(ix):
        return integrate_ensemble(q0s[ix], p, spec, T, R.streams(seed, purpose, ix), sample_every)

    return concat_records(run_chunked(run, idx, CHUNK, threads))


def run_pairs(p, spec, cs, x0s, y0s, T, seed, purpose, threads, sample_every=1) -> CoupledRecord:
    idx = list(range(len(x0s)))

    def run(ix):
        return run_coupled_ensemble(x0s[ix], y0s[ix], p, spec, cs, T,
                                    R.streams(seed, purpose, ix), sample_every)

    return concat_coupled(run_chunked(run, idx, CHUNK, threads))


def _sample_rows(times: np.ndarray, every: int) -> np.ndarray:
    """Indices of recorded steps written to CSV: every ``every``-th step after t = 0."""
    return np.arange(every, len(times), every)


def _k0(ctx: Context, ops: Operators, extra_q: np.ndarray | None = None) -> float:
    extra = None
    if extra_q is not None and len(extra_q):
        flat = extra_q.reshape(-1, 2, ops.grid.n_modes)
        if len(flat) > MAX_K0_EXTRA:
            flat = flat[np.linspace(0, len(flat) - 1, MAX_K0_EXTRA).round().astype(int)]
        extra = list(ops.psi(flat))
    return measure_k0(ops.grid, ops.w, R.stream(ctx.seed, R.K0), ctx.cfg["run.k0_trials"], extra)


def _base_report(ctx: Context, kind: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "config_hash": ctx.cfg.hash,
            "seed": ctx.seed}


def _blowup(ctx: Context, err: BlowUpError, grid) -> int:
    last = np.asarray(err.last_good)
    state = last.reshape(-1, 2, grid.n_modes)[0]
    ctx.out.checkpoint("blowup_last_good.bin", SpectralField2L(grid, state), err.time - ctx.cfg["run.dt"])
    ctx.out.json("blowup.json", {"step": err.step, "time": err.time, "message": str(err)},
                 validate=False)
    ctx.say(f"blow-up: {err}")
    return EXIT_BLOWUP


# -- simulate ------------------------------------------------------------------------


def cmd_simulate(ctx: Context) -> int:
    cfg = ctx.cfg
    p = cfg.model()
    spec = cfg.noise(p.grid)
    ops = Operators(p.grid, p.w)
    E = cfg["run.ensemble"]
    x0 = initial_state(cfg, ops, ctx.seed, 0)
    ctx.out.checkpoint("initial.bin", SpectralField2L(p.grid, x0), 0.0)
    q0s = np.broadcast_to(x0, (E,) + x0.shape).copy()
    try:
        rec = run_singles(p, spec, q0s, cfg["run.T"], ctx.seed, R.TRAJECTORY, ctx.threads)
    except BlowUpError as err:
        return _blowup(ctx, err, p.grid)
    rows = _sample_rows(rec.times, cfg["run.sample_every"])
    for i in range(E):
        ctx.out.csv(f"trajectory_{i:04d}.csv", ["t", "V", "dissipation", "energy1", "energy2"],
                    [rec.times[rows], rec.V[i, rows], rec.dissipation[i, rows],
                     rec.energy1[i, rows], rec.energy2[i, rows]])
        ctx.out.checkpoint(f"final_{i:04d}.bin", SpectralField2L(p.grid, rec.final[i]),
                           float(rec.times[-1]))
    report = _base_report(ctx, "simulate")
    report["summary"] = {"trajectories": E, "T": cfg["run.T"], "steps": len(rec.times) - 1,
                         "mean_final_V": float(rec.V[:, -1].mean())}
    ctx.out.json("simulate.json", report)
    ctx.say(f"simulated {E} trajectories to T = {cfg['run.T']}; mean final V = {rec.V[:, -1].mean():.6g}")
    return EXIT_OK


# -- couple --------------------------------------------------------------------------


def _pair_states(ctx: Context, ops: Operators, n: int):
    x0s = np.stack([initial_state(ctx.cfg, ops, ctx.seed, 2 * i) for i in range(n)])
    if ctx.cfg["run.coincident"]:
        return x0s, x0s.copy()
    y0s = np.stack([initial_state(ctx.cfg, ops, ctx.seed, 2 * i + 1) for i in range(n)])
    return x0s, y0s


def _synchronization(rec: CoupledRecord) -> dict:
    live = rec.xi_V[:, 0] > 0
    if not live.any():
        return {"median_ratio": 0.0, "median_log_slope": None}
    ratio = np.sqrt(rec.xi_V[live, -1] / rec.xi_V[live, 0])
    with np.errstate(divide="ignore"):
        logs = 0.5 * np.log(rec.xi_V[live] / rec.xi_V[live, :1])
    slopes = []
    for row in logs:
        ok = np.isfinite(row)
        if ok.sum() > 1:
            slopes.append(np.polyfit(rec.times[ok], row[ok], 1)[0])
    return {"median_ratio": float(np.median(ratio)),
            "median_log_slope": float(np.median(slopes)) if slopes else None}


def cmd_couple(ctx: Context) -> int:
    cfg = ctx.cfg
    p = cfg.model()
    spec = cfg.noise(p.grid)
    cs = cfg.control()
    ops = Operators(p.grid, p.w)
    P = cfg["run.pairs"]
    x0s, y0s = _pair_states(ctx, ops, P)
    try:
        rec = run_pairs(p, spec, cs, x0s, y0s, cfg["run.T"], ctx.seed, R.PAIR, ctx.threads)
    except BlowUpError as err:
        return _blowup(ctx, err, p.grid)
    rows = _sample_rows(rec.times, cfg["run.sample_every"])
    for i in range(P):
        ctx.out.csv(f"pair_{i:04d}.csv", ["t", "xi_V", "girsanov_cost", "G_sq"],
                    [rec.times[rows], rec.xi_V[i, rows], rec.cost[i, rows], rec.G_sq[i, rows]])
    k0 = _k0(ctx, ops, rec.x.snapshots)
    consts = compute_constants(p, spec, cs, k0, cfg["semimetric.gamma"])
    a1, a3 = check_A1(rec, consts), check_A3(rec, cs, p.grid)
    report = _base_report(ctx, "couple")
    report.update({"constants": consts.to_dict(), "assumptions": {"A1": a1, "A3": a3},
                   "synchronization": _synchronization(rec),
                   "control": {"a": cs.a, "n": cs.n},
                   "verdict": "pass" if a1["pass"] and a3["pass"] else "fail"})
    ctx.out.json("couple_summary.json", report)
    ctx.say(f"coupled {P} pairs: A1 {'pass' if a1['pass'] else 'FAIL'}, "
            f"A3 {'pass' if a3['pass'] else 'FAIL'}, "
            f"median ratio {report['synchronization']['median_ratio']:.3g}")
    return EXIT_OK if report["verdict"] == "pass" else EXIT_CONDITION


# -- constants -----------------------------------------------------------------------


def cmd_constants(ctx: Context) -> int:
    cfg = ctx.cfg
    p = cfg.model()
    spec = cfg.noise(p.grid)
    cs = cfg.control()
    ops = Operators(p.grid, p.w)
    consts = compute_constants(p, spec, cs, _k0(ctx, ops), cfg["semimetric.gamma"])
    report = _base_report(ctx, "constants")
    report["constants"] = consts.to_dict()
    report["conditions_failed"] = consts.failed()
    ctx.out.json("constants.json", report)
    if not ctx.quiet:
        for k, v in consts.to_dict().items():
            print(f"{k:>20s}  {v}")
    return EXIT_OK if consts.all_pass else EXIT_CONDITION


# -- verify --------------------------------------------------------------------------


def contraction_time(rec: CoupledRecord, factor: float = 0.1) -> float:
    """First recorded time at which the median ``|||xi|||`` ratio is below ``factor``."""
    live = rec.xi_V[:, 0] > 0
    if not live.any():
        return float(rec.times[-1])
    med = np.median(np.sqrt(rec.xi_V[live] / rec.xi_V[live, :1]), axis=0)
    hit = np.nonzero(med <= factor)[0]
    return float(rec.times[hit[0]] if len(hit) else rec.times[-1])


def cmd_verify(ctx: Context) -> int:
    cfg = ctx.cfg
    p = cfg.model()
    spec = cfg.noise(p.grid)
    cs = cfg.control()
    ops = Operators(p.grid, p.w)
    report = _base_report(ctx, "verify")
    try:
        x0s, y0s = _pair_states(ctx, ops, cfg["run.pairs"])
        coupled = run_pairs(p, spec, cs, x0s, y0s, cfg["run.T"], ctx.seed, R.PAIR, ctx.threads)
        x0 = x0s[0]
        E = cfg["run.ensemble"]
        singles = run_singles(p, spec, np.broadcast_to(x0, (E,) + x0.shape).copy(), cfg["run.T"],
                              ctx.seed, R.TRAJECTORY, ctx.threads)
        tail = run_singles(p, spec, np.broadcast_to(x0, (cfg["run.tail_runs"],) + x0.shape).copy(),
                           cfg["run.tail_T"], ctx.seed, R.TAIL, ctx.threads)
    except BlowUpError as err:
        return _blowup(ctx, err, p.grid)
    k0 = _k0(ctx, ops, np.concatenate([coupled.x.snapshots.reshape(-1, 2, p.grid.n_modes),
                                       singles.snapshots.reshape(-1, 2, p.grid.n_modes)]))
    consts = compute_constants(p, spec, cs, k0, cfg["semimetric.gamma"])
    report["constants"] = consts.to_dict()
    report["conditions_failed"] = consts.failed() + ([] if consts.chi > 0 else ["chi > 0"])
    assumptions = check_assumptions(coupled, singles, consts, cs, p.grid,
                                    tail_xi=tail.xi_hat(consts.gamma))
    report["assumptions"] = assumptions.results
    report["synchronization"] = _synchronization(coupled)
    report["contraction"] = None
    report["coupling_bound"] = None
    report["rho_formula"] = None
    if consts.all_pass:
        sp = SemimetricParams.from_constants(consts, cfg["semimetric.alpha"], cfg["semimetric.N_scale"])
        t = cfg["run.contraction_t"]
        if t is None:
            t = contraction_time(coupled)
        t = max(p.dt, round(t / p.dt) * p.dt)
        n = cfg["run.contraction_samples"]
        xa, ya = SpectralField2L(p.grid, x0s[0]), SpectralField2L(p.grid, y0s[0])
        if not np.array_equal(x0s[0], y0s[0]):
            res, _, _ = contraction_factor(xa, ya, p, spec, sp, t, n, ctx.seed, consts, ctx.threads)
            fixed = run_pairs(p, spec, cs, np.broadcast_to(x0s[0], (n,) + x0.shape).copy(),
                              np.broadcast_to(y0s[0], (n,) + x0.shape).copy(), t, ctx.seed,
                              R.FIXED_PAIR, ctx.threads)
            xi_hat = fixed.x.xi_hat(consts.gamma)
            bound = wasserstein_coupling_bound(xa, ya, consts, sp, t, fixed.cost[:, -1], xi_hat, p.w)
            cost_bounds = [girsanov_cost_bound(xa, ya, consts, 2 * p.w.h1 * x, t, cs, spec, p.w)
                           for x in xi_hat]
            report["contraction"] = dict(asdict(res), alpha=sp.alpha, N_scale=sp.N_scale,
                                         upsilon=sp.upsilon)
            report["coupling_bound"] = dict(asdict(bound), total=bound.total,
                                            w_hat_dN=res.w_hat_dN,
                                            holds=bool(bound.total >= res.w_hat_dN))
            report["girsanov"] = {
                "max_ratio_cost_to_bound": float(np.max(fixed.cost[:, -1] / np.asarray(cost_bounds))),
                "holds": bool(np.all(fixed.cost[:, -1] <= np.asarray(cost_bounds))),
            }
            report["rho_formula"] = asdict(rho_formula(consts, sp, t, xi_hat, cs, spec, p.w))
    ok = assumptions.all_pass and consts.all_pass and (
        report["contraction"] is None or report["contraction"]["rho"] < 1)
    report["verdict"] = "pass" if ok else ("conditions_failed" if not consts.all_pass else "fail")
    ctx.out.json("verify_report.json", report)
    if not ctx.quiet:
        for name, res in assumptions.results.items():
            print(f"{name}: {'pass' if res['pass'] else 'FAIL'}")
        if report["contraction"]:
            print(f"rho_hat = {report['contraction']['rho']:.6g} at t = {report['contraction']['t']}")
        if report["conditions_failed"]:
            print("conditions failed: " + ", ".join(report["conditions_failed"]))
    return EXIT_OK if ok else EXIT_CONDITION


COMMANDS = {
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "verify": cmd_verify,
    "constants": cmd_constants,
}
