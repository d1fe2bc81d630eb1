"""Reproduction experiments with pass/fail checks.

Every experiment returns an :class:`ExperimentResult` whose ``summary`` is
a JSON-ready dict with keys ``experiment, seed, n_trials, estimates,
standard_errors, paper_target, pass, checks``.  Checks flagged
``gating: false`` are reported but do not affect ``pass``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    blackwell_compare,
    covariance_report,
    empirical_asymptotic_covariance,
    lyapunov_solve,
    map_error_probability,
    moment_matrix_Q,
    noise_covariance_R,
    trace_formula_two,
    tracking_mse,
)
from .filters import FilterConfig, FilterRun, run_filters
from .simgen import (
    Gaussian,
    GaussianKernel,
    HyperChain,
    Laplacian,
    Schedule,
    SystemSpec,
    UniformIID,
    trial_rngs,
)
from .symcore import ParameterSet, set_distance

__all__ = ["ExperimentResult", "EXPERIMENTS", "run_experiment"]

EXAMPLE4_THETA = np.array(
    [
        [1, 3, 4, 5, 7, 9, 10, 11, 12, 13],
        [2, 4, 5, 10, 8, 7, 1, 8, 9, 10],
        [3, 1, 2, 7, 6, 5, 4, 5, 7, 9],
        [6, 12, 18, 24, 36, 43, 50, 10, 1, 3],
    ],
    dtype=float,
)


@dataclass
class ExperimentResult:
    summary: dict
    logs: dict[str, FilterRun] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.summary["pass"])


class _Checks:
    def __init__(self):
        self.items = []

    def add(self, name: str, value, target, tol, ok: bool, gating: bool = True, note: str = ""):
        item = {"name": name, "value": _jsonable(value), "target": _jsonable(target), "tol": tol, "pass": bool(ok), "gating": gating}
        if note:
            item["note"] = note
        self.items.append(item)
        return ok

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.items if c["gating"])


def _jsonable(x):
    if isinstance(x, ParameterSet):
        return x.members.tolist()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


def _summary(name, seed, n_trials, estimates, ses, targets, checks: _Checks) -> dict:
    return {
        "experiment": name,
        "seed": seed,
        "n_trials": n_trials,
        "estimates": _jsonable(estimates),
        "standard_errors": _jsonable(ses),
        "paper_target": _jsonable(targets),
        "pass": checks.passed,
        "checks": checks.items,
    }


def _avg_sets(runs: list[FilterRun]) -> tuple[np.ndarray, np.ndarray]:
    m = np.array([r.estimate.members for r in runs])
    se = m.std(axis=0, ddof=1) / math.sqrt(len(runs)) if len(runs) > 1 else np.zeros_like(m[0])
    return m.mean(axis=0), se


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


# ----------------------------------------------------------------------------
# Example 1: scalar systems, symmetric bank vs direct gradient descent
# ----------------------------------------------------------------------------


def example1(seed: int = 0, trials: int = 10, sgd_long_steps: int = 50_000_000) -> ExperimentResult:
    theta = np.array([-2.0, 5.0, 8.0])
    spec = SystemSpec(theta, Gaussian(1e-2), "gaussian")
    n = 200_000
    sym = FilterConfig("sym-scalar", 1e-4, [1.0, 2.0, 3.0], invert_every=100)
    runs = [run_filters([sym], spec, UniformIID(), n, rng, log=(i == 0))[0] for i, rng in enumerate(trial_rngs(seed, trials))]
    avg, se = _avg_sets(runs)
    ck = _Checks()
    ck.add("sym-scalar sorted terminal estimate vs truth", avg[:, 0], theta, 0.05, _max_abs(avg[:, 0], theta) <= 0.05)

    rng_trap, rng_good = trial_rngs(seed + 1, 2)
    trap = run_filters([FilterConfig("direct-sgd", 1e-7, [1.0, 2.0, 3.0], invert_every=1000)], spec, UniformIID(), n, rng_trap)[0]
    good = run_filters(
        [FilterConfig("direct-sgd", 1e-7, [3.0, 6.0, 9.0], invert_every=0)], spec, UniformIID(), sgd_long_steps, rng_good, log=False
    )[0]
    stationary = np.array([-2.02, 6.12, 6.45])
    tr = trap.estimate.members[:, 0]
    d_true = set_distance(tr, theta)
    ck.add("direct-sgd from [1,2,3]: distance from truth", d_true, "> 0.5", 0.5, d_true > 0.5, note="local stationary point")
    ck.add("direct-sgd from [1,2,3] vs stationary point", tr, stationary, 0.3, _max_abs(tr, stationary) <= 0.3)
    gd = good.estimate.members[:, 0]
    ck.add(f"direct-sgd from [3,6,9] after {sgd_long_steps} steps vs truth", gd, theta, 0.1, _max_abs(gd, theta) <= 0.1)
    est = {"sym_scalar": avg[:, 0], "direct_sgd_trap": tr, "direct_sgd_good_init": gd}
    ses = {"sym_scalar": se[:, 0]}
    tgt = {"sym_scalar": theta, "direct_sgd_trap": stationary, "direct_sgd_good_init": theta}
    return ExperimentResult(
        _summary("example1", seed, trials, est, ses, tgt, ck), {"sym-scalar": runs[0], "direct-sgd": trap}
    )


# ----------------------------------------------------------------------------
# Example 2: mis-specified recursive EM vs symmetric bank, with a switch
# ----------------------------------------------------------------------------


def example2(seed: int = 0, trials: int = 10) -> ExperimentResult:
    switch = 300_000
    n = 600_000
    states = np.array([[4.0, 5.0], [1.0, 3.0]])
    sched = Schedule(states, (switch,))
    spec = SystemSpec(states[0], Laplacian(2.0), "gaussian")  # std 2, scale sqrt(2)
    rem = FilterConfig("rem", 5e-5, [1.0, 2.0], invert_every=10_000, assumed_noise=Gaussian(1.0))
    sym = FilterConfig("sym-scalar", 2e-5, [1.0, 2.0], invert_every=10_000)
    per = [run_filters([rem, sym], spec, UniformIID(), n, rng, hyper=sched) for rng in trial_rngs(seed, trials)]

    def at(run: FilterRun, k: int) -> np.ndarray:
        i = int(np.nonzero(run.k == k)[0][0])
        return run.theta[i][:, 0]

    res = {}
    for name, j in (("rem", 0), ("sym_scalar", 1)):
        for phase, k in (("phase1", switch), ("phase2", n)):
            vals = np.array([at(p[j], k) for p in per])
            res[f"{name}_{phase}"] = (vals.mean(0), vals.std(0, ddof=1) / math.sqrt(trials))
    rem_target1 = np.array([3.5590, 5.4559])
    rem_target2 = np.array([0.7405, 3.2658])
    ck = _Checks()
    v = res["rem_phase1"][0]
    ck.add("rem (Gaussian assumption, Laplacian data) at switch vs biased target", v, rem_target1, 0.15, _max_abs(v, rem_target1) <= 0.15)
    v = res["sym_scalar_phase1"][0]
    ck.add("sym-scalar at switch vs truth", v, states[0], 0.1, _max_abs(v, states[0]) <= 0.1)
    v = res["rem_phase2"][0]
    ck.add("rem after switch vs biased target", v, rem_target2, 0.15, _max_abs(v, rem_target2) <= 0.15, gating=False)
    v = res["sym_scalar_phase2"][0]
    ck.add("sym-scalar after switch vs truth", v, states[1], 0.1, _max_abs(v, states[1]) <= 0.1, gating=False)
    est = {k: v[0] for k, v in res.items()}
    ses = {k: v[1] for k, v in res.items()}
    tgt = {"rem_phase1": rem_target1, "rem_phase2": rem_target2, "sym_scalar_phase1": states[0], "sym_scalar_phase2": states[1]}
    return ExperimentResult(_summary("example2", seed, trials, est, ses, tgt, ck), {"rem": per[0][0], "sym-scalar": per[0][1]})


# ----------------------------------------------------------------------------
# Example 3: vector systems, symmetric filter vs naive element-wise pipeline
# ----------------------------------------------------------------------------


def example3(seed: int = 0, trials: int = 1) -> ExperimentResult:
    theta = np.array([[-2.0, 6.0], [4.0, 5.0]])
    ghosts = ParameterSet([[-2.0, 5.0], [4.0, 6.0]])
    truth = ParameterSet(theta)
    rngs = trial_rngs(seed, 2 * trials)
    spec = SystemSpec(theta, Gaussian(0.1), "gaussian")
    sym = FilterConfig("sym-vector", 1e-4, invert_every=1000)
    lab = FilterConfig("classical", 1e-4, invert_every=1000)
    vec = [run_filters([sym, lab], spec, UniformIID(), 200_000, rngs[i]) for i in range(trials)]
    # the element-wise pipeline needs one scalar regressor per component
    nspec = SystemSpec(theta, Gaussian(0.1), "diag-gaussian")
    naive = FilterConfig("naive", 1e-5, invert_every=10_000)
    nv = [run_filters([naive], nspec, UniformIID(), 1_000_000, rngs[trials + i])[0] for i in range(trials)]
    sym_avg, sym_se = _avg_sets([v[0] for v in vec])
    lab_avg = np.mean([v[1].final.coef for v in vec], axis=0)  # labeled rows keep their order
    nv_avg, nv_se = _avg_sets(nv)
    ck = _Checks()
    ck.add("sym-vector vs true set", sym_avg, truth, 0.1, set_distance(sym_avg, truth.members) <= 0.1)
    ck.add("naive vs ghost set", nv_avg, ghosts, 0.1, set_distance(nv_avg, ghosts.members) <= 0.1)
    ck.add("classical (labeled) vs ordered truth", lab_avg, theta, 0.1, _max_abs(lab_avg, theta) <= 0.1, gating=False)
    est = {"sym_vector": sym_avg, "naive": nv_avg, "classical": lab_avg}
    ses = {"sym_vector": sym_se, "naive": nv_se}
    tgt = {"sym_vector": truth, "naive": ghosts, "classical": theta}
    return ExperimentResult(
        _summary("example3", seed, trials, est, ses, tgt, ck),
        {"sym-vector": vec[0][0], "classical": vec[0][1], "naive": nv[0]},
    )


# ----------------------------------------------------------------------------
# Example 4: L=4, D=10, identity input
# ----------------------------------------------------------------------------


def example4(seed: int = 0, trials: int = 100, sigma: float = 1e-3, eps: float = 1e-3, n: int = 50_000) -> ExperimentResult:
    theta = EXAMPLE4_THETA
    truth = ParameterSet(theta).members
    spec = SystemSpec(theta, Gaussian(sigma), "identity")
    cfg = FilterConfig("sym-vector", eps, invert_every=100)
    runs = []
    with warnings.catch_warnings():
        # monomial coordinates are not identifiable for identity input; the blocks are
        warnings.simplefilter("ignore", RuntimeWarning)
        for i, rng in enumerate(trial_rngs(seed, trials)):
            runs.append(run_filters([cfg], spec, UniformIID(), n, rng, log=(i == 0))[0])
    avg, se = _avg_sets(runs)
    rel = float(np.max(np.abs(avg - truth) / np.abs(truth)))
    limit = 7e-4 if trials >= 100 else 1e-2
    ck = _Checks()
    ck.add(f"max relative error of {trials}-trial average", rel, limit, limit, rel <= limit)
    nv = run_filters([FilterConfig("naive", eps, invert_every=0)], spec, UniformIID(), n, trial_rngs(seed + 1, 1)[0], log=False)[0]
    ghost = nv.estimate.members
    mixed = set_distance(ghost, truth) > 0.5
    ck.add("naive pipeline mixes components across rows", set_distance(ghost, truth), "> 0.5", 0.5, mixed)
    est = {"sym_vector": avg, "max_relative_error": rel, "naive": ghost}
    ses = {"sym_vector": se}
    tgt = {"sym_vector": truth, "max_relative_error": 7e-4}
    return ExperimentResult(_summary("example4", seed, trials, est, ses, tgt, ck), {"sym-vector": runs[0]})


# ----------------------------------------------------------------------------
# asymptotic covariance of the scalar bank
# ----------------------------------------------------------------------------


def covariance(seed: int = 0, trials: int = 200, n_steps: int = 100_000) -> ExperimentResult:
    theta = np.array([1.0, 3.0])
    sigma, eps = 0.1, 1e-4
    spec = SystemSpec(theta, Gaussian(sigma), "gaussian")
    emp = empirical_asymptotic_covariance("sym-scalar", spec, eps, n_steps, trials, seed)
    closed = trace_formula_two(theta, sigma)
    Q = moment_matrix_Q(2)
    Sig = lyapunov_solve(Q, noise_covariance_R(theta, sigma))
    full = covariance_report(theta, sigma, cross=True)
    ck = _Checks()
    tr = emp.theta_trace
    ck.add("scaled parameter-covariance trace vs closed form", tr, closed, 0.25, abs(tr - closed) <= 0.25 * closed)
    d = np.diag(emp.lam_cov)
    ok = bool(np.all(np.abs(d - np.diag(Sig)) <= 0.25 * np.diag(Sig)))
    ck.add("scaled coefficient-covariance diagonal vs Lyapunov solution", d, np.diag(Sig), 0.25, ok)
    ck.add(
        "scaled parameter-covariance trace vs delta method with cross-covariance",
        tr,
        full.trace_bar,
        0.25,
        abs(tr - full.trace_bar) <= 0.25 * full.trace_bar,
        gating=False,
    )
    off = emp.lam_cov[0, 1]
    ck.add(
        "scaled coefficient cross-covariance vs Lyapunov with cross term",
        off,
        full.Sigma[0, 1],
        "3 se",
        abs(off - full.Sigma[0, 1]) <= 3 * emp.lam_cov_se[0, 1],
        gating=False,
    )
    est = {"theta_trace": tr, "lam_cov": emp.lam_cov, "theta_cov": emp.theta_cov}
    ses = {"theta_trace": emp.theta_trace_se, "lam_cov": emp.lam_cov_se, "theta_cov": emp.theta_cov_se}
    tgt = {"theta_trace": closed, "lam_cov_diag": np.diag(Sig), "theta_trace_with_cross": full.trace_bar, "lam_cov_with_cross": full.Sigma}
    return ExperimentResult(_summary("covariance", seed, trials, est, ses, tgt, ck))


# ----------------------------------------------------------------------------
# anonymity and Blackwell ordering
# ----------------------------------------------------------------------------


def blackwell(seed: int = 0, trials: int = 100_000) -> ExperimentResult:
    n = max(int(trials), 100_000)
    ck = _Checks()
    est, ses, tgt = {}, {}, {}
    for L, th in ((2, [4.0, 5.0]), (3, [1.0, 2.0, 3.0])):
        X = math.factorial(L)
        spec = SystemSpec(th, Gaussian(1.0), "identity")
        rep = map_error_probability(np.full(X, 1.0 / X), spec, n, seed, observe="set")
        target = (X - 1) / X
        ok = abs(rep.p_error - target) <= max(rep.ci_halfwidth, 1e-12)
        ck.add(f"uniform prior, set observation, L={L}: MAP error", rep.p_error, target, rep.ci_halfwidth, ok)
        est[f"p_error_set_L{L}"] = rep.p_error
        ses[f"p_error_set_L{L}"] = rep.standard_error
        tgt[f"p_error_set_L{L}"] = target
    spec0 = SystemSpec([4.0, 5.0], Gaussian(0.0), "identity")
    rep0 = map_error_probability([1.0, 0.0], spec0, 10_000, seed)
    ck.add("point-mass prior, zero noise: MAP error", rep0.p_error, 0.0, 0.0, rep0.p_error == 0.0)
    spec = SystemSpec([4.0, 5.0], Gaussian(1.0), "identity")
    bw = blackwell_compare(Gaussian(1.0), GaussianKernel(1.0), [0.5, 0.5], spec, n, seed)
    ck.add("MAP error: base <= garbled (3 se)", bw.p_error, "ordered", "3 se", bw.p_error_ordered)
    ck.add("observation covariance: garbled >= base (3 se)", bw.cov_min_eig, ">= 0", "3 se", bw.cov_ordered)
    ck.add("parameter-covariance trace: base < garbled (3 se)", bw.trace_bar, "ordered", "3 se", bw.trace_ordered)
    est.update(
        p_error_matrix=bw.p_error,
        cov_min_eig=bw.cov_min_eig,
        trace_bar=bw.trace_bar,
    )
    ses.update(p_error_matrix=bw.p_error_se, cov_min_eig=bw.cov_min_eig_se, trace_bar=bw.trace_bar_se)
    return ExperimentResult(_summary("blackwell", seed, n, est, ses, tgt, ck))


# ----------------------------------------------------------------------------
# tracking a slowly switching parameter set
# ----------------------------------------------------------------------------


def tracking(seed: int = 0, trials: int = 10, eps: float = 4e-4, switches: float = 200.0) -> ExperimentResult:
    states = np.array([[4.0, 5.0], [1.0, 3.0]])
    Q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    spec = SystemSpec(states[0], Gaussian(0.1), "gaussian")
    base = HyperChain(states, Q, 0.0)
    out = {}
    for name, e, mu in (
        ("mse_eps", eps, eps),
        ("mse_eps_quarter", eps / 4, eps / 4),
        ("mse_fast_chain", eps, 100 * eps),
    ):
        n = int(switches / e)
        out[name] = tracking_mse(spec, base, e, mu, n, trials, seed)
    ratio = out["mse_eps"].mse / out["mse_eps_quarter"].mse
    rse = ratio * math.hypot(out["mse_eps"].standard_error / out["mse_eps"].mse, out["mse_eps_quarter"].standard_error / out["mse_eps_quarter"].mse)
    ck = _Checks()
    ck.add("MSE(eps)/MSE(eps/4) with mu = eps", ratio, [2, 8], None, 2 <= ratio <= 8)
    ck.add("MSE with mu = 100 eps exceeds mu = eps", out["mse_fast_chain"].mse, f"> {out['mse_eps'].mse:.6g}", None, out["mse_fast_chain"].mse > out["mse_eps"].mse)
    est = {k: v.mse for k, v in out.items()} | {"ratio": ratio}
    ses = {k: v.standard_error for k, v in out.items()} | {"ratio": rse}
    tgt = {"ratio": [2, 8]}
    return ExperimentResult(_summary("tracking", seed, trials, est, ses, tgt, ck))


EXPERIMENTS = {
    "example1": example1,
    "example2": example2,
    "example3": example3,
    "example4": example4,
    "blackwell": blackwell,
    "tracking": tracking,
    "covariance": covariance,
}


def run_experiment(name: str, seed: int = 0, trials: int | None = None) -> ExperimentResult:
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    fn = EXPERIMENTS[name]
    return fn(seed=seed) if trials is None else fn(seed=seed, trials=trials)
