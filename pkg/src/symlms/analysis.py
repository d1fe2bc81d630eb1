"""Asymptotic covariance, anonymity and tracking analysis.

Closed forms assume scalar parameters (``D == 1``) and iid standard
Gaussian inputs.  Monte-Carlo quantities are always returned with
standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import ConfigError, Diverged
from .filters import FilterConfig, run_filters
from .simgen import (
    DiscretePMF,
    Gaussian,
    HyperChain,
    Laplacian,
    NoiseModel,
    SystemSpec,
    UniformIID,
    garble,
    iter_chunks,
    permutation_table,
    sample_noise,
    trial_rngs,
)
from .symcore import ParameterSet, full_transform, root_sensitivity

__all__ = [
    "CovarianceReport",
    "AnonymityReport",
    "BlackwellReport",
    "AsymptoticCovariance",
    "TrackingReport",
    "moment_matrix_Q",
    "noise_covariance_R",
    "lyapunov_solve",
    "delta_covariance",
    "covariance_report",
    "trace_formula_two",
    "log_likelihoods",
    "bayes_update",
    "map_error_probability",
    "blackwell_compare",
    "empirical_asymptotic_covariance",
    "tracking_mse",
]

Z95 = 1.959963984540054


@dataclass
class CovarianceReport:
    Q: np.ndarray
    R: np.ndarray
    Sigma: np.ndarray
    SigmaBar: np.ndarray
    trace_bar: float


@dataclass
class AnonymityReport:
    """MAP error probability ``p_error`` with a 95% half-width and normalized anonymity."""

    p_error: float
    ci_halfwidth: float
    anonymity: float
    n_samples: int
    standard_error: float


# ----------------------------------------------------------------------------
# covariance
# ----------------------------------------------------------------------------


def _scalar_theta(theta) -> np.ndarray:
    ps = theta if isinstance(theta, ParameterSet) else ParameterSet(np.asarray(theta, dtype=float).reshape(-1, 1))
    if ps.D != 1:
        raise ConfigError("closed-form analysis needs scalar parameters (D=1)")
    return ps.members[:, 0]


def _require_gaussian_input(input_kind: str) -> None:
    if input_kind != "gaussian":
        raise ConfigError("closed forms assume iid standard Gaussian inputs")


def moment_matrix_Q(L: int, input_kind: str = "gaussian") -> np.ndarray:
    """``diag(E psi^(2l))`` for standard Gaussian ``psi``: ``(2l-1)!!``."""
    _require_gaussian_input(input_kind)
    if L < 1:
        raise ConfigError("L must be >= 1")
    return np.diag([float(math.prod(range(2 * l - 1, 0, -2))) for l in range(1, L + 1)])


def noise_covariance_R(
    theta,
    sigma: float | NoiseModel,
    method: str = "closed-form",
    n: int = 1_000_000,
    seed: int = 0,
    cross: bool = False,
    input_kind: str = "gaussian",
    return_se: bool = False,
):
    """Covariance of the regressor-weighted pseudo-noise ``psi^l w_l``.

    Parameters
    ----------
    theta : ParameterSet or array_like
        Scalar parameter set.
    sigma : float or NoiseModel
        Observation noise (a float means Gaussian with that std).
    method : {"closed-form", "monte-carlo"}
        The closed form exists for ``L == 2`` only.
    cross : bool
        Closed form only: include the off-diagonal ``3 sigma^2 (theta_1 +
        theta_2)``.  The default returns the diagonal form.
    return_se : bool
        Monte Carlo only: also return the entrywise standard errors.
    """
    _require_gaussian_input(input_kind)
    th = _scalar_theta(theta)
    L = th.size
    noise = Gaussian(float(sigma)) if not isinstance(sigma, (Gaussian, Laplacian, DiscretePMF)) else sigma
    if method == "closed-form":
        if L != 2:
            raise ConfigError("closed-form R is available for L=2 only")
        if not isinstance(noise, Gaussian):
            raise ConfigError("closed-form R assumes Gaussian noise")
        s2 = noise.sigma**2
        R = np.diag([2 * s2, 15 * s2 * (th[0] ** 2 + th[1] ** 2) + 3 * s2**2])
        if cross:
            R[0, 1] = R[1, 0] = 3 * s2 * (th[0] + th[1])
        return R
    if method != "monte-carlo":
        raise ConfigError(f"unknown method {method!r}")
    rng = trial_rngs(seed, 1)[0]
    S = np.zeros((L, L))
    S2 = np.zeros((L, L))
    done = 0
    e_true = np.concatenate(full_transform(th))
    while done < n:
        c = min(1 << 18, n - done)
        psi = rng.standard_normal(c)
        v = sample_noise(noise, (c, L), rng)
        z = _kernels.esp_batch(psi[:, None] * th[None, :] + v)
        pw = psi[:, None] ** np.arange(1, L + 1)
        g = pw * (z - pw * e_true)  # psi^l w_l
        prod = g[:, :, None] * g[:, None, :]
        S += prod.sum(0)
        S2 += (prod**2).sum(0)
        done += c
    R = S / n
    se = np.sqrt(np.maximum(S2 / n - R**2, 0.0) / n)
    return (R, se) if return_se else R


def lyapunov_solve(Q, R) -> np.ndarray:
    """Symmetric solution of ``Q Sigma + Sigma Q = R`` via the Kronecker system."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = Q.shape[0]
    if Q.shape != (n, n) or R.shape != (n, n):
        raise ConfigError("Q and R must be square and of equal size")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * (1 + np.abs(Q).max())):
        raise ConfigError("Q must be symmetric")
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        raise ConfigError("Q must be positive definite") from None
    eye = np.eye(n)
    K = np.kron(eye, Q) + np.kron(Q, eye)
    sig = np.linalg.solve(K, R.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (sig + sig.T)


def delta_covariance(Sigma, theta) -> tuple[np.ndarray, float]:
    """Parameter covariance ``J^T Sigma J`` with ``J[m, l] = d theta_l / d lambda_m``."""
    J = root_sensitivity(ParameterSet(_scalar_theta(theta)[:, None]))
    Sigma = np.asarray(Sigma, dtype=float)
    bar = J.T @ Sigma @ J
    bar = 0.5 * (bar + bar.T)
    return bar, float(np.trace(bar))


def trace_formula_two(theta, sigma: float) -> float:
    """Closed-form parameter-covariance trace for two scalar systems with the diagonal R."""
    t1, t2 = _scalar_theta(theta)
    s2 = sigma**2
    return (6 * s2 * (t1**2 + t2**2) + s2**2) / (t1 - t2) ** 2


def covariance_report(theta, sigma, method: str = "closed-form", cross: bool = False, **kw) -> CovarianceReport:
    th = _scalar_theta(theta)
    Q = moment_matrix_Q(th.size)
    R = noise_covariance_R(th, sigma, method=method, cross=cross, **kw)
    Sigma = lyapunov_solve(Q, R)
    bar, tr = delta_covariance(Sigma, th)
    return CovarianceReport(Q, R, Sigma, bar, tr)


# ----------------------------------------------------------------------------
# Bayesian anonymity
# ----------------------------------------------------------------------------


def _logpdf(noise: NoiseModel, r: np.ndarray) -> np.ndarray:
    # summed over the last two axes (rows, components)
    if isinstance(noise, Gaussian):
        if noise.sigma == 0:
            return np.where(np.all(r == 0, axis=(-2, -1)), 0.0, -np.inf)
        s2 = noise.sigma**2
        return np.sum(-0.5 * r * r / s2 - 0.5 * np.log(2 * np.pi * s2), axis=(-2, -1))
    if isinstance(noise, Laplacian):
        if noise.sigma == 0:
            return np.where(np.all(r == 0, axis=(-2, -1)), 0.0, -np.inf)
        b = noise.scale
        return np.sum(-np.abs(r) / b - np.log(2 * b), axis=(-2, -1))
    x = np.asarray(noise.support)
    p = np.asarray(noise.probs)
    idx = np.abs(r[..., None] - x).argmin(-1)
    hit = np.isclose(r, x[idx], rtol=0, atol=1e-12)
    with np.errstate(divide="ignore"):
        lp = np.where(hit, np.log(p[idx]), -np.inf)
    return lp.sum(axis=(-2, -1))


def log_likelihoods(y, theta, noise: NoiseModel, psi=None) -> np.ndarray:
    """``log B_{i y}`` for every permutation ``i``: rows ``y_l`` against ``psi theta_{sigma_i(l)}``.

    ``y`` may carry leading sample axes: shape (..., L, D) -> (..., L!).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        theta = theta[:, None]
    y = np.asarray(y, dtype=float)
    L, D = theta.shape
    pred = theta if psi is None else theta @ np.asarray(psi, dtype=float).T
    perms = permutation_table(L)
    r = y[..., None, :, :] - pred[perms]  # (..., X, L, D)
    return _logpdf(noise, r)


def bayes_update(pi, likelihood, log: bool = False) -> np.ndarray:
    """Posterior ``pi_i B_i / sum_j pi_j B_j`` computed in log space."""
    pi = np.asarray(pi, dtype=float)
    lik = np.asarray(likelihood, dtype=float)
    if pi.shape != lik.shape:
        raise ValueError("prior and likelihood must have the same length")
    with np.errstate(divide="ignore"):
        lp = np.log(pi) + (lik if log else np.log(lik))
    m = lp.max()
    if not np.isfinite(m):
        raise ValueError("all likelihoods vanish under the prior")
    w = np.exp(lp - m)
    return w / w.sum()


def _posterior_batch(logprior: np.ndarray, ll: np.ndarray) -> np.ndarray:
    lp = logprior + ll
    m = lp.max(axis=-1, keepdims=True)
    w = np.exp(lp - m)
    return w / w.sum(axis=-1, keepdims=True)


def map_error_probability(
    pi,
    spec: SystemSpec,
    n_samples: int = 100_000,
    seed: int = 0,
    likelihood: NoiseModel | None = None,
    observe: str = "matrix",
    estimator: str = "posterior",
    batch: int = 20_000,
) -> AnonymityReport:
    """Monte-Carlo error probability of the MAP permutation estimate.

    Parameters
    ----------
    pi : array_like
        Prior over the lexicographic permutation table.
    spec : SystemSpec
        Identity input; ``spec.noise`` generates the data.
    likelihood : NoiseModel, optional
        Noise law used by the observer (defaults to ``spec.noise``).
    observe : {"matrix", "set"}
        ``"matrix"`` scores the row-ordered observation; ``"set"`` gives the
        observer only the unordered set, whose likelihood sums over every
        ordering of the rows.
    estimator : {"posterior", "indicator"}
        ``"posterior"`` averages ``1 - max_i pi_i(y)`` (lower variance);
        ``"indicator"`` averages the MAP miss indicator.
    """
    if spec.input_kind != "identity":
        raise ConfigError("anonymity analysis assumes identity input")
    L = spec.L
    if L > 6:
        raise ConfigError("anonymity analysis enumerates permutations and supports L <= 6")
    X = math.factorial(L)
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (X,) or np.any(pi < 0) or abs(pi.sum() - 1) > 1e-9:
        raise ConfigError("prior must be a distribution over L! permutations")
    if observe not in ("matrix", "set") or estimator not in ("posterior", "indicator"):
        raise ConfigError("observe must be matrix|set and estimator posterior|indicator")
    lik = spec.noise if likelihood is None else likelihood
    perms = permutation_table(L)
    with np.errstate(divide="ignore"):
        logprior = np.log(pi)
    rng = trial_rngs(seed, 1)[0]
    theta = spec.theta_true
    vals = []
    done = 0
    while done < n_samples:
        c = min(batch, n_samples - done)
        x = rng.choice(X, size=c, p=pi)
        v = sample_noise(spec.noise, (c, L, theta.shape[1]), rng)
        order = perms[x]
        y = theta[order] + v[np.arange(c)[:, None], order]
        ll = log_likelihoods(y, theta, lik)
        if observe == "set":
            # sum the likelihood over every storage order of the rows
            ll_all = log_likelihoods(y[:, perms], theta, lik)  # (c, X_tau, X_i)
            ll = logsumexp(ll_all, axis=1)
        post = _posterior_batch(logprior, ll)
        if estimator == "posterior":
            vals.append(1.0 - post.max(axis=1))
        else:
            vals.append((post.argmax(axis=1) != x).astype(float))
        done += c
    a = np.concatenate(vals)
    p = float(a.mean())
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return AnonymityReport(p, Z95 * se, p * X / (X - 1) if X > 1 else 0.0, int(a.size), se)


@dataclass
class BlackwellReport:
    base: NoiseModel
    garbled: NoiseModel
    p_error: tuple[float, float]
    p_error_se: tuple[float, float]
    cov_y: tuple[np.ndarray, np.ndarray]
    cov_min_eig: float
    cov_min_eig_se: float
    trace_bar: tuple[float, float]
    trace_bar_se: tuple[float, float]
    p_error_ordered: bool
    cov_ordered: bool
    trace_ordered: bool

    @property
    def ordered(self) -> bool:
        return self.p_error_ordered and self.cov_ordered and self.trace_ordered


def _cov_batches(y: np.ndarray, n_batches: int) -> list[np.ndarray]:
    return [np.cov(b, rowvar=False) for b in np.array_split(y, n_batches)]


def _trace_bar_mc(theta, noise, n, seed, n_batches=20):
    # batch means give the standard error of the Monte-Carlo trace
    Q = moment_matrix_Q(theta.size)
    per = max(n // n_batches, 1)
    traces = []
    for b in range(n_batches):
        R = noise_covariance_R(theta, noise, method="monte-carlo", n=per, seed=seed * 1000 + b)
        traces.append(delta_covariance(lyapunov_solve(Q, R), theta)[1])
    traces = np.array(traces)
    return float(traces.mean()), float(traces.std(ddof=1) / math.sqrt(n_batches))


def blackwell_compare(
    base: NoiseModel,
    kernel,
    pi,
    spec: SystemSpec,
    n_samples: int = 100_000,
    seed: int = 0,
    slack: float = 3.0,
) -> BlackwellReport:
    """Compare an observation channel with its garbling.

    Orderings are accepted within ``slack`` standard errors: MAP error of
    the base channel at most that of the garbled one, observation
    covariance of the garbled channel dominating in the Loewner order, and
    a smaller parameter-covariance trace for the base channel.
    """
    garbled = garble(base, kernel)
    L = spec.L
    specs = [SystemSpec(spec.theta_true, m, "identity") for m in (base, garbled)]
    reps = [map_error_probability(pi, s, n_samples, seed + i) for i, s in enumerate(specs)]
    # observation covariance under each channel
    rng = trial_rngs(seed, 2)
    X = math.factorial(L)
    perms = permutation_table(L)
    covs = []
    ys = []
    for s, r in zip(specs, rng):
        x = r.choice(X, size=n_samples, p=np.asarray(pi, dtype=float))
        v = sample_noise(s.noise, (n_samples, L, s.D), r)
        order = perms[x]
        y = (s.theta_true[order] + v[np.arange(n_samples)[:, None], order]).reshape(n_samples, -1)
        ys.append(y)
        covs.append(np.cov(y, rowvar=False))
    nb = 20
    diffs = [np.linalg.eigvalsh(np.atleast_2d(b1 - b0))[0] for b0, b1 in zip(_cov_batches(ys[0], nb), _cov_batches(ys[1], nb))]
    min_eig = float(np.linalg.eigvalsh(np.atleast_2d(covs[1] - covs[0]))[0])
    min_eig_se = float(np.std(diffs, ddof=1) / math.sqrt(nb))
    th = spec.theta_true
    if th.shape[1] == 1 and len(np.unique(th[:, 0])) == L:
        tb = [_trace_bar_mc(th[:, 0], m, n_samples, seed + 7 + i) for i, m in enumerate((base, garbled))]
    else:
        tb = [(float("nan"), float("nan"))] * 2
    pe = (reps[0].p_error, reps[1].p_error)
    pse = (reps[0].standard_error, reps[1].standard_error)
    p_ok = pe[0] <= pe[1] + slack * math.hypot(*pse)
    c_ok = min_eig >= -slack * min_eig_se
    t_ok = bool(tb[0][0] <= tb[1][0] + slack * math.hypot(tb[0][1], tb[1][1])) if np.isfinite(tb[0][0]) else True
    return BlackwellReport(
        base,
        garbled,
        pe,
        pse,
        (covs[0], covs[1]),
        min_eig,
        min_eig_se,
        (tb[0][0], tb[1][0]),
        (tb[0][1], tb[1][1]),
        bool(p_ok),
        bool(c_ok),
        t_ok,
    )


# ----------------------------------------------------------------------------
# Monte-Carlo filter statistics
# ----------------------------------------------------------------------------


@dataclass
class AsymptoticCovariance:
    """Scaled terminal covariances ``Cov / eps`` of coefficients and ordered parameters."""

    lam_cov: np.ndarray
    lam_cov_se: np.ndarray
    theta_cov: np.ndarray
    theta_cov_se: np.ndarray
    lam_mean: np.ndarray
    theta_mean: np.ndarray
    n_trials: int

    @property
    def theta_trace(self) -> float:
        return float(np.trace(self.theta_cov))

    @property
    def theta_trace_se(self) -> float:
        return float(np.sqrt(np.sum(np.diag(self.theta_cov_se) ** 2)))


def _cov_with_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    d = x - x.mean(axis=0)
    prod = d[:, :, None] * d[:, None, :]
    cov = prod.sum(0) / (n - 1)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n)
    return cov, se


def empirical_asymptotic_covariance(
    mode: str,
    spec: SystemSpec,
    eps: float,
    n_steps: int,
    n_trials: int,
    seed: int,
    init=None,
) -> AsymptoticCovariance:
    """Terminal covariance across independent trials, scaled by ``1/eps``.

    Filters start at ``init`` (default: the true parameters, so the
    terminal state samples the stationary law).
    """
    if mode != "sym-scalar":
        raise ConfigError("asymptotic covariance is implemented for the scalar symmetric filter")
    init = spec.theta_true if init is None else init
    cfg = FilterConfig(mode, eps, init, invert_every=0)
    lam, th = [], []
    for rng in trial_rngs(seed, n_trials):
        run = run_filters([cfg], spec, UniformIID(), n_steps, rng, log=False)[0]
        lam.append(run.final.coef.copy())
        th.append(run.estimate.members.ravel())
    lam = np.array(lam)
    th = np.array(th)
    lc, lse = _cov_with_se(lam)
    tc, tse = _cov_with_se(th)
    return AsymptoticCovariance(lc / eps, lse / eps, tc / eps, tse / eps, lam.mean(0), th.mean(0), n_trials)


@dataclass
class TrackingReport:
    mse: float
    standard_error: float
    n_trials: int


def tracking_mse(
    spec: SystemSpec,
    hyper: HyperChain,
    eps: float,
    mu: float | None = None,
    n_steps: int = 1_000_000,
    n_trials: int = 10,
    seed: int = 0,
    stride: int = 10,
) -> TrackingReport:
    """Time-averaged ``E|lambda(k) - lambda_true(k)|^2`` over the second half of the horizon.

    ``mu`` overrides the rate of ``hyper``; the sym-scalar filter starts at
    the transform of the initial chain state.  The squared error is sampled
    every ``stride`` steps.
    """
    if mu is not None:
        hyper = HyperChain(hyper.states, hyper.Q, mu, hyper.pi0)
    if spec.D != 1:
        raise ConfigError("tracking analysis uses the scalar symmetric filter (D=1)")
    L = spec.L
    lam_states = np.array([np.concatenate(full_transform(s)) for s in hyper.states])
    per_trial = []
    for rng in trial_rngs(seed, n_trials):
        lam = None
        acc = 0.0
        cnt = 0
        k0 = 0
        for traj in iter_chunks(spec, UniformIID(), n_steps, rng, hyper):
            if lam is None:
                lam = lam_states[traj.state_index[0]].copy()
            n = len(traj)
            nlog = (k0 + n) // stride - k0 // stride
            log = np.empty((max(nlog, 1), L))
            status = _kernels.sym_scalar_run(
                np.ascontiguousarray(traj.psi[:, 0, 0]), np.ascontiguousarray(traj.y[:, :, 0]), lam, eps, k0, stride, log
            )
            if status >= 0:
                raise Diverged(f"tracking filter diverged at step {status}", int(status))
            ks = (k0 // stride + 1) * stride + stride * np.arange(nlog)
            keep = ks > n_steps // 2
            if np.any(keep):
                truth = lam_states[traj.state_index[ks[keep] - k0 - 1]]
                acc += float(np.sum((log[:nlog][keep] - truth) ** 2))
                cnt += int(keep.sum())
            k0 += n
        per_trial.append(acc / max(cnt, 1))
    per_trial = np.array(per_trial)
    se = float(per_trial.std(ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else float("nan")
    return TrackingReport(float(per_trial.mean()), se, n_trials)
