"""Online estimators for anonymized observation sets.

Modes
-----
``sym-scalar``
    LMS bank on the elementary symmetric values of the observed set
    (``D == 1``), one decoupled scalar filter per degree.
``sym-vector``
    LMS on the monomial symmetric coordinates ``eta`` with the exact
    quadratic gradient ``A^T (z - A eta)``.
``naive``
    ``D`` independent scalar banks, one per component; loses the pairing
    between components and can produce ghost rows.
``direct-sgd``
    Gradient descent directly on the non-convex parameter objective.
``rem``
    Recursive EM over all ``L!`` permutations with a stated noise model.
``classical``
    Labeled LMS that sees the hidden ordering (oracle baseline).

Inversion back to a parameter set runs only on logging steps; the
estimate is never fed back into the coefficient recursion.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import ConfigError, Diverged, IllConditioned
from .simgen import (
    Gaussian,
    HyperChain,
    Laplacian,
    NoiseModel,
    PermutationModel,
    Schedule,
    SystemSpec,
    iter_chunks,
    permutation_table,
)
from .symcore import (
    ParameterSet,
    _parent_table,
    block_length,
    degree_projection,
    design_matrix,
    full_transform,
    invert_scalar,
    invert_vector,
    monomial_transform,
    multisets,
    naive_transform,
)

__all__ = [
    "MODES",
    "FilterConfig",
    "FilterState",
    "EMState",
    "FilterRun",
    "init_state",
    "init_em_state",
    "sym_scalar_step",
    "sym_vector_step",
    "classical_lms_step",
    "direct_sgd_step",
    "naive_step",
    "rem_step",
    "extract_estimate",
    "run_filter",
    "run_filters",
]

MODES = ("sym-scalar", "sym-vector", "classical", "direct-sgd", "naive", "rem")
GUARD = _kernels.GUARD
MAX_REM_L = 6
WARMUP = 200
IDENT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FilterConfig:
    """Settings of one estimator.

    Parameters
    ----------
    mode : str
        One of ``MODES``.
    eps : float
        Constant step size.
    init : array_like, optional
        Initial parameter matrix ``theta(0)`` of shape (L, D).  Symmetric
        modes start their coefficients at its transform, or at zero when
        omitted.  Required for ``direct-sgd`` and ``rem``.
    invert_every : int
        Logging and inversion cadence; 0 records only the terminal state.
    assumed_noise : NoiseModel
        Noise law assumed by ``rem`` (Gaussian or Laplacian).
    prior : array_like, optional
        Permutation prior for ``rem`` over the lexicographic table; uniform
        when omitted.
    """

    mode: str
    eps: float
    init: np.ndarray | None = None
    invert_every: int = 100
    assumed_noise: NoiseModel = field(default_factory=lambda: Gaussian(1.0))
    prior: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ConfigError(f"step size must be positive and finite, got {self.eps}")
        if self.invert_every < 0:
            raise ConfigError("invert_every must be >= 0")
        if self.init is not None:
            init = np.asarray(self.init, dtype=float)
            if init.ndim == 1:
                init = init[:, None]
            object.__setattr__(self, "init", init)
        elif self.mode in ("direct-sgd", "rem"):
            raise ConfigError(f"mode {self.mode} needs an initial parameter matrix")
        if self.mode == "rem" and not isinstance(self.assumed_noise, (Gaussian, Laplacian)):
            raise ConfigError("rem needs a Gaussian or Laplacian assumed noise model")


@dataclass
class FilterState:
    """Coefficient or parameter estimate plus inversion diagnostics.

    ``coef`` holds the stacked coefficients ``lambda`` (sym-scalar), the
    stacked monomial coordinates ``eta`` (sym-vector), a ``(D, L)`` array
    of per-component coefficients (naive) or the ``(L, D)`` parameter
    matrix (classical, direct-sgd, rem).
    """

    mode: str
    L: int
    D: int
    k: int
    coef: np.ndarray
    last_inverted: ParameterSet | None = None
    complex_roots: bool = False
    cond: float = float("nan")
    ill_conditioned: bool = False


@dataclass
class EMState:
    """Recursive EM estimate; ``posterior`` is the last step's permutation weights."""

    theta_hat: np.ndarray
    prior: np.ndarray
    assumed_noise: NoiseModel
    k: int = 0
    posterior: np.ndarray | None = None


# ----------------------------------------------------------------------------
# layout helpers
# ----------------------------------------------------------------------------


def _eta_layout(L: int, D: int):
    eta_off = np.zeros(L + 1, dtype=np.int64)
    blk_off = np.zeros(L + 1, dtype=np.int64)
    parents, lasts = [], []
    for l in range(1, L + 1):
        eta_off[l] = eta_off[l - 1] + len(multisets(D, l))
        blk_off[l] = blk_off[l - 1] + block_length(D, l)
        p, q = _parent_table(D, l)
        parents.append(p)
        lasts.append(q)
    return eta_off, blk_off, np.concatenate(parents), np.concatenate(lasts)


def _split(flat: np.ndarray, off: np.ndarray) -> list[np.ndarray]:
    return [flat[off[i] : off[i + 1]] for i in range(len(off) - 1)]


def _csc_design(psi: np.ndarray, L: int):
    colptr, rowidx, vals = [0], [], []
    for l in range(1, L + 1):
        A = design_matrix(psi, l)
        for c in range(A.shape[1]):
            nz = np.nonzero(A[:, c])[0]
            rowidx.extend(nz.tolist())
            vals.extend(A[nz, c].tolist())
            colptr.append(len(rowidx))
    return np.array(colptr, dtype=np.int64), np.array(rowidx, dtype=np.int64), np.array(vals, dtype=float)


# ----------------------------------------------------------------------------
# state construction
# ----------------------------------------------------------------------------


def init_state(config: FilterConfig, L: int, D: int) -> FilterState:
    """Initial state; symmetric modes start at the transform of ``config.init``."""
    init = config.init
    if init is not None and init.shape != (L, D):
        raise ConfigError(f"initial parameters must have shape ({L}, {D}), got {init.shape}")
    mode = config.mode
    if mode in ("sym-scalar", "direct-sgd") and D != 1:
        raise ConfigError(f"mode {mode} needs scalar parameters (D=1)")
    if mode == "sym-scalar":
        coef = np.concatenate(full_transform(init)) if init is not None else np.zeros(L)
    elif mode == "sym-vector":
        n_eta = sum(len(multisets(D, l)) for l in range(1, L + 1))
        coef = np.concatenate(monomial_transform(init)) if init is not None else np.zeros(n_eta)
    elif mode == "naive":
        coef = naive_transform(init) if init is not None else np.zeros((D, L))
    else:
        if mode == "rem" and L > MAX_REM_L:
            raise ConfigError(f"rem enumerates permutations and supports L <= {MAX_REM_L}")
        coef = init.copy() if init is not None else np.zeros((L, D))
    state = FilterState(mode, L, D, 0, np.array(coef, dtype=float))
    _refresh(state)
    return state


def init_em_state(config: FilterConfig, L: int) -> EMState:
    X = math.factorial(L)
    prior = np.full(X, 1.0 / X) if config.prior is None else np.asarray(config.prior, dtype=float)
    if prior.shape != (X,) or np.any(prior < 0) or abs(prior.sum() - 1) > 1e-9:
        raise ConfigError("permutation prior must be a distribution over L! permutations")
    return EMState(np.array(config.init, dtype=float), prior, config.assumed_noise)


# ----------------------------------------------------------------------------
# inversion
# ----------------------------------------------------------------------------


def _rank_pair(columns: list[np.ndarray]) -> ParameterSet:
    # pair the j-th smallest factor of every component into one row
    return ParameterSet(np.column_stack([np.sort(c) for c in columns]))


def _invert(mode: str, coef: np.ndarray, L: int, D: int):
    """Returns (estimate, complex flag, condition number)."""
    if mode == "sym-scalar":
        inv = invert_scalar(coef)
        return inv.theta, inv.has_complex, float("nan")
    if mode == "sym-vector":
        eta_off, _, _, _ = _eta_layout(L, D)
        lam = [degree_projection(e, D, l + 1) for l, e in enumerate(_split(coef, eta_off))]
        inv = invert_vector(lam)
        cond = float(inv.cond.max()) if inv.cond.size else float("nan")
        return inv.theta, inv.has_complex, cond
    if mode == "naive":
        invs = [invert_scalar(coef[j]) for j in range(D)]
        return _rank_pair([i.theta.members[:, 0] for i in invs]), any(i.has_complex for i in invs), float("nan")
    return ParameterSet(coef.reshape(L, D)), False, float("nan")


def _refresh(state: FilterState) -> None:
    try:
        est, cplx, cond = _invert(state.mode, state.coef, state.L, state.D)
    except IllConditioned as exc:
        state.ill_conditioned = True
        state.cond = float(exc.cond) if exc.cond is not None else float("inf")
        return
    state.last_inverted = est
    state.complex_roots = cplx
    state.cond = cond
    state.ill_conditioned = False


def extract_estimate(state: FilterState | EMState) -> ParameterSet:
    """Current parameter-set estimate in canonical order.

    For symmetric modes this inverts the current coefficients; if the
    inversion is ill-conditioned the last successful estimate is returned
    and ``state.ill_conditioned`` is set.
    """
    if isinstance(state, EMState):
        return ParameterSet(state.theta_hat)
    _refresh(state)
    if state.last_inverted is None:
        raise IllConditioned("no successful inversion available yet", state.cond)
    return state.last_inverted


# ----------------------------------------------------------------------------
# single-record steps
# ----------------------------------------------------------------------------


def _check_finite(coef: np.ndarray, k: int) -> None:
    if not np.all(np.abs(coef) <= GUARD):
        raise Diverged(f"state left the finite range at step {k}", k)


def _advance(state: FilterState, coef: np.ndarray, config: FilterConfig) -> FilterState:
    k = state.k + 1
    _check_finite(coef, k)
    new = replace(state, k=k, coef=coef)
    if config.invert_every and k % config.invert_every == 0:
        _refresh(new)
    return new


def _check_mode(state: FilterState, config: FilterConfig, mode: str) -> None:
    if state.mode != mode or config.mode != mode:
        raise ConfigError(f"expected mode {mode}, got state {state.mode} / config {config.mode}")


def sym_scalar_step(state: FilterState, record, config: FilterConfig) -> FilterState:
    """One LMS update per degree: ``lam_l += eps psi^l (z_l - psi^l lam_l)``."""
    _check_mode(state, config, "sym-scalar")
    psi = float(np.asarray(record.psi).reshape(-1)[0])
    z = np.concatenate(full_transform(np.asarray(record.y_set).reshape(-1)))
    a = psi ** np.arange(1, state.L + 1)
    coef = state.coef + config.eps * a * (z - a * state.coef)
    return _advance(state, coef, config)


def sym_vector_step(state: FilterState, record, config: FilterConfig) -> FilterState:
    """Exact-gradient LMS on the monomial coordinates of every degree."""
    _check_mode(state, config, "sym-vector")
    L, D = state.L, state.D
    eta_off, _, _, _ = _eta_layout(L, D)
    z = full_transform(np.asarray(record.y_set).reshape(L, D))
    psi = np.asarray(record.psi).reshape(D, D)
    parts = []
    for l, eta in enumerate(_split(state.coef, eta_off), start=1):
        A = design_matrix(psi, l)
        parts.append(eta + config.eps * (A.T @ (z[l - 1] - A @ eta)))
    return _advance(state, np.concatenate(parts), config)


def classical_lms_step(state: FilterState, record, config: FilterConfig) -> FilterState:
    """Labeled LMS ``theta_l += eps psi^T (y_l - psi theta_l)``; needs the hidden ordering."""
    _check_mode(state, config, "classical")
    if record.perm is None:
        raise ValueError("classical LMS needs labeled records (hidden permutation missing)")
    L, D = state.L, state.D
    y = np.asarray(record.y_set).reshape(L, D)
    labeled = np.empty_like(y)
    labeled[np.asarray(record.perm)] = y
    psi = np.asarray(record.psi).reshape(D, D)
    theta = state.coef.reshape(L, D)
    coef = theta + config.eps * (labeled - theta @ psi.T) @ psi
    return _advance(state, coef, config)


def direct_sgd_step(state: FilterState, record, config: FilterConfig) -> FilterState:
    """Gradient step on ``sum_l (z_l - psi^l e_l(theta))^2`` for scalar members."""
    _check_mode(state, config, "direct-sgd")
    L = state.L
    theta = state.coef.reshape(L)
    psi = float(np.asarray(record.psi).reshape(-1)[0])
    z = np.concatenate(full_transform(np.asarray(record.y_set).reshape(-1)))
    # e_l(theta) for l=1..L, in the member order of theta (not canonical)
    e = np.zeros(L + 1)
    e[0] = 1.0
    for i in range(L):
        for l in range(min(i + 1, L), 0, -1):
            e[l] += theta[i] * e[l - 1]
    a = psi ** np.arange(1, L + 1)
    r = a * (z - a * e[1:])
    ex = np.empty((L, L))
    for j in range(L):
        ex[j, 0] = 1.0
        for m in range(1, L):
            ex[j, m] = e[m] - theta[j] * ex[j, m - 1]
    grad = -2.0 * ex @ r
    coef = (theta - config.eps * grad).reshape(L, 1)
    return _advance(state, coef, config)


def _require_diagonal(psi: np.ndarray) -> None:
    if np.any(psi - np.diag(np.diag(psi))):
        raise ConfigError("naive pipeline needs a diagonal input matrix (one scalar regressor per component)")


def naive_step(state: FilterState, record, config: FilterConfig) -> FilterState:
    """Independent scalar banks per component with regressor ``psi[j, j]``."""
    _check_mode(state, config, "naive")
    L, D = state.L, state.D
    psi = np.asarray(record.psi).reshape(D, D)
    _require_diagonal(psi)
    y = np.asarray(record.y_set).reshape(L, D)
    coef = state.coef.copy()
    for j in range(D):
        z = np.concatenate(full_transform(y[:, j]))
        a = psi[j, j] ** np.arange(1, L + 1)
        coef[j] = coef[j] + config.eps * a * (z - a * coef[j])
    return _advance(state, coef, config)


def _noise_score(model: NoiseModel):
    if isinstance(model, Gaussian):
        inv = 1.0 / model.sigma**2
        return (lambda r: -0.5 * inv * np.sum(r * r, axis=(-2, -1))), (lambda r: inv * r)
    inv = 1.0 / model.scale
    return (lambda r: -inv * np.sum(np.abs(r), axis=(-2, -1))), (lambda r: inv * np.sign(r))


def rem_step(state: EMState, record, config: FilterConfig) -> EMState:
    """Posterior-weighted score ascent over all permutations (log-space weights)."""
    theta = state.theta_hat
    L, D = theta.shape
    perms = permutation_table(L)
    psi = np.asarray(record.psi).reshape(D, D)
    y = np.asarray(record.y_set).reshape(L, D)
    pred = theta @ psi.T
    resid = y[None, :, :] - pred[perms]  # (X, L, D): row l compared to system perms[i, l]
    loglik, score = _noise_score(state.assumed_noise)
    logw = np.log(state.prior) + loglik(resid)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    s = score(resid) @ psi  # psi^T applied to each residual row
    grad = np.zeros_like(theta)
    for i in range(perms.shape[0]):
        np.add.at(grad, perms[i], w[i] * s[i])
    new_theta = theta + config.eps * grad
    if not np.all(np.abs(new_theta) <= GUARD):
        raise Diverged(f"state left the finite range at step {state.k + 1}", state.k + 1)
    return replace(state, theta_hat=new_theta, k=state.k + 1, posterior=w)


# ----------------------------------------------------------------------------
# streaming driver
# ----------------------------------------------------------------------------


@dataclass
class FilterRun:
    """Logged trajectory of one filter.

    ``k[i]`` is the step after which ``coef[i]`` and ``theta[i]`` were
    recorded (row 0 is the initial state).  ``final`` is the terminal state.
    """

    config: FilterConfig
    k: np.ndarray
    coef: np.ndarray
    theta: np.ndarray
    complex_roots: np.ndarray
    ill_conditioned: np.ndarray
    cond: np.ndarray
    final: FilterState

    @property
    def estimate(self) -> ParameterSet:
        return self.final.last_inverted


class _Runner:
    def __init__(self, config: FilterConfig, spec: SystemSpec, n: int, log: bool):
        self.config = config
        self.L, self.D = spec.L, spec.D
        self.state = init_state(config, self.L, self.D)
        self.every = config.invert_every if log else 0
        self.snaps = [self.state.coef.ravel().copy()]
        self.ks = [0]
        mode = config.mode
        if mode == "naive":
            fixed = spec.fixed_input
            if spec.input_kind == "gaussian" and self.D > 1:
                raise ConfigError("naive pipeline needs a diagonal input matrix (use diag-gaussian)")
            if fixed is not None:
                _require_diagonal(fixed)
        if mode == "sym-vector":
            self.eta_off, self.blk_off, self.parent, self.last = _eta_layout(self.L, self.D)
            self.fixed = spec.fixed_input
            if self.fixed is not None:
                self.csc = _csc_design(self.fixed, self.L)
        if mode == "rem":
            X = math.factorial(self.L)
            prior = np.full(X, 1.0 / X) if config.prior is None else np.asarray(config.prior, dtype=float)
            self.perms = np.ascontiguousarray(permutation_table(self.L))
            self.logprior = np.log(prior)
            noise = config.assumed_noise
            self.noise_kind = 0 if isinstance(noise, Gaussian) else 1
            self.noise_param = float(noise.sigma)
        self.warned = False

    def _identifiability(self, traj) -> None:
        # smallest eigenvalue of the empirical E[A^T A] over a warm-up window
        self.warned = True
        if self.D < 3:
            return
        n = min(WARMUP, len(traj))
        for l in range(1, self.L + 1):
            if self.fixed is not None:
                A = design_matrix(self.fixed, l)
                G = A.T @ A
            else:
                G = sum(design_matrix(traj.psi[i], l).T @ design_matrix(traj.psi[i], l) for i in range(n)) / n
            lo = float(np.linalg.eigvalsh(G)[0])
            if lo < IDENT_TOL:
                warnings.warn(
                    f"monomial coordinates of degree {l} are not identifiable from this input "
                    f"(min eigenvalue {lo:.2e}); the coefficient blocks still are",
                    RuntimeWarning,
                    stacklevel=4,
                )
                return

    def feed(self, traj) -> None:
        cfg, st = self.config, self.state
        n = len(traj)
        k0 = st.k
        every = self.every
        nlog = (k0 + n) // every - k0 // every if every else 0
        width = st.coef.size
        log = np.empty((max(nlog, 1), width))
        mode = cfg.mode
        eps = float(cfg.eps)
        if mode == "sym-scalar":
            status = _kernels.sym_scalar_run(
                np.ascontiguousarray(traj.psi[:, 0, 0]), np.ascontiguousarray(traj.y[:, :, 0]), st.coef, eps, k0, every, log
            )
        elif mode == "sym-vector":
            if not self.warned:
                self._identifiability(traj)
            if self.fixed is not None:
                colptr, rowidx, vals = self.csc
                status = _kernels.sym_vector_fixed_run(
                    traj.y, st.coef, self.eta_off, self.blk_off, colptr, rowidx, vals, eps, k0, every, log
                )
            else:
                status = _kernels.sym_vector_dense_run(
                    traj.psi, traj.y, st.coef, self.eta_off, self.blk_off, self.parent, self.last, eps, k0, every, log
                )
        elif mode == "naive":
            status = -1
            logs = []
            for j in range(self.D):
                lj = np.empty((max(nlog, 1), self.L))
                cj = np.ascontiguousarray(st.coef[j])
                s = _kernels.sym_scalar_run(
                    np.ascontiguousarray(traj.psi[:, j, j]), np.ascontiguousarray(traj.y[:, :, j]), cj, eps, k0, every, lj
                )
                st.coef[j] = cj
                logs.append(lj)
                if s >= 0:
                    status = s if status < 0 else min(status, s)
            log = np.stack(logs, axis=1).reshape(max(nlog, 1), -1)
        elif mode == "direct-sgd":
            th = np.ascontiguousarray(st.coef[:, 0])
            status = _kernels.direct_sgd_run(
                np.ascontiguousarray(traj.psi[:, 0, 0]), np.ascontiguousarray(traj.y[:, :, 0]), th, eps, k0, every, log
            )
            st.coef[:, 0] = th
        elif mode == "rem":
            status = _kernels.rem_run(
                traj.psi, traj.y, st.coef, self.perms, self.logprior, self.noise_kind, self.noise_param, eps, k0, every, log
            )
        else:
            status = _kernels.classical_run(traj.psi, np.ascontiguousarray(traj.labeled()), st.coef, eps, k0, every, log)
        if status >= 0:
            raise Diverged(f"{mode} filter left the finite range at step {status}", int(status))
        st.k = k0 + n
        if nlog:
            self.snaps.extend(log[:nlog])
            first = (k0 // every + 1) * every
            self.ks.extend(range(first, first + nlog * every, every))

    def finish(self) -> FilterRun:
        st = self.state
        _refresh(st)
        thetas, cplx, ill, conds = [], [], [], []
        prev = None
        shape = st.coef.shape
        for snap in self.snaps:
            try:
                est, c, cond = _invert(st.mode, snap.reshape(shape), self.L, self.D)
                bad = False
                prev = est
            except IllConditioned as exc:
                est, c, cond, bad = prev, False, float(exc.cond or np.inf), True
            thetas.append(est.members if est is not None else np.full((self.L, self.D), np.nan))
            cplx.append(c)
            ill.append(bad)
            conds.append(cond)
        return FilterRun(
            self.config,
            np.array(self.ks, dtype=np.int64),
            np.array(self.snaps),
            np.array(thetas),
            np.array(cplx),
            np.array(ill),
            np.array(conds),
            st,
        )


def run_filters(
    configs: list[FilterConfig],
    spec: SystemSpec,
    perm: PermutationModel,
    n: int,
    rng: np.random.Generator | int,
    hyper: HyperChain | Schedule | None = None,
    log: bool = True,
) -> list[FilterRun]:
    """Run several filters on one shared simulated trajectory of ``n`` records.

    With ``log=False`` only the initial and terminal states are kept.
    """
    runners = [_Runner(c, spec, n, log) for c in configs]
    for traj in iter_chunks(spec, perm, n, rng, hyper):
        for r in runners:
            r.feed(traj)
    return [r.finish() for r in runners]


def run_filter(config: FilterConfig, spec: SystemSpec, perm: PermutationModel, n: int, rng, hyper=None, log=True) -> FilterRun:
    return run_filters([config], spec, perm, n, rng, hyper, log)[0]
