"""Simulation of anonymized observations from parallel linear systems.

At each step ``k`` a shared input matrix ``psi(k)`` drives ``L`` systems,

    y_l(k) = psi(k) theta_{sigma_k(l)}(k) + v_{sigma_k(l)}(k),

and the rows of ``y(k)`` are stored in the order given by the hidden
permutation ``sigma_k``.  Data are produced in fixed-size chunks so that
long horizons stream through the filters without materializing every
record.
"""

from __future__ import annotations

import contextlib
import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

from . import _kernels
from .errors import ConfigError

__all__ = [
    "CHUNK",
    "Gaussian",
    "Laplacian",
    "DiscretePMF",
    "NoiseModel",
    "UniformIID",
    "CategoricalIID",
    "MarkovPerm",
    "PermutationModel",
    "HyperChain",
    "Schedule",
    "SystemSpec",
    "ObservationRecord",
    "Trajectory",
    "MatrixKernel",
    "GaussianKernel",
    "sample_noise",
    "permutation_table",
    "generate_trajectory",
    "iter_chunks",
    "trial_rngs",
    "garble",
    "write_trajectory_csv",
]

CHUNK = 65536
MAX_PERM_L = 8


# ----------------------------------------------------------------------------
# noise
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    """Zero-mean Gaussian noise with standard deviation ``sigma``."""

    sigma: float

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"noise std must be finite and >= 0, got {self.sigma}")

    @property
    def variance(self) -> float:
        return self.sigma**2


@dataclass(frozen=True)
class Laplacian:
    """Zero-mean Laplacian noise parametrized by its standard deviation.

    The scale is ``b = sigma / sqrt(2)``, so that ``Var = 2 b^2 = sigma^2``.
    """

    sigma: float

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"noise std must be finite and >= 0, got {self.sigma}")

    @property
    def scale(self) -> float:
        return self.sigma / math.sqrt(2.0)

    @property
    def variance(self) -> float:
        return self.sigma**2


@dataclass(frozen=True)
class DiscretePMF:
    """Finite-support noise; the mean must vanish to 1e-12."""

    support: tuple
    probs: tuple

    def __post_init__(self):
        x = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if x.ndim != 1 or x.shape != p.shape or x.size == 0:
            raise ConfigError("support and probabilities must be equal-length 1-D sequences")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError("probabilities must be nonnegative and sum to 1")
        if abs(float(p @ x)) > 1e-12:
            raise ConfigError(f"noise pmf must have zero mean, got {float(p @ x):.3g}")
        object.__setattr__(self, "support", tuple(map(float, x)))
        object.__setattr__(self, "probs", tuple(map(float, p)))

    @property
    def variance(self) -> float:
        x = np.asarray(self.support)
        return float(np.asarray(self.probs) @ x**2)


NoiseModel = Gaussian | Laplacian | DiscretePMF


def sample_noise(model: NoiseModel, shape, rng: np.random.Generator) -> np.ndarray:
    """Draw iid noise entries of the given shape."""
    if isinstance(model, Gaussian):
        if model.sigma == 0:
            return np.zeros(shape)
        return rng.normal(0.0, model.sigma, size=shape)
    if isinstance(model, Laplacian):
        if model.sigma == 0:
            return np.zeros(shape)
        return rng.laplace(0.0, model.scale, size=shape)
    if isinstance(model, DiscretePMF):
        return rng.choice(np.asarray(model.support), size=shape, p=np.asarray(model.probs))
    raise TypeError(f"unknown noise model {model!r}")


# ----------------------------------------------------------------------------
# permutations and Markov chains
# ----------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _perm_table(L: int) -> np.ndarray:
    t = np.array(list(itertools.permutations(range(L))), dtype=np.int64)
    t.setflags(write=False)
    return t


def permutation_table(L: int) -> np.ndarray:
    """All ``L!`` permutations in lexicographic order; row 0 is the identity."""
    if not 1 <= L <= MAX_PERM_L:
        raise ConfigError(f"permutation enumeration supports 1 <= L <= {MAX_PERM_L}, got {L}")
    return _perm_table(L)


def _check_distribution(pi, size: int, what: str) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (size,):
        raise ConfigError(f"{what} must have length {size}, got shape {pi.shape}")
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ConfigError(f"{what} must be nonnegative and sum to 1")
    return pi


def _check_generator(Q, mu: float) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    m = Q.shape[0]
    if Q.shape != (m, m):
        raise ConfigError("generator must be square")
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        raise ConfigError("generator off-diagonal entries must be >= 0")
    if np.max(np.abs(Q.sum(axis=1))) > 1e-9:
        raise ConfigError("generator rows must sum to 0")
    if mu < 0 or mu * np.max(np.abs(np.diag(Q))) > 1 + 1e-12:
        raise ConfigError("rate too large: mu * max|q_ii| must be <= 1")
    return Q


@dataclass(frozen=True)
class UniformIID:
    """Every permutation equally likely, independently at each step."""


@dataclass(frozen=True)
class CategoricalIID:
    """Independent permutations drawn from ``pi`` over the lexicographic table."""

    pi: tuple

    def __post_init__(self):
        object.__setattr__(self, "pi", tuple(np.asarray(self.pi, dtype=float).ravel()))


@dataclass(frozen=True)
class MarkovPerm:
    """Permutation index following a chain with transition ``I + mu Q``."""

    pi0: tuple
    Q: tuple
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "pi0", tuple(np.asarray(self.pi0, dtype=float).ravel()))
        object.__setattr__(self, "Q", tuple(map(tuple, np.asarray(self.Q, dtype=float))))
        _check_generator(self.Q, self.mu)

    @property
    def P(self) -> np.ndarray:
        Q = np.asarray(self.Q)
        return np.eye(Q.shape[0]) + self.mu * Q


PermutationModel = UniformIID | CategoricalIID | MarkovPerm


@dataclass(frozen=True, eq=False)
class HyperChain:
    """Parameter matrix driven by a slow Markov chain over ``states``.

    ``pi0`` is the initial distribution (defaults to a point mass on state 0).
    The transition ``I + mu Q`` is applied before each emission.
    """

    states: np.ndarray
    Q: np.ndarray
    mu: float
    pi0: np.ndarray | None = None

    def __post_init__(self):
        S = np.asarray(self.states, dtype=float)
        if S.ndim == 2:
            S = S[:, :, None]
        if S.ndim != 3:
            raise ConfigError("hyper states must have shape (m, L, D)")
        object.__setattr__(self, "states", S)
        Q = _check_generator(self.Q, self.mu)
        if Q.shape[0] != S.shape[0]:
            raise ConfigError("generator size must match number of states")
        object.__setattr__(self, "Q", Q)
        pi0 = np.eye(S.shape[0])[0] if self.pi0 is None else self.pi0
        object.__setattr__(self, "pi0", _check_distribution(pi0, S.shape[0], "initial distribution"))

    @property
    def P(self) -> np.ndarray:
        return np.eye(self.Q.shape[0]) + self.mu * self.Q


@dataclass(frozen=True, eq=False)
class Schedule:
    """Deterministic parameter switches: ``states[i]`` is active for ``k > breaks[i-1]``."""

    states: np.ndarray
    breaks: tuple

    def __post_init__(self):
        S = np.asarray(self.states, dtype=float)
        if S.ndim == 2:
            S = S[:, :, None]
        if S.ndim != 3 or len(self.breaks) != S.shape[0] - 1:
            raise ConfigError("schedule needs m states of shape (L, D) and m-1 breakpoints")
        if list(self.breaks) != sorted(self.breaks):
            raise ConfigError("breakpoints must be increasing")
        object.__setattr__(self, "states", S)
        object.__setattr__(self, "breaks", tuple(int(b) for b in self.breaks))

    def index(self, k: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.breaks), k, side="left")


# ----------------------------------------------------------------------------
# system and records
# ----------------------------------------------------------------------------

INPUT_KINDS = ("gaussian", "identity", "fixed", "diag-gaussian")


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Ground truth and input/noise models.

    ``input_kind`` is one of ``"gaussian"`` (iid N(0,1) entries),
    ``"identity"``, ``"fixed"`` (uses ``psi``) or ``"diag-gaussian"``
    (iid N(0,1) diagonal, zero off-diagonal).
    """

    theta_true: np.ndarray
    noise: NoiseModel = field(default_factory=lambda: Gaussian(0.0))
    input_kind: str = "gaussian"
    psi: np.ndarray | None = None

    def __post_init__(self):
        th = np.asarray(self.theta_true, dtype=float)
        if th.ndim == 1:
            th = th[:, None]
        if th.ndim != 2 or th.size == 0 or not np.all(np.isfinite(th)):
            raise ConfigError("theta_true must be a finite (L, D) matrix")
        object.__setattr__(self, "theta_true", th)
        if self.input_kind not in INPUT_KINDS:
            raise ConfigError(f"input kind must be one of {INPUT_KINDS}, got {self.input_kind!r}")
        if self.input_kind == "fixed":
            psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
            if psi.shape != (self.D, self.D) or not np.all(np.isfinite(psi)):
                raise ConfigError(f"fixed input must be a finite {self.D}x{self.D} matrix")
            object.__setattr__(self, "psi", psi)

    @property
    def L(self) -> int:
        return self.theta_true.shape[0]

    @property
    def D(self) -> int:
        return self.theta_true.shape[1]

    @property
    def fixed_input(self) -> np.ndarray | None:
        if self.input_kind == "identity":
            return np.eye(self.D)
        if self.input_kind == "fixed":
            return self.psi
        return None


@dataclass(frozen=True)
class ObservationRecord:
    """One time step; ``perm``, ``noise`` and ``theta`` are hidden diagnostics."""

    k: int
    psi: np.ndarray
    y_set: np.ndarray
    perm: np.ndarray | None = None
    noise: np.ndarray | None = None
    theta: np.ndarray | None = None


@dataclass
class Trajectory:
    """Array form of consecutive records ``k0+1 .. k0+n``.

    ``y[k, l] = psi[k] @ theta[k, perm[k, l]] + noise[k, perm[k, l]]``.
    """

    k0: int
    psi: np.ndarray  # (n, D, D)
    y: np.ndarray  # (n, L, D), rows in hidden-permutation order
    perm_index: np.ndarray  # (n,), index into permutation_table(L)
    noise: np.ndarray  # (n, L, D), indexed by system
    state_index: np.ndarray  # (n,), hyper-state index (zeros when stationary)
    states: np.ndarray  # (m, L, D)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def L(self) -> int:
        return self.y.shape[1]

    @property
    def D(self) -> int:
        return self.y.shape[2]

    @property
    def perm(self) -> np.ndarray:
        return permutation_table(self.L)[self.perm_index]

    @property
    def theta(self) -> np.ndarray:
        return self.states[self.state_index]

    def labeled(self) -> np.ndarray:
        """Observations ordered by system, ``psi theta_l + v_l``."""
        return np.einsum("kij,klj->kli", self.psi, self.theta) + self.noise

    def __getitem__(self, i: int) -> ObservationRecord:
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i = i % len(self)
        return ObservationRecord(
            k=self.k0 + i + 1,
            psi=self.psi[i],
            y_set=self.y[i],
            perm=self.perm[i],
            noise=self.noise[i],
            theta=self.states[self.state_index[i]],
        )

    def __iter__(self) -> Iterator[ObservationRecord]:
        for i in range(len(self)):
            yield self[i]


def trial_rngs(seed: int, n_trials: int) -> list[np.random.Generator]:
    """Independent generators, one per trial index."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n_trials)]


def _sample_inputs(spec: SystemSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    D = spec.D
    if spec.input_kind == "gaussian":
        return rng.standard_normal((n, D, D))
    if spec.input_kind == "diag-gaussian":
        out = np.zeros((n, D, D))
        idx = np.arange(D)
        out[:, idx, idx] = rng.standard_normal((n, D))
        return out
    return np.broadcast_to(spec.fixed_input, (n, D, D))


def _validate_perm_model(perm: PermutationModel, L: int) -> None:
    X = math.factorial(L)
    if isinstance(perm, CategoricalIID):
        _check_distribution(perm.pi, X, "permutation prior")
    elif isinstance(perm, MarkovPerm):
        _check_distribution(perm.pi0, X, "initial permutation distribution")
        if len(perm.Q) != X:
            raise ConfigError(f"permutation generator must be {X}x{X}")
    elif not isinstance(perm, UniformIID):
        raise ConfigError(f"unknown permutation model {perm!r}")


def iter_chunks(
    spec: SystemSpec,
    perm: PermutationModel,
    n: int,
    rng: np.random.Generator | int,
    hyper: HyperChain | Schedule | None = None,
    chunk: int = CHUNK,
) -> Iterator[Trajectory]:
    """Stream a trajectory of ``n`` records in chunks of at most ``chunk``."""
    if n < 1:
        raise ConfigError("trajectory length must be >= 1")
    L, D = spec.L, spec.D
    permutation_table(L)
    _validate_perm_model(perm, L)
    if isinstance(rng, (int, np.integer)):
        rng = trial_rngs(int(rng), 1)[0]
    if hyper is None:
        states = spec.theta_true[None]
    else:
        states = hyper.states
        if states.shape[1:] != (L, D):
            raise ConfigError("hyper states must match (L, D) of the system")
    X = math.factorial(L)
    perm_state = None
    if isinstance(perm, MarkovPerm):
        perm_state = int(rng.choice(X, p=np.asarray(perm.pi0)))
        perm_cum = np.cumsum(perm.P, axis=1)
    hyper_state = None
    if isinstance(hyper, HyperChain):
        hyper_state = int(rng.choice(hyper.states.shape[0], p=hyper.pi0))
        hyper_cum = np.cumsum(hyper.P, axis=1)
    k0 = 0
    while k0 < n:
        c = min(chunk, n - k0)
        psi = _sample_inputs(spec, c, rng)
        if isinstance(perm, UniformIID):
            pidx = rng.integers(0, X, size=c)
        elif isinstance(perm, CategoricalIID):
            pidx = rng.choice(X, size=c, p=np.asarray(perm.pi))
        else:
            pidx = _kernels.markov_path(perm_state, perm_cum, rng.random(c))
            perm_state = int(pidx[-1])
        if isinstance(hyper, HyperChain):
            sidx = _kernels.markov_path(hyper_state, hyper_cum, rng.random(c))
            hyper_state = int(sidx[-1])
        elif isinstance(hyper, Schedule):
            sidx = hyper.index(np.arange(k0 + 1, k0 + c + 1))
        else:
            sidx = np.zeros(c, dtype=np.int64)
        noise = sample_noise(spec.noise, (c, L, D), rng)
        order = permutation_table(L)[pidx]  # (c, L)
        rows = states[sidx[:, None], order]  # theta_{sigma(l)}
        ar = np.arange(c)[:, None]
        if spec.input_kind == "identity":
            sig = rows
        elif D == 1:
            sig = psi[:, :, :1] * rows
        else:
            sig = np.einsum("kij,klj->kli", psi, rows)
        y = sig + noise[ar, order]
        yield Trajectory(k0, np.ascontiguousarray(psi), y, pidx, noise, sidx, states)
        k0 += c


def generate_trajectory(
    spec: SystemSpec,
    perm: PermutationModel,
    n: int,
    seed: int | np.random.Generator,
    hyper: HyperChain | Schedule | None = None,
) -> Trajectory:
    """Whole trajectory in one array-backed object (indexable as records)."""
    parts = list(iter_chunks(spec, perm, n, seed, hyper))
    if len(parts) == 1:
        return parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return Trajectory(0, cat("psi"), cat("y"), cat("perm_index"), cat("noise"), cat("state_index"), parts[0].states)


# ----------------------------------------------------------------------------
# garbling
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianKernel:
    """Add independent zero-mean Gaussian noise of standard deviation ``sigma``."""

    sigma: float


@dataclass(frozen=True, eq=False)
class MatrixKernel:
    """Row-stochastic kernel from the base support to ``out_support``."""

    matrix: np.ndarray
    out_support: tuple | None = None

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2 or np.any(M < 0) or np.max(np.abs(M.sum(axis=1) - 1)) > 1e-12:
            raise ConfigError("kernel rows must be probability distributions")
        object.__setattr__(self, "matrix", M)


def garble(base: NoiseModel, kernel, require_mean_preserving: bool = True) -> NoiseModel:
    """Compose a noise channel with a stochastic kernel.

    Gaussian noise garbled by an independent Gaussian kernel stays Gaussian
    with variances added.  A discrete pmf garbled by a matrix kernel gives
    the pmf ``p @ M`` on the kernel's output support.  A kernel that does
    not preserve conditional means is rejected when
    ``require_mean_preserving`` is set.
    """
    if isinstance(kernel, GaussianKernel):
        if not isinstance(base, Gaussian):
            raise ConfigError("Gaussian kernel composes only with Gaussian noise")
        return Gaussian(math.hypot(base.sigma, kernel.sigma))
    if isinstance(kernel, MatrixKernel):
        if not isinstance(base, DiscretePMF):
            raise ConfigError("matrix kernel composes only with discrete noise")
        M = kernel.matrix
        x = np.asarray(base.support)
        out = x if kernel.out_support is None else np.asarray(kernel.out_support, dtype=float)
        if M.shape != (x.size, out.size):
            raise ConfigError(f"kernel shape {M.shape} does not match supports ({x.size}, {out.size})")
        if require_mean_preserving and np.max(np.abs(M @ out - x)) > 1e-12:
            # a mean-preserving spread keeps E[out | in] = in
            raise ConfigError("kernel is not mean preserving")
        p = np.asarray(base.probs) @ M
        return DiscretePMF(tuple(out), tuple(p / p.sum()))
    raise TypeError(f"unknown kernel {kernel!r}")


# ----------------------------------------------------------------------------
# CSV dump
# ----------------------------------------------------------------------------


def write_trajectory_csv(path, traj: Trajectory, reveal: bool = False, header: bool = True) -> None:
    """Columns ``k, psi, y_1..y_L`` (+ ``perm, v_1..v_L, theta_1..theta_L`` when revealed).

    Matrix and vector cells are semicolon-joined, ``psi`` row-major.
    ``path`` may be an open text handle, which allows appending chunks
    with ``header=False``.
    """
    L = traj.L
    fmt = lambda a: ";".join(repr(float(v)) for v in np.ravel(a))  # noqa: E731
    cols = ["k", "psi"] + [f"y_{l + 1}" for l in range(L)]
    if reveal:
        cols += ["perm"] + [f"v_{l + 1}" for l in range(L)] + [f"theta_{l + 1}" for l in range(L)]
    perms = traj.perm
    with contextlib.ExitStack() as stack:
        fh = path if hasattr(path, "write") else stack.enter_context(open(path, "w", newline=""))
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(cols)
        for i in range(len(traj)):
            row = [traj.k0 + i + 1, fmt(traj.psi[i])] + [fmt(traj.y[i, l]) for l in range(L)]
            if reveal:
                th = traj.states[traj.state_index[i]]
                row += [";".join(str(int(p) + 1) for p in perms[i])]
                row += [fmt(traj.noise[i, l]) for l in range(L)] + [fmt(th[l]) for l in range(L)]
            w.writerow(row)
