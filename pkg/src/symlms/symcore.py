"""Symmetric-transform algebra for unordered collections of vectors.

A collection ``{y_1, ..., y_L}`` of real ``D``-vectors is encoded as the
coefficients of the two-variable polynomial

    prod_i (s + y_i(t)),   y_i(t) = sum_r y_{i,r} t^(r-1).

Blocks are indexed by convolution degree ``l`` (the size of the subsets
being multiplied), so block ``l`` is the coefficient vector of
``s^(L-l)`` and has length ``l*(D-1) + 1``.  For ``D == 1`` the blocks are
the elementary symmetric polynomials ``e_1, ..., e_L``.

Monomial indices (multisets of column indices) are 0-based throughout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import IllConditioned, RepeatedRoot

__all__ = [
    "ParameterSet",
    "ScalarInversion",
    "VectorInversion",
    "multisets",
    "block_length",
    "elementary_convolution",
    "full_transform",
    "monomial_transform",
    "degree_projection",
    "projection_matrix",
    "design_matrix",
    "invert_scalar",
    "invert_vector",
    "naive_transform",
    "root_sensitivity",
    "set_distance",
]

REAL_ROOT_TOL = 1e-8
COND_THRESHOLD = 1e10


def _canonical_order(members: np.ndarray) -> np.ndarray:
    """Lexicographic row order: first column ascending, ties by later columns."""
    return np.lexsort(members.T[::-1])


def _as_members(y) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"expected a non-empty collection of equal-length vectors, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """Unordered collection of ``L`` real ``D``-vectors.

    Members are stored in canonical (lexicographic) order so that two sets
    compare equal iff one is a permutation of the other.
    """

    members: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _as_members(self.members)
        if not np.all(np.isfinite(arr)):
            raise ValueError("ParameterSet entries must be finite")
        arr = arr[_canonical_order(arr)] + 0.0
        arr.setflags(write=False)
        object.__setattr__(self, "members", arr)

    @property
    def L(self) -> int:
        return self.members.shape[0]

    @property
    def D(self) -> int:
        return self.members.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ParameterSet):
            return NotImplemented
        return self.members.shape == other.members.shape and bool(np.array_equal(self.members, other.members))

    def __hash__(self):
        return hash((self.members.shape, self.members.tobytes()))

    def __repr__(self):
        rows = ", ".join(np.array2string(r, precision=6, separator=",") for r in self.members)
        return f"ParameterSet({{{rows}}})"

    def distance(self, other: "ParameterSet") -> float:
        return set_distance(self.members, other.members)

    def allclose(self, other: "ParameterSet", atol: float) -> bool:
        return self.distance(other) <= atol


def set_distance(a, b) -> float:
    """Max-abs entry error under the best matching of rows of ``a`` to rows of ``b``."""
    a = _as_members(a)
    b = _as_members(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    L = a.shape[0]
    if L <= 7:
        return min(float(np.max(np.abs(a - b[list(p)]))) for p in itertools.permutations(range(L)))
    from scipy.optimize import linear_sum_assignment

    cost = np.max(np.abs(a[:, None, :] - b[None, :, :]), axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


@lru_cache(maxsize=None)
def multisets(D: int, l: int) -> tuple[tuple[int, ...], ...]:
    """All size-``l`` multisets over ``{0..D-1}`` as nondecreasing tuples, lexicographic."""
    return tuple(itertools.combinations_with_replacement(range(D), l))


@lru_cache(maxsize=None)
def _multiset_index(D: int, l: int) -> dict:
    return {mu: i for i, mu in enumerate(multisets(D, l))}


@lru_cache(maxsize=None)
def _parent_table(D: int, l: int) -> tuple[np.ndarray, np.ndarray]:
    # mu = parent + (last,), last >= max(parent)
    if l == 1:
        return np.full(D, -1, dtype=np.int64), np.arange(D, dtype=np.int64)
    idx = _multiset_index(D, l - 1)
    mus = multisets(D, l)
    parent = np.array([idx[mu[:-1]] for mu in mus], dtype=np.int64)
    last = np.array([mu[-1] for mu in mus], dtype=np.int64)
    return parent, last


@lru_cache(maxsize=None)
def _removal_table(D: int, l: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    # for each mu of size l: ((p, index of mu minus one copy of p), ...) over distinct p
    prev = _multiset_index(D, l - 1)
    out = []
    for mu in multisets(D, l):
        entries = []
        for p in sorted(set(mu)):
            rest = list(mu)
            rest.remove(p)
            entries.append((p, prev[tuple(rest)]))
        out.append(tuple(entries))
    return tuple(out)


def block_length(D: int, l: int) -> int:
    return l * (D - 1) + 1


def _conv_blocks(rows: np.ndarray, max_degree: int) -> list[np.ndarray]:
    # Prefix DP: after processing rows[:i], blocks[l-1] holds the degree-l sum.
    L, D = rows.shape
    blocks = [np.zeros(block_length(D, l), dtype=rows.dtype) for l in range(1, max_degree + 1)]
    for i in range(L):
        r = rows[i]
        for l in range(min(i + 1, max_degree), 1, -1):
            blocks[l - 1] = blocks[l - 1] + np.convolve(blocks[l - 2], r)
        blocks[0] = blocks[0] + r
    return blocks


def _canonical_rows(y) -> np.ndarray:
    arr = _as_members(y)
    # +0.0 folds -0.0 into 0.0 so the sorted input is a function of the set
    return arr[_canonical_order(arr)] + 0.0


def elementary_convolution(y, l: int) -> np.ndarray:
    """Sum over all size-``l`` subsets of the ``l``-fold convolution of members.

    Parameters
    ----------
    y : array_like, shape (L, D) or (L,)
        The collection; a 1-D input is read as ``L`` scalars.
    l : int
        Degree, ``1 <= l <= L``.

    Returns
    -------
    ndarray of length ``l*(D-1) + 1``.
    """
    rows = _canonical_rows(y)
    L = rows.shape[0]
    if not 1 <= l <= L:
        raise ValueError(f"degree {l} out of range 1..{L}")
    return _conv_blocks(rows, l)[l - 1]


def full_transform(y) -> list[np.ndarray]:
    """Blocks of degree ``1..L``; bitwise invariant under reordering of ``y``."""
    rows = _canonical_rows(y)
    return _conv_blocks(rows, rows.shape[0])


def monomial_transform(theta) -> list[np.ndarray]:
    """Monomial symmetric sums for every degree.

    Entry ``mu`` of degree ``l`` is the sum over size-``l`` subsets of members
    and over the distinct arrangements ``(p_1..p_l)`` of ``mu`` of
    ``prod_j theta[i_j, p_j]``.  Entries follow the order of ``multisets(D, l)``.
    """
    members = theta.members if isinstance(theta, ParameterSet) else _canonical_rows(theta)
    L, D = members.shape
    eta = [np.ones(1)] + [np.zeros(len(multisets(D, l))) for l in range(1, L + 1)]
    for i in range(L):
        row = members[i]
        for l in range(min(i + 1, L), 0, -1):
            prev = eta[l - 1]
            cur = eta[l].copy()
            for c, entries in enumerate(_removal_table(D, l)):
                acc = 0.0
                for p, j in entries:
                    acc += row[p] * prev[j]
                cur[c] += acc
            eta[l] = cur
    return eta[1:]


@lru_cache(maxsize=None)
def _positions(D: int, l: int) -> np.ndarray:
    return np.array([sum(mu) for mu in multisets(D, l)], dtype=np.int64)


def projection_matrix(D: int, l: int) -> np.ndarray:
    """0/1 matrix mapping monomial entries of degree ``l`` to t-power positions."""
    pos = _positions(D, l)
    P = np.zeros((block_length(D, l), len(pos)))
    P[pos, np.arange(len(pos))] = 1.0
    return P


def degree_projection(eta, D: int, l: int) -> np.ndarray:
    """Group monomial entries by total t-degree: position ``m`` sums all ``mu`` with ``sum(mu) == m``."""
    eta = np.asarray(eta, dtype=np.float64)
    pos = _positions(D, l)
    if eta.shape != pos.shape:
        raise ValueError(f"expected {pos.size} monomial entries for D={D}, l={l}, got {eta.shape}")
    return np.bincount(pos, weights=eta, minlength=block_length(D, l))


def design_matrix(psi, l: int) -> np.ndarray:
    """Regression matrix linking monomial sums of ``theta`` to blocks of ``{psi @ theta_i}``.

    Column ``mu`` is the convolution of the columns ``psi[:, p]`` for ``p`` in
    ``mu``, so that ``elementary_convolution({psi @ theta_i}, l) ==
    design_matrix(psi, l) @ monomial_transform(theta)[l - 1]``.
    """
    psi = np.atleast_2d(np.asarray(psi, dtype=np.float64))
    D = psi.shape[0]
    if psi.shape != (D, D):
        raise ValueError(f"input matrix must be square, got {psi.shape}")
    if l < 1:
        raise ValueError("degree must be >= 1")
    cols = psi.T.copy()  # degree 1: column p is psi[:, p]
    for k in range(2, l + 1):
        parent, last = _parent_table(D, k)
        cols = np.array([np.convolve(cols[a], psi[:, b]) for a, b in zip(parent, last)])
    return cols.T


@dataclass(frozen=True)
class ScalarInversion:
    theta: ParameterSet
    factors: np.ndarray  # complex, aligned with theta.members[:, 0]
    complex_mask: np.ndarray

    @property
    def has_complex(self) -> bool:
        return bool(self.complex_mask.any())


@dataclass(frozen=True)
class VectorInversion:
    theta: ParameterSet
    cond: np.ndarray  # condition number of each column solve (columns 2..D)
    complex_mask: np.ndarray

    @property
    def has_complex(self) -> bool:
        return bool(self.complex_mask.any())


def _factors(lam: np.ndarray) -> np.ndarray:
    # monic s^L + lam_1 s^(L-1) + ... + lam_L; factors are negated roots
    L = lam.size
    if L == 1:
        return np.array([lam[0]], dtype=np.complex128)
    C = np.zeros((L, L))
    C[0, :] = -lam
    C[np.arange(1, L), np.arange(L - 1)] = 1.0
    roots = np.linalg.eigvals(C)  # LAPACK geev balances the companion matrix
    f = -roots.astype(np.complex128)
    small = np.abs(f.imag) < REAL_ROOT_TOL * (1.0 + np.abs(f.real))
    f[small] = f[small].real
    return f


def _order_complex(f: np.ndarray) -> np.ndarray:
    return np.lexsort((f.imag, f.real))


def invert_scalar(lam) -> ScalarInversion:
    """Factors ``theta`` of ``s^L + sum_l lam_l s^(L-l) = prod (s + theta_l)``.

    Complex factors are reported in ``factors``/``complex_mask``; the
    returned set holds their real parts.
    """
    lam = np.asarray(lam, dtype=np.float64).ravel()
    if lam.size == 0 or not np.all(np.isfinite(lam)):
        raise ValueError("coefficients must be a non-empty finite vector")
    f = _factors(lam)
    f = f[_order_complex(f)]
    mask = f.imag != 0
    return ScalarInversion(ParameterSet(f.real[:, None]), f, mask)


def _esp_excluding(values: np.ndarray) -> np.ndarray:
    # M[l, i] = e_l(values without i), l = 0..L-1
    L = values.size
    M = np.zeros((L, L), dtype=values.dtype)
    for i in range(L):
        e = np.zeros(L, dtype=values.dtype)
        e[0] = 1.0
        for j in range(L):
            if j != i:
                e[1:] = e[1:] + values[j] * e[:-1]
        M[:, i] = e
    return M


def invert_vector(blocks, cond_threshold: float = COND_THRESHOLD, refine: bool = True) -> VectorInversion:
    """Recover the parameter set from its blocks of degree ``1..L``.

    Column 0 comes from the scalar factorization of the leading entries;
    each later column solves the ``L x L`` linear system obtained by
    matching the t-power of that column in every block.  With ``refine``
    the result is polished by Gauss-Newton on all block entries, which
    matters for noisy blocks when ``D`` is large.

    Raises
    ------
    IllConditioned
        If a column solve has condition number above ``cond_threshold``
        (near-coincident leading components).
    """
    blocks = [np.asarray(b, dtype=np.float64).ravel() for b in blocks]
    L = len(blocks)
    if L == 0:
        raise ValueError("need at least one block")
    D = blocks[0].size
    for l, b in enumerate(blocks, start=1):
        if b.size != block_length(D, l):
            raise ValueError(f"block {l} has length {b.size}, expected {block_length(D, l)}")
        if not np.all(np.isfinite(b)):
            raise ValueError("coefficients must be finite")
    lead = np.array([b[0] for b in blocks])
    f = _factors(lead)
    theta = np.zeros((L, D), dtype=np.complex128)
    theta[:, 0] = f
    conds = []
    if D > 1:
        M = _esp_excluding(f)
        cond = float(np.linalg.cond(M))
        if not np.isfinite(cond) or cond > cond_threshold:
            raise IllConditioned(f"column solve condition number {cond:.3g} exceeds {cond_threshold:.3g}", cond)
        lu = _lu(M)
        for m in range(1, D):
            known = _conv_blocks(theta, L)  # columns >= m are still zero
            rhs = np.array([blocks[l][m] - known[l][m] for l in range(L)])
            theta[:, m] = _lu_solve(lu, rhs)
            conds.append(cond)
    order = _order_complex(theta[:, 0])
    theta = theta[order]
    mask = np.any(theta.imag != 0, axis=1) | (f[order].imag != 0)
    est = theta.real
    if refine and D > 1:
        est = _refine(blocks, est)
    return VectorInversion(ParameterSet(est), np.array(conds), mask)


def _transform_jacobian(theta: np.ndarray) -> np.ndarray:
    # d(stacked blocks)/d theta[i, r]: t^r times the degree-(l-1) blocks of the other members
    L, D = theta.shape
    lens = [block_length(D, l) for l in range(1, L + 1)]
    offs = np.concatenate(([0], np.cumsum(lens)))
    J = np.zeros((offs[-1], L * D))
    for i in range(L):
        others = np.delete(theta, i, axis=0)
        ob = [np.ones(1)] + (_conv_blocks(others, L - 1) if L > 1 else [])
        for r in range(D):
            col = i * D + r
            for l in range(1, L + 1):
                b = ob[l - 1]
                J[offs[l - 1] + r : offs[l - 1] + r + b.size, col] = b
    return J


def _refine(blocks: list[np.ndarray], theta: np.ndarray, max_iter: int = 20) -> np.ndarray:
    """Gauss-Newton polish of ``theta`` against every block entry.

    The column recursion uses only the lowest ``D`` t-powers of each block
    and compounds errors from column to column; a relative-weighted least
    squares fit over all entries removes most of that amplification.  The
    refined point is kept only if it lowers the weighted residual.
    """
    target = np.concatenate(blocks)
    w = 1.0 / np.maximum(1.0, np.abs(target))

    def cost(th):
        return float(np.sum((w * (target - np.concatenate(_conv_blocks(th, th.shape[0])))) ** 2))

    best, best_cost = theta, cost(theta)
    cur = theta
    for _ in range(max_iter):
        res = w * (target - np.concatenate(_conv_blocks(cur, cur.shape[0])))
        J = _transform_jacobian(cur) * w[:, None]
        step, *_ = np.linalg.lstsq(J, res, rcond=None)
        cur = cur + step.reshape(cur.shape)
        if not np.all(np.isfinite(cur)):
            break
        c = cost(cur)
        if c < best_cost:
            best, best_cost = cur, c
        if np.max(np.abs(step)) <= 1e-14 * (1.0 + np.max(np.abs(cur))):
            break
    return best


def _lu(M):
    from scipy.linalg import lu_factor

    return lu_factor(M)


def _lu_solve(lu, rhs):
    from scipy.linalg import lu_solve

    return lu_solve(lu, rhs)


def naive_transform(y) -> np.ndarray:
    """Scalar transform applied to each component separately; shape ``(D, L)``."""
    arr = _as_members(y)
    return np.array([full_transform(arr[:, j]) for j in range(arr.shape[1])]).reshape(arr.shape[1], arr.shape[0])


def root_sensitivity(theta, tol: float = 1e-9) -> np.ndarray:
    """Jacobian ``jac[m, l] = d theta_l / d lam_m`` for distinct scalar factors.

    ``theta`` is ordered canonically (ascending).  Raises ``RepeatedRoot``
    when two factors are closer than ``tol`` (relative to their scale).
    """
    if isinstance(theta, ParameterSet):
        vals = theta.members
    else:
        vals = ParameterSet(_as_members(theta)).members
    if vals.shape[1] != 1:
        raise ValueError("root sensitivity is defined for scalar parameters (D=1)")
    t = vals[:, 0]
    L = t.size
    scale = 1.0 + np.max(np.abs(t))
    if L > 1 and np.min(np.diff(t)) < tol * scale:
        raise RepeatedRoot(f"factors closer than {tol:g}; sensitivity is infinite")
    jac = np.empty((L, L))
    for l in range(L):
        # implicit differentiation of prod_i (s + theta_i) at the root s = -theta_l
        gap = np.prod(np.delete(t, l) - t[l])
        for m in range(1, L + 1):
            jac[m - 1, l] = (-t[l]) ** (L - m) / gap
    return jac
