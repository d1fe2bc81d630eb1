"""Brute-force reference implementations used by the test-suite.

These enumerate subsets and orderings explicitly and share no code with
the package, so they serve as independent oracles.
"""

import functools
import itertools

import numpy as np


def subset_convolution(y, l):
    """Sum over size-l subsets of the l-fold convolution of members."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    out = None
    for idx in itertools.combinations(range(y.shape[0]), l):
        c = functools.reduce(np.convolve, [y[i] for i in idx])
        out = c if out is None else out + c
    return out


def vieta(theta):
    """Coefficients lam_1..lam_L of prod (s + theta_l), from numpy's root-to-poly routine."""
    return np.poly(-np.asarray(theta, dtype=float))[1:]


def monomial_bracket(theta, mu):
    """Sum over size-|mu| subsets and distinct arrangements of mu of prod theta[i_j, p_j]."""
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    arrangements = set(itertools.permutations(mu))
    for idx in itertools.combinations(range(theta.shape[0]), len(mu)):
        for arr in arrangements:
            total += np.prod([theta[i, p] for i, p in zip(idx, arr)])
    return total


def multisets(D, l):
    return list(itertools.combinations_with_replacement(range(D), l))
