"""Hierarchical sparsity prior and the cross-shaped Ising support prior.

The three-layer hierarchy: Gaussian coefficients given per-cell precisions,
Gamma precisions given the binary support, and a structured support prior.
The support prior couples every off-diagonal cell (a bounce path) to the two
diagonal cells sharing its transmit row and receive column (the direct paths
it implies), giving the cross-shaped dependency pattern.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class SparsityHyper:
    """Gamma hyperparameters: (a, b) for active cells with mean precision
    O(1), (a_bar, b_bar) for inactive cells with mean precision >> 1, and
    (c, d) for the noise precision."""
    a: float = 1.0
    b: float = 1.0
    a_bar: float = 1.0
    b_bar: float = 1e-6
    c: float = 1e-3
    d: float = 1e-3

    def __post_init__(self):
        vals = (self.a, self.b, self.a_bar, self.b_bar, self.c, self.d)
        if any(v <= 0 for v in vals):
            raise ValueError("hyperparameters must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {k: float(v) for k, v in d.items()
                 if k in ("a", "b", "a_bar", "b_bar", "c", "d")}
        return cls(**known)


@dataclass(frozen=True)
class CrossIsing:
    """Pairwise binary coupling model on the cross pattern.

    omega_t[i, j] couples cell (i, j) to the row diagonal (i, i);
    omega_r[i, j] couples cell (i, j) to the column diagonal (j, j).
    Diagonal entries of both arrays are unused.  Couplings may be any real;
    positive values are attractive.
    """
    q_base: int
    omega_t: np.ndarray  # (Q, Q)
    omega_r: np.ndarray  # (Q, Q)

    def __post_init__(self):
        q = self.q_base
        if self.omega_t.shape != (q, q) or self.omega_r.shape != (q, q):
            raise ValueError("coupling arrays must be (Q, Q)")

    @classmethod
    def uniform(cls, q_base, weight):
        w = np.full((q_base, q_base), float(weight))
        np.fill_diagonal(w, 0.0)
        return cls(q_base=q_base, omega_t=w, omega_r=w.copy())

    def with_couplings(self, omega_t, omega_r):
        return replace(self, omega_t=omega_t, omega_r=omega_r)

    def cell(self, i, j):
        return i * self.q_base + j

    def coupling(self, off_q, diag_q):
        """Weight of the edge between an off-diagonal and a diagonal cell."""
        q = self.q_base
        i, j = divmod(off_q, q)
        if i == j:
            raise KeyError("first index must be an off-diagonal cell")
        if diag_q == self.cell(i, i):
            return float(self.omega_t[i, j])
        if diag_q == self.cell(j, j):
            return float(self.omega_r[i, j])
        raise KeyError(f"({off_q}, {diag_q}) is not an edge")


def edges(model):
    """All (off-diagonal cell, diagonal cell) edges: each ordered pair
    (i, j), i != j contributes the row edge to (i, i) and the column edge to
    (j, j); 2*Q*(Q-1) edges in total."""
    q = model.q_base
    out = []
    for i in range(q):
        for j in range(q):
            if i == j:
                continue
            off = model.cell(i, j)
            out.append((off, model.cell(i, i)))
            out.append((off, model.cell(j, j)))
    return out


def log_unnormalized(s, model):
    """Coupling energy sum over edges of omega * s_off * s_diag."""
    s = np.asarray(s)
    if s.shape != (model.q_base ** 2,):
        raise ValueError("support vector must have length Q^2")
    if not np.all((s == 0) | (s == 1)):
        raise ValueError("support entries must be binary")
    q = model.q_base
    s_mat = s.reshape(q, q).astype(float)
    s_diag = np.diag(s_mat)
    off_mask = ~np.eye(q, dtype=bool)
    e_t = np.sum((model.omega_t * s_mat * s_diag[:, None])[off_mask])
    e_r = np.sum((model.omega_r * s_mat * s_diag[None, :])[off_mask])
    return float(e_t + e_r)


_ENUMERATION_LIMIT = 20


def _edge_arrays(model):
    e = edges(model)
    a_idx = np.array([a for a, _ in e], dtype=int)
    b_idx = np.array([b for _, b in e], dtype=int)
    w = np.array([model.coupling(a, b) for a, b in e])
    return a_idx, b_idx, w


def _all_states(n):
    # rows are all binary vectors of length n
    ints = np.arange(2 ** n, dtype=np.int64)
    return ((ints[:, None] >> np.arange(n)) & 1).astype(float)


def bruteforce_marginals(model, node_priors):
    """Exact per-cell activity marginals by enumerating every support state.

    The distribution is proportional to the product of independent Bernoulli
    node priors times the exponential coupling energy.  Only feasible for
    Q^2 <= 20; this is the correctness oracle for message passing.
    """
    n = model.q_base ** 2
    if n > _ENUMERATION_LIMIT:
        raise ValueError(f"enumeration limited to {_ENUMERATION_LIMIT} cells")
    pi = np.asarray(node_priors, dtype=float)
    if pi.shape != (n,):
        raise ValueError("need one prior per cell")
    states = _all_states(n)
    a_idx, b_idx, w = _edge_arrays(model)
    energy = (states[:, a_idx] * states[:, b_idx]) @ w
    # clipping keeps degenerate {0,1} priors finite (0 * -inf would be nan)
    lp1 = np.log(np.clip(pi, 1e-300, None))
    lp0 = np.log(np.clip(1.0 - pi, 1e-300, None))
    log_w = states @ lp1 + (1.0 - states) @ lp0 + energy
    log_w -= log_w.max()
    weights = np.exp(log_w)
    weights /= weights.sum()
    return weights @ states


def log_partition(model):
    """log z by enumeration (uniform node priors excluded)."""
    n = model.q_base ** 2
    if n > _ENUMERATION_LIMIT:
        raise ValueError(f"enumeration limited to {_ENUMERATION_LIMIT} cells")
    states = _all_states(n)
    a_idx, b_idx, w = _edge_arrays(model)
    energy = (states[:, a_idx] * states[:, b_idx]) @ w
    m = energy.max()
    return float(m + np.log(np.sum(np.exp(energy - m))))
