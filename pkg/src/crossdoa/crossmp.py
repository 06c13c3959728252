"""Sum-product message passing on the cross-sparsity support graph.

Variables are the Q^2 binary support cells; each off-diagonal cell (i, j)
connects through one pairwise factor to its row diagonal (i, i) and through
another to its column diagonal (j, j), and every cell carries an inbound
Bernoulli prior factor from the estimation module.  All messages are
Bernoulli parameters held in (Q, Q) arrays indexed by the ordered pair; the
diagonal entries of those arrays are unused.

The graph is loopy, so a flood schedule is iterated to (approximate)
convergence: the off-diagonal variables first push through both of their
factors onto the diagonals, then the diagonals aggregate and reply.  Message
products are accumulated in the log-odds domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

_P_EPS = 1e-12


@dataclass(frozen=True)
class TurboInbound:
    """Per-cell extrinsic activity priors supplied by the estimator."""
    pi_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi_b",
                           np.clip(np.asarray(self.pi_b, dtype=float),
                                   _P_EPS, 1.0 - _P_EPS))


@dataclass
class MessageState:
    """All Bernoulli message parameters, one (Q, Q) array per path type.

    p_* flow from the off-diagonal side toward the diagonals, n_* flow back:
      p_tp1[i,j]  variable (i,j) -> row factor        p_tp2: -> column factor
      p_tr1[i,j]  row factor -> diagonal (i,i)        p_tr2: column -> (j,j)
      n_tr1[i,j]  diagonal (i,i) -> row factor        n_tr2: (j,j) -> column
      n_tp1[i,j]  row factor -> variable (i,j)        n_tp2: column -> (i,j)
    """
    p_tp1: np.ndarray
    p_tp2: np.ndarray
    p_tr1: np.ndarray
    p_tr2: np.ndarray
    n_tp1: np.ndarray
    n_tp2: np.ndarray
    n_tr1: np.ndarray
    n_tr2: np.ndarray

    _FAMILIES = ("p_tp1", "p_tp2", "p_tr1", "p_tr2",
                 "n_tp1", "n_tp2", "n_tr1", "n_tr2")

    @classmethod
    def uninformative(cls, q):
        return cls(**{name: np.full((q, q), 0.5) for name in cls._FAMILIES})

    def arrays(self):
        return {name: getattr(self, name) for name in self._FAMILIES}

    def max_difference(self, other):
        return max(np.max(np.abs(getattr(self, n) - getattr(other, n)))
                   for n in self._FAMILIES)


@dataclass(frozen=True)
class MessagePassingRun:
    state: MessageState
    converged: bool
    sweeps: int


def _safe_logit(p):
    return logit(np.clip(p, _P_EPS, 1.0 - _P_EPS))


def _factor_to_variable(p_in, omega):
    """Marginalize the pairwise potential exp(omega * s * s') against an
    inbound Bernoulli parameter: the outgoing probability of 1 is
    (p e^w + 1 - p) / (p e^w + 2 - p), written so that omega = 0 yields
    exactly 1/2."""
    x = p_in * np.expm1(omega)
    return 1.0 - 1.0 / (2.0 + x)


def _split_inbound(inbound, q):
    pi = inbound.pi_b.reshape(q, q)
    lo_off = _safe_logit(pi)
    np.fill_diagonal(lo_off, 0.0)
    lo_diag = _safe_logit(np.diag(pi))
    return lo_off, lo_diag


def sweep(messages, inbound, ising):
    """One flood pass in path order: off-diagonal variables to both factors,
    factors onto the diagonals, diagonal replies, factors back to the
    off-diagonals.  Returns a new MessageState."""
    q = ising.q_base
    lo_off, lo_diag = _split_inbound(inbound, q)
    w_t, w_r = ising.omega_t, ising.omega_r

    p_tp1 = expit(_safe_logit(messages.n_tp2) + lo_off)
    p_tr1 = _factor_to_variable(p_tp1, w_t)
    p_tp2 = expit(_safe_logit(messages.n_tp1) + lo_off)
    p_tr2 = _factor_to_variable(p_tp2, w_r)

    # diagonal m collects row-factor messages p_tr1[m, :] and column-factor
    # messages p_tr2[:, m]; the reply to pair (i, j) excludes both of that
    # pair's opposing messages
    l_tr1 = _safe_logit(p_tr1)
    l_tr2 = _safe_logit(p_tr2)
    np.fill_diagonal(l_tr1, 0.0)
    np.fill_diagonal(l_tr2, 0.0)
    total = l_tr1.sum(axis=1) + l_tr2.sum(axis=0)

    n_tr1 = expit(total[:, None] + lo_diag[:, None] - l_tr1 - l_tr2.T)
    n_tr2 = expit(total[None, :] + lo_diag[None, :] - l_tr2 - l_tr1.T)
    n_tp1 = _factor_to_variable(n_tr1, w_t)
    n_tp2 = _factor_to_variable(n_tr2, w_r)

    new = MessageState(p_tp1=p_tp1, p_tp2=p_tp2, p_tr1=p_tr1, p_tr2=p_tr2,
                       n_tp1=n_tp1, n_tp2=n_tp2, n_tr1=n_tr1, n_tr2=n_tr2)
    mask = np.eye(q, dtype=bool)
    for arr in new.arrays().values():
        arr[mask] = 0.5
    return new


def run(inbound, ising, max_sweeps=100, tol=1e-6, damping=0.5):
    """Iterate sweeps until the largest factor-to-variable message change
    drops below tol.  The variable-to-factor messages are deterministic in
    those, so tracking the four factor-output families is a sound fixed-point
    test (and lets a zero-coupling model converge in a single sweep).

    Oscillation guard: per entry, when the update delta alternates sign for
    three consecutive sweeps the factor-to-variable families are blended with
    the previous value by the damping factor.  Non-convergence within the
    sweep budget is reported, not raised.
    """
    q = ising.q_base
    state = MessageState.uninformative(q)
    fams = ("p_tr1", "p_tr2", "n_tp1", "n_tp2")
    prev_delta = {f: np.zeros((q, q)) for f in fams}
    prev_delta2 = {f: np.zeros((q, q)) for f in fams}
    converged = False
    sweeps = 0
    for it in range(max_sweeps):
        new = sweep(state, inbound, ising)
        diff = 0.0
        for f in fams:
            cur, old = getattr(new, f), getattr(state, f)
            delta = cur - old
            osc = (delta * prev_delta[f] < 0) & (prev_delta[f] * prev_delta2[f] < 0)
            if np.any(osc):
                mixed = np.where(osc, damping * old + (1 - damping) * cur, cur)
                setattr(new, f, mixed)
                delta = mixed - old
            prev_delta2[f] = prev_delta[f]
            prev_delta[f] = delta
            diff = max(diff, float(np.max(np.abs(delta))))
        state = new
        sweeps = it + 1
        if diff < tol:
            converged = True
            break
    return MessagePassingRun(state=state, converged=converged, sweeps=sweeps)


def outbound(messages, inbound, strict_extrinsic=False):
    """Combine converged factor messages into per-cell activity priors for
    the next estimator pass.

    Diagonal cells aggregate all 2(Q-1) factor messages, off-diagonal cells
    their two; by default the inbound prior is folded in as well, which makes
    the output the full node belief.  strict_extrinsic divides the inbound
    prior back out.  When every factor message is exactly uninformative (all
    couplings zero) the inbound priors pass through bit-for-bit.
    """
    q = messages.p_tr1.shape[0]
    pi = inbound.pi_b.reshape(q, q)

    l_tr1 = _safe_logit(messages.p_tr1)
    l_tr2 = _safe_logit(messages.p_tr2)
    np.fill_diagonal(l_tr1, 0.0)
    np.fill_diagonal(l_tr2, 0.0)
    diag_evidence = l_tr1.sum(axis=1) + l_tr2.sum(axis=0)

    l_n1 = _safe_logit(messages.n_tp1)
    l_n2 = _safe_logit(messages.n_tp2)
    off_evidence = l_n1 + l_n2

    out = np.empty((q, q))
    if strict_extrinsic:
        off = expit(off_evidence)
        diag = expit(diag_evidence)
    else:
        lo_off = _safe_logit(pi)
        lo_diag = _safe_logit(np.diag(pi))
        # exact pass-through keeps zero-coupling runs bit-identical
        off = np.where(off_evidence == 0.0, pi, expit(off_evidence + lo_off))
        diag = np.where(diag_evidence == 0.0, np.diag(pi),
                        expit(diag_evidence + lo_diag))
    out[...] = off
    out[np.diag_indices(q)] = diag
    return out.reshape(q * q)
