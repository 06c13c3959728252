"""Fast-timescale parameter learning: grid selection, backtracking gradient
ascent on the selected angular offsets, and pseudo-likelihood ascent on the
support couplings.

The offset objective is the negative precision-weighted residual of the
observation against the active dictionary columns; its gradient decomposes
column-by-column because each column depends only on its own offsets.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import grid as grid_mod
from .prior import CrossIsing


@dataclass(frozen=True)
class ArmijoConfig:
    initial_step: float = 1e-2
    shrink: float = 0.5
    sufficient_increase: float = 1e-4
    max_backtracks: int = 20


@dataclass(frozen=True)
class MStepConfig:
    tau_s: float = 0.8          # activity threshold for grid selection
    max_inner: int = 20         # inner ascent iterations
    armijo: ArmijoConfig = field(default_factory=ArmijoConfig)
    stall_tol: float = 1e-4     # combined parameter-change stall test

    def __post_init__(self):
        if not 0.0 < self.tau_s < 1.0:
            raise ValueError("tau_s must lie in (0, 1)")
        if self.armijo.initial_step <= 0 or self.stall_tol < 0:
            raise ValueError("steps and tolerances must be positive")


@dataclass(frozen=True)
class ActiveSet:
    s_hat: np.ndarray    # (Q^2,) binary
    indices: np.ndarray  # sorted active cell indices

    @property
    def size(self):
        return len(self.indices)


def select_grids(s_prob, tau_s):
    """Hard-threshold the activity posteriors; ties at the threshold are
    excluded (strict inequality).  An empty set is a valid outcome."""
    s_prob = np.asarray(s_prob, dtype=float)
    s_hat = (s_prob > tau_s).astype(int)
    return ActiveSet(s_hat=s_hat, indices=np.flatnonzero(s_hat))


def objective(y, grid, gram, indices, dtheta_t, dtheta_r, mu_x_hat,
              mean_gamma, dict_scale=1.0):
    """Negative weighted residual energy restricted to the active columns:
    -<gamma> ||y - F_active mu||^2.  Zero is the global maximum."""
    cols = grid_mod.build_columns(grid, dtheta_t, dtheta_r, gram, indices) / dict_scale
    resid = y - cols @ mu_x_hat
    return -mean_gamma * float(np.real(resid.conj() @ resid))


def grad_offsets(y, grid, gram, indices, dtheta_t, dtheta_r, mu_x_hat,
                 mean_gamma, dict_scale=1.0):
    """Analytic objective gradient with respect to the active transmit and
    receive offsets.

    Column q of the active dictionary depends only on its own offset pair, so
    component m reduces to 2 <gamma> Re{conj(mu_m) d_m^H (y - F mu)} with d_m
    the derivative of column m.
    """
    cols = grid_mod.build_columns(grid, dtheta_t, dtheta_r, gram, indices) / dict_scale
    resid = y - cols @ mu_x_hat
    d_t = grid_mod.column_derivatives(grid, dtheta_t, dtheta_r, gram, indices,
                                      "transmit") / dict_scale
    d_r = grid_mod.column_derivatives(grid, dtheta_t, dtheta_r, gram, indices,
                                      "receive") / dict_scale
    g_t = 2.0 * mean_gamma * np.real(np.conj(mu_x_hat) * (d_t.conj().T @ resid))
    g_r = 2.0 * mean_gamma * np.real(np.conj(mu_x_hat) * (d_r.conj().T @ resid))
    return g_t, g_r


def _armijo_step(x, gradient, value_at, f0, cfg, project=None):
    """One backtracking ascent step along the normalized gradient direction;
    returns (new_x, new_value, accepted).

    The step parameter is a length in parameter space (the gradient magnitude
    scales with the noise precision and signal energy, so a raw-gradient step
    would need a problem-dependent base step).  Acceptance requires
    f(new) >= f0 + c * step * ||gradient|| at the projected candidate, so
    accepted steps never decrease the objective.
    """
    g_norm = float(np.linalg.norm(gradient))
    if g_norm == 0.0 or not np.isfinite(g_norm):
        return x, f0, False
    direction = gradient / g_norm
    step = cfg.initial_step
    for _ in range(cfg.max_backtracks):
        cand = x + step * direction
        if project is not None:
            cand = project(cand)
        f_new = value_at(cand)
        if f_new >= f0 + cfg.sufficient_increase * step * g_norm:
            return cand, f_new, True
        step *= cfg.shrink
    return x, f0, False


def ascend_offsets(y, grid, gram, indices, dtheta_t, dtheta_r, mu_x_hat,
                   mean_gamma, config, dict_scale=1.0):
    """Coordinate Armijo ascent on the active offsets, transmit then receive
    per iteration, clamped to half a cell.  Stops on the stall criterion or
    after max_inner iterations; returns the offsets and iterations used."""
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        return np.copy(dtheta_t), np.copy(dtheta_r), 0
    d_t = np.asarray(dtheta_t, dtype=float).copy()
    d_r = np.asarray(dtheta_r, dtype=float).copy()
    clamp = grid.half_spacing

    def project(v):
        return np.clip(v, -clamp, clamp)

    used = 0
    for it in range(config.max_inner):
        prev_t, prev_r = d_t.copy(), d_r.copy()
        f0 = objective(y, grid, gram, indices, d_t, d_r, mu_x_hat, mean_gamma,
                       dict_scale)
        g_t, _ = grad_offsets(y, grid, gram, indices, d_t, d_r, mu_x_hat,
                              mean_gamma, dict_scale)
        d_t, f0, acc_t = _armijo_step(
            d_t, g_t, lambda v: objective(y, grid, gram, indices, v, d_r,
                                          mu_x_hat, mean_gamma, dict_scale),
            f0, config.armijo, project)
        _, g_r = grad_offsets(y, grid, gram, indices, d_t, d_r, mu_x_hat,
                              mean_gamma, dict_scale)
        d_r, f0, acc_r = _armijo_step(
            d_r, g_r, lambda v: objective(y, grid, gram, indices, d_t, v,
                                          mu_x_hat, mean_gamma, dict_scale),
            f0, config.armijo, project)
        used = it + 1
        if not (acc_t or acc_r):
            break
        if np.linalg.norm(d_t - prev_t) + np.linalg.norm(d_r - prev_r) \
                <= config.stall_tol:
            break
    return d_t, d_r, used


# ---------------------------------------------------------------------------
# Coupling learning via the pseudo-likelihood surrogate

def _local_fields(means, ising):
    """Expected coupling field at each node under the factorized support
    posterior: diagonals sum over their row and column neighbors,
    off-diagonals see their two diagonals."""
    q = ising.q_base
    m = np.asarray(means, dtype=float).reshape(q, q)
    m_diag = np.diag(m).copy()
    m_off = m.copy()
    np.fill_diagonal(m_off, 0.0)
    h_diag = (ising.omega_t * m_off).sum(axis=1) + \
        (ising.omega_r * m_off).sum(axis=0)
    h_off = ising.omega_t * m_diag[:, None] + ising.omega_r * m_diag[None, :]
    return m_off, m_diag, h_off, h_diag


def pseudo_likelihood(means, ising):
    """Expected pseudo-log-likelihood of the coupling model: sum over nodes
    of <s> h - log(1 + e^h) with the pairwise moments factorized."""
    q = ising.q_base
    m_off, m_diag, h_off, h_diag = _local_fields(means, ising)
    off_mask = ~np.eye(q, dtype=bool)
    val = np.sum((m_off * h_off - np.logaddexp(0.0, h_off))[off_mask])
    val += np.sum(m_diag * h_diag - np.logaddexp(0.0, h_diag))
    return float(val)


def pseudo_likelihood_grad(means, ising):
    """Gradient with respect to the row and column couplings; each edge sums
    the two local-conditional terms of its endpoints."""
    q = ising.q_base
    m_off, m_diag, h_off, h_diag = _local_fields(means, ising)
    sig_off = expit(h_off)
    sig_diag = expit(h_diag)
    g_t = m_diag[:, None] * (m_off - sig_off) + \
        m_off * (m_diag - sig_diag)[:, None]
    g_r = m_diag[None, :] * (m_off - sig_off) + \
        m_off * (m_diag - sig_diag)[None, :]
    mask = np.eye(q, dtype=bool)
    g_t[mask] = 0.0
    g_r[mask] = 0.0
    return g_t, g_r


OMEGA_BOX = 10.0  # numerical bound; degenerate beliefs would otherwise push
                  # unused edges toward an infinite repulsive coupling


def update_omega(means, ising, armijo, n_steps=1):
    """Armijo ascent step(s) on the expected pseudo-log-likelihood; returns
    the updated coupling model.  Couplings may take any real value but are
    boxed to +-OMEGA_BOX for numerical sanity."""
    w_t = ising.omega_t.copy()
    w_r = ising.omega_r.copy()
    cur = ising
    for _ in range(n_steps):
        f0 = pseudo_likelihood(means, cur)
        g_t, g_r = pseudo_likelihood_grad(means, cur)
        flat = np.concatenate([g_t.ravel(), g_r.ravel()])

        def value_at(v):
            wt = v[:w_t.size].reshape(w_t.shape)
            wr = v[w_t.size:].reshape(w_r.shape)
            return pseudo_likelihood(means, cur.with_couplings(wt, wr))

        x0 = np.concatenate([cur.omega_t.ravel(), cur.omega_r.ravel()])
        x1, _, accepted = _armijo_step(
            x0, flat, value_at, f0, armijo,
            project=lambda v: np.clip(v, -OMEGA_BOX, OMEGA_BOX))
        if not accepted:
            break
        cur = cur.with_couplings(x1[:w_t.size].reshape(w_t.shape),
                                 x1[w_t.size:].reshape(w_r.shape))
    return cur
