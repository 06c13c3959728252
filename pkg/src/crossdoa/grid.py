"""Expanded 2D angular grid, offset bookkeeping, and the sensing dictionary.

The transmit and receive angle axes are each discretized into Q cell-centered
points; the product grid has Q^2 cells indexed q = i*Q + j (0-based, i =
transmit index, j = receive index).  Each dictionary column couples one
(transmit, receive) angle pair, optionally shifted by per-cell continuous
offsets, and is filtered through the transmit waveform gram.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import steering_vector, steering_vector_derivative


class GridCollisionError(ValueError):
    """Two target pairs share a nearest grid cell; regenerate the scene."""


@dataclass(frozen=True)
class GridModel:
    q_base: int          # Q, per-dimension cell count
    base: np.ndarray     # (Q,) cell-center angles on [-pi/2, pi/2]
    theta_t: np.ndarray  # (Q^2,) transmit angle per cell
    theta_r: np.ndarray  # (Q^2,) receive angle per cell

    @property
    def q_total(self):
        return self.q_base * self.q_base

    @property
    def spacing(self):
        return np.pi / self.q_base

    @property
    def half_spacing(self):
        return 0.5 * self.spacing

    def cell_index(self, i, j):
        """Linear cell index for transmit index i, receive index j."""
        return i * self.q_base + j

    def diagonal_cells(self):
        """Cells with equal transmit and receive angles, in base-grid order."""
        return np.arange(self.q_base) * (self.q_base + 1)

    def is_diagonal(self):
        mask = np.zeros(self.q_total, dtype=bool)
        mask[self.diagonal_cells()] = True
        return mask


@dataclass(frozen=True)
class Dictionaries:
    a_t: np.ndarray  # (m_t, Q^2) transmit steering dictionary
    a_r: np.ndarray  # (m_r, Q^2) receive steering dictionary
    f: np.ndarray    # (m_t*m_r, Q^2) sensing measurement matrix


def build_grid(q):
    """Cell-centered uniform grid: base angle i is -pi/2 + (i + 1/2) * pi/Q.

    Cell centers (rather than endpoint-inclusive spacing) keep +-pi/2 out of
    the dictionary; those two angles alias to the same steering vector and
    would make the dictionary rank deficient.
    """
    if q < 2:
        raise ValueError("grid needs at least 2 points per dimension")
    base = -np.pi / 2 + (np.arange(q) + 0.5) * np.pi / q
    idx = np.arange(q * q)
    theta_t = base[idx // q]
    theta_r = base[idx % q]
    return GridModel(q_base=q, base=base, theta_t=theta_t, theta_r=theta_r)


def _gram_column(gram, a_t_col, a_r_col):
    # ((U U^H)^T kron I) (a_t kron a_r) == (gram^T a_t) kron a_r
    return np.kron(gram.T @ a_t_col, a_r_col)


def measurement_matrix(grid, dtheta_t, dtheta_r, waveform_gram, m_t=None, m_r=None):
    """Assemble the dictionaries and measurement matrix at the given offsets.

    Column q is the waveform-filtered Kronecker response of the offset
    transmit/receive angle pair of cell q.
    """
    if m_t is None:
        m_t = waveform_gram.shape[0]
    if m_r is None:
        m_r = m_t
    dtheta_t = np.asarray(dtheta_t, dtype=float)
    dtheta_r = np.asarray(dtheta_r, dtype=float)
    if dtheta_t.shape != (grid.q_total,) or dtheta_r.shape != (grid.q_total,):
        raise ValueError("offset vectors must have length Q^2")
    ang_t = grid.theta_t + dtheta_t
    ang_r = grid.theta_r + dtheta_r
    # vectorized steering dictionaries: rows are antenna indices
    a_t = np.exp(1j * np.pi * np.arange(m_t)[:, None] * np.sin(ang_t)[None, :])
    a_r = np.exp(1j * np.pi * np.arange(m_r)[:, None] * np.sin(ang_r)[None, :])
    bt = waveform_gram.T @ a_t                       # (m_t, Q^2)
    f = bt[:, None, :] * a_r[None, :, :]             # (m_t, m_r, Q^2)
    f = f.reshape(m_t * m_r, grid.q_total)           # column-stacked kron
    return Dictionaries(a_t=a_t, a_r=a_r, f=f)


def build_columns(grid, dtheta_t, dtheta_r, waveform_gram, indices, m_t=None, m_r=None):
    """Measurement-matrix columns for selected cells only.

    dtheta_t/dtheta_r are per-selected-cell offsets (same length as indices).
    """
    if m_t is None:
        m_t = waveform_gram.shape[0]
    if m_r is None:
        m_r = m_t
    indices = np.asarray(indices, dtype=int)
    ang_t = grid.theta_t[indices] + np.asarray(dtheta_t, dtype=float)
    ang_r = grid.theta_r[indices] + np.asarray(dtheta_r, dtype=float)
    a_t = np.exp(1j * np.pi * np.arange(m_t)[:, None] * np.sin(ang_t)[None, :])
    a_r = np.exp(1j * np.pi * np.arange(m_r)[:, None] * np.sin(ang_r)[None, :])
    bt = waveform_gram.T @ a_t
    f = bt[:, None, :] * a_r[None, :, :]
    return f.reshape(m_t * m_r, len(indices))


def column_derivative(grid, dtheta_t, dtheta_r, waveform_gram, q, wrt,
                      m_t=None, m_r=None):
    """Analytic derivative of measurement column q with respect to its own
    transmit or receive offset.

    Only column q depends on offset q, so this is the whole Jacobian column.
    """
    if m_t is None:
        m_t = waveform_gram.shape[0]
    if m_r is None:
        m_r = m_t
    if not 0 <= q < grid.q_total:
        raise ValueError(f"cell index {q} out of range")
    ang_t = grid.theta_t[q] + dtheta_t[q]
    ang_r = grid.theta_r[q] + dtheta_r[q]
    a_t = steering_vector(ang_t, m_t)
    a_r = steering_vector(ang_r, m_r)
    if wrt == "transmit":
        da_t = steering_vector_derivative(ang_t, m_t)
        return _gram_column(waveform_gram, da_t, a_r)
    if wrt == "receive":
        da_r = steering_vector_derivative(ang_r, m_r)
        return _gram_column(waveform_gram, a_t, da_r)
    raise ValueError("wrt must be 'transmit' or 'receive'")


def column_derivatives(grid, dtheta_t, dtheta_r, waveform_gram, indices, wrt,
                       m_t=None, m_r=None):
    """Stacked column derivatives for selected cells; offsets are
    per-selected-cell (same length as indices)."""
    if m_t is None:
        m_t = waveform_gram.shape[0]
    if m_r is None:
        m_r = m_t
    indices = np.asarray(indices, dtype=int)
    ang_t = grid.theta_t[indices] + np.asarray(dtheta_t, dtype=float)
    ang_r = grid.theta_r[indices] + np.asarray(dtheta_r, dtype=float)
    mt_idx = np.arange(m_t)[:, None]
    mr_idx = np.arange(m_r)[:, None]
    a_t = np.exp(1j * np.pi * mt_idx * np.sin(ang_t)[None, :])
    a_r = np.exp(1j * np.pi * mr_idx * np.sin(ang_r)[None, :])
    if wrt == "transmit":
        a_t = 1j * np.pi * mt_idx * np.cos(ang_t)[None, :] * a_t
    elif wrt == "receive":
        a_r = 1j * np.pi * mr_idx * np.cos(ang_r)[None, :] * a_r
    else:
        raise ValueError("wrt must be 'transmit' or 'receive'")
    bt = waveform_gram.T @ a_t
    f = bt[:, None, :] * a_r[None, :, :]
    return f.reshape(m_t * m_r, len(indices))


@dataclass(frozen=True)
class PairAssignment:
    """Nearest-cell map for every ordered target pair (i, j), i.e. the cell
    whose transmit angle is closest to target i and receive angle closest to
    target j; i == j covers the direct paths."""
    cells: np.ndarray     # (K, K) linear cell indices
    dtheta_t: np.ndarray  # (Q^2,) transmit offsets, zero off the active set
    dtheta_r: np.ndarray  # (Q^2,) receive offsets
    active: np.ndarray    # sorted unique active cell indices


def nearest_grid_assignment(true_angles, grid):
    """Assign each ordered target pair to its nearest grid cell and record
    the residual angular offsets.

    Raises GridCollisionError when two pairs land on the same cell, which the
    experiment harness treats as a resample-the-scene signal.
    """
    true_angles = np.asarray(true_angles, dtype=float)
    k = len(true_angles)
    if k * k > grid.q_total:
        raise ValueError("more target pairs than grid cells")
    cells = np.zeros((k, k), dtype=int)
    dtheta_t = np.zeros(grid.q_total)
    dtheta_r = np.zeros(grid.q_total)
    for i in range(k):
        for j in range(k):
            cost = np.abs(true_angles[i] - grid.theta_t) + \
                np.abs(true_angles[j] - grid.theta_r)
            q = int(np.argmin(cost))
            cells[i, j] = q
            dtheta_t[q] = true_angles[i] - grid.theta_t[q]
            dtheta_r[q] = true_angles[j] - grid.theta_r[q]
    flat = cells.ravel()
    if len(np.unique(flat)) != flat.size:
        raise GridCollisionError("target pairs share a nearest grid cell")
    return PairAssignment(cells=cells, dtheta_t=dtheta_t, dtheta_r=dtheta_r,
                          active=np.unique(flat))


def clamp_offsets(offsets, grid):
    """Keep offsets within half a cell so cell identities stay unambiguous."""
    return np.clip(offsets, -grid.half_spacing, grid.half_spacing)
