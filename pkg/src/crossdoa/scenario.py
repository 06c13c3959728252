"""Scene synthesis for multi-target MIMO radar with inter-target bounce paths.

Generates ground-truth scenes (target geometry, complex path gains, noise
level) and the matched-filtered array observation.  Angles are radians,
distances meters, powers watts.  A colocated radar with half-wavelength ULAs
sees direct (radar-target-radar) echoes plus first-order bounces reflected by
one target onto another: the ordered pair (i, j) departs toward target i and
arrives from target j.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RadarConfig:
    m_t: int                  # transmit antennas
    m_r: int                  # receive antennas
    wavelength: float         # meters
    snapshots: int            # waveform epochs L, >= m_t
    transmit_power: float = 1.0   # watts
    orthogonal_waveform: bool = True

    def __post_init__(self):
        if self.m_t < 1 or self.m_r < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.snapshots < self.m_t:
            raise ValueError("snapshot count must be >= m_t")
        if self.wavelength <= 0 or self.transmit_power <= 0:
            raise ValueError("wavelength and transmit power must be positive")


@dataclass(frozen=True)
class Target:
    angle: float      # radians in (-pi/2, pi/2)
    distance: float   # meters to the radar
    rcs: float        # direct-path radar cross section, m^2

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("target distance must be positive")
        if self.rcs <= 0:
            raise ValueError("target rcs must be positive")


@dataclass(frozen=True)
class Scenario:
    """Ground truth: targets plus per-path complex gains and noise level.

    first_order_gains[i, j] is the gain of the ordered bounce i -> j
    (departure at target i's angle, arrival at target j's); the diagonal is
    unused and zero.  pair_ranges holds the symmetric inter-target distances.
    """
    targets: tuple
    direct_gains: np.ndarray       # (K,) complex
    first_order_gains: np.ndarray  # (K, K) complex, zero diagonal
    pair_ranges: np.ndarray        # (K, K) meters, zero diagonal
    bistatic_rcs: np.ndarray       # (K, K) m^2
    noise_variance: float          # per-entry variance of the receive noise

    @property
    def n_targets(self):
        return len(self.targets)

    @property
    def angles(self):
        return np.array([t.angle for t in self.targets])


@dataclass(frozen=True)
class Observation:
    y: np.ndarray              # (m_t * m_r,) matched-filtered snapshot
    waveform_gram: np.ndarray  # (m_t, m_t) U U^H


def steering_vector(angle, n):
    """Array response of an n-element half-wavelength ULA; entry m is
    exp(j*pi*m*sin(angle))."""
    m = np.arange(n)
    return np.exp(1j * np.pi * m * np.sin(angle))


def steering_vector_derivative(angle, n):
    """d/d(angle) of steering_vector; entry m is
    j*pi*m*cos(angle)*exp(j*pi*m*sin(angle))."""
    m = np.arange(n)
    return 1j * np.pi * m * np.cos(angle) * np.exp(1j * np.pi * m * np.sin(angle))


def gain_direct(distance, rcs, wavelength):
    """Two-way large-scale amplitude of a direct path:
    sqrt(wl^2 * rcs / (64 pi^3 d^4))."""
    if distance <= 0 or rcs <= 0 or wavelength <= 0:
        raise ValueError("gain_direct requires positive inputs")
    return np.sqrt(wavelength**2 * rcs / (64.0 * np.pi**3 * distance**4))


def gain_first_order(d_i, d_j, l_ij, psi_ij, psi_ji, wavelength):
    """Large-scale amplitude of the bounce i -> j:
    sqrt(wl^2 * psi_ij * psi_ji / ((4 pi)^4 d_i^2 l_ij^2 d_j^2))."""
    if min(d_i, d_j, l_ij, psi_ij, psi_ji, wavelength) <= 0:
        raise ValueError("gain_first_order requires positive inputs")
    num = wavelength**2 * psi_ij * psi_ji
    den = (4.0 * np.pi) ** 4 * d_i**2 * l_ij**2 * d_j**2
    return np.sqrt(num / den)


def dbsm_to_m2(dbsm):
    return 10.0 ** (dbsm / 10.0)


def pair_ranges_from_geometry(targets):
    """Planar inter-target distances: each target sits at
    distance * (sin(angle), cos(angle)) relative to the radar."""
    angles = np.array([t.angle for t in targets])
    dists = np.array([t.distance for t in targets])
    x = dists * np.sin(angles)
    z = dists * np.cos(angles)
    dx = x[:, None] - x[None, :]
    dz = z[:, None] - z[None, :]
    return np.hypot(dx, dz)


def _complex_normal(rng, size):
    # CN(0,1): independent real/imag parts of variance 1/2 each
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def synthesize(config, targets, rng, *, noise_variance=0.0, bistatic_rcs=1.0,
               pair_range_scale=1.0):
    """Draw a scene: small-scale fading times the deterministic large-scale
    gains, for every direct path and ordered target pair.

    bistatic_rcs may be a scalar (m^2) or a (K, K) array.  pair_range_scale
    multiplies the geometric inter-target distances, which is how experiment
    sweeps control the bounce-to-direct power ratio.  Deterministic given the
    rng state.
    """
    targets = tuple(targets)
    k = len(targets)
    if k < 1:
        raise ValueError("need at least one target")
    angles = np.array([t.angle for t in targets])
    if len(np.unique(angles)) != k:
        raise ValueError("target angles must be distinct")

    psi = np.broadcast_to(np.asarray(bistatic_rcs, dtype=float), (k, k)).copy()
    ranges = pair_ranges_from_geometry(targets) * pair_range_scale

    g = np.array([gain_direct(t.distance, t.rcs, config.wavelength) for t in targets])
    direct = _complex_normal(rng, k) * g

    first = np.zeros((k, k), dtype=complex)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            h = gain_first_order(targets[i].distance, targets[j].distance,
                                 ranges[i, j], psi[i, j], psi[j, i],
                                 config.wavelength)
            first[i, j] = _complex_normal(rng, ()) * h

    return Scenario(targets=targets, direct_gains=direct,
                    first_order_gains=first, pair_ranges=ranges,
                    bistatic_rcs=psi, noise_variance=float(noise_variance))


def orthogonal_waveform(config):
    """DFT-row waveform with U U^H = (P_T * L / m_t) * I and per-antenna
    power P_T / m_t."""
    m = np.arange(config.m_t)[:, None]
    l = np.arange(config.snapshots)[None, :]
    u = np.exp(-2j * np.pi * m * l / config.snapshots)
    return np.sqrt(config.transmit_power / config.m_t) * u


def random_waveform(config, rng):
    """Unit-modulus random-phase waveform; U U^H is not a scaled identity."""
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(config.m_t, config.snapshots))
    return np.sqrt(config.transmit_power / config.m_t) * np.exp(1j * phase)


def channel_matrix(scenario, config):
    """Deterministic (m_r, m_t) channel for the drawn gains."""
    h = np.zeros((config.m_r, config.m_t), dtype=complex)
    angles = scenario.angles
    for k, t in enumerate(scenario.targets):
        a_r = steering_vector(t.angle, config.m_r)
        a_t = steering_vector(t.angle, config.m_t)
        h += scenario.direct_gains[k] * np.outer(a_r, a_t)
    k_n = scenario.n_targets
    for i in range(k_n):
        for j in range(k_n):
            if i == j:
                continue
            # departure toward target i, arrival from target j
            a_t = steering_vector(angles[i], config.m_t)
            a_r = steering_vector(angles[j], config.m_r)
            h += scenario.first_order_gains[i, j] * np.outer(a_r, a_t)
    return h


def generate_observation(scenario, config, rng, waveform=None):
    """Simulate R = H U + N, matched-filter Y = R U^H, and stack columns.

    The noise N has independent CN(0, noise_variance) entries.  With the
    default orthogonal waveform the filtered noise vec(N U^H) keeps
    independent entries of variance noise_variance * diag(U U^H).
    """
    if waveform is None:
        if config.orthogonal_waveform:
            waveform = orthogonal_waveform(config)
        else:
            waveform = random_waveform(config, rng)
    gram = waveform @ waveform.conj().T
    h = channel_matrix(scenario, config)
    r = h @ waveform
    if scenario.noise_variance > 0:
        r = r + np.sqrt(scenario.noise_variance) * _complex_normal(
            rng, (config.m_r, config.snapshots))
    y_mat = r @ waveform.conj().T
    return Observation(y=y_mat.flatten(order="F"), waveform_gram=gram)


def expected_receive_power(scenario, config, gram=None):
    """(direct, bounce) expected powers of H U over the small-scale fading."""
    if gram is None:
        u = orthogonal_waveform(config)
        gram = u @ u.conj().T
    angles = scenario.angles

    def tx_energy(theta):
        a_t = steering_vector(theta, config.m_t)
        return float(np.real(a_t @ gram @ a_t.conj()))

    g_ls = _large_scale_direct(scenario, config)
    p_los = sum(g ** 2 * config.m_r * tx_energy(t.angle)
                for g, t in zip(g_ls, scenario.targets))
    p_nlos = 0.0
    k_n = scenario.n_targets
    h_ls = _large_scale_first_order(scenario, config)
    for i in range(k_n):
        for j in range(k_n):
            if i != j:
                p_nlos += h_ls[i, j] ** 2 * config.m_r * tx_energy(angles[i])
    return p_los, p_nlos


def _large_scale_direct(scenario, config):
    return np.array([gain_direct(t.distance, t.rcs, config.wavelength)
                     for t in scenario.targets])


def _large_scale_first_order(scenario, config):
    k_n = scenario.n_targets
    h = np.zeros((k_n, k_n))
    for i in range(k_n):
        for j in range(k_n):
            if i == j:
                continue
            h[i, j] = gain_first_order(
                scenario.targets[i].distance, scenario.targets[j].distance,
                scenario.pair_ranges[i, j], scenario.bistatic_rcs[i, j],
                scenario.bistatic_rcs[j, i], config.wavelength)
    return h


def noise_variance_for_snr(scenario, config, snr_db, gram=None):
    """Per-entry noise variance giving the requested receive SNR, defined as
    E||H U||_F^2 / E||N||_F^2."""
    p_los, p_nlos = expected_receive_power(scenario, config, gram=gram)
    snr = 10.0 ** (snr_db / 10.0)
    return (p_los + p_nlos) / (config.m_r * config.snapshots * snr)


# ---------------------------------------------------------------------------
# JSON-friendly serialization (complex numbers become [re, im] pairs)

def _c2l(arr):
    arr = np.asarray(arr)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _l2c(lst):
    arr = np.asarray(lst, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def scenario_to_dict(scenario):
    return {
        "targets": [{"angle": t.angle, "distance": t.distance, "rcs": t.rcs}
                    for t in scenario.targets],
        "direct_gains": _c2l(scenario.direct_gains),
        "first_order_gains": _c2l(scenario.first_order_gains),
        "pair_ranges": scenario.pair_ranges.tolist(),
        "bistatic_rcs": scenario.bistatic_rcs.tolist(),
        "noise_variance": scenario.noise_variance,
    }


def scenario_from_dict(d):
    return Scenario(
        targets=tuple(Target(**t) for t in d["targets"]),
        direct_gains=_l2c(d["direct_gains"]),
        first_order_gains=_l2c(d["first_order_gains"]),
        pair_ranges=np.asarray(d["pair_ranges"], dtype=float),
        bistatic_rcs=np.asarray(d["bistatic_rcs"], dtype=float),
        noise_variance=float(d["noise_variance"]),
    )


def observation_to_dict(obs):
    return {"y": _c2l(obs.y), "waveform_gram": _c2l(obs.waveform_gram)}


def observation_from_dict(d):
    return Observation(y=_l2c(d["y"]), waveform_gram=_l2c(d["waveform_gram"]))
