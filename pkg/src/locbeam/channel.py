"""Channel generation: steering vectors, multipath matrices, angular statistics.

The effective-gain quadratic form defined here is the single entry point
through which beamforming covariances reach both the rates and the Fisher
information: every gain is ``zeta^2 * h' Sigma h`` (or the trace form with a
covariance matrix in place of the rank-1 outer product).
"""

import math
from dataclasses import dataclass

import numpy as np

from .scene import SystemParams, Topology, path_loss

# Quadratic forms this negative are treated as roundoff and clamped to zero;
# anything more negative means a genuinely non-PSD input.
_NEG_CLAMP = -1e-10


def steering_vector(phi: float, m: int) -> np.ndarray:
    """Half-wavelength ULA steering vector [1, e^{i pi cos phi}, ...] of length m."""
    if m < 1:
        raise ValueError("antenna count must be >= 1")
    return np.exp(1j * math.pi * np.arange(m) * math.cos(phi))


@dataclass(frozen=True)
class FlatChannelSet:
    """Frequency-flat channels h_ji plus the geometry they were built from.

    ``h[j][i]`` is the length-M_j channel vector of pair (j, i); ``zeta``,
    ``dist`` and ``phi`` are (n_bs, n_ms) arrays.
    """

    h: tuple
    zeta: np.ndarray
    dist: np.ndarray
    phi: np.ndarray

    @property
    def n_bs(self) -> int:
        return len(self.h)

    @property
    def n_ms(self) -> int:
        return len(self.h[0])

    def antennas(self, j: int) -> int:
        return len(self.h[j][0])


@dataclass(frozen=True)
class SelectiveChannelSet:
    """Multipath channels: ``h[j][i]`` is the M_j x L_i matrix with one column
    per path.  Geometry arrays as in FlatChannelSet."""

    h: tuple
    zeta: np.ndarray
    dist: np.ndarray
    phi: np.ndarray

    @property
    def n_bs(self) -> int:
        return len(self.h)

    @property
    def n_ms(self) -> int:
        return len(self.h[0])

    @property
    def n_paths(self) -> int:
        return self.h[0][0].shape[1]

    def antennas(self, j: int) -> int:
        return self.h[j][0].shape[0]


@dataclass(frozen=True)
class ChannelStats:
    """Second-order channel statistics R_ji = E[h h'] for the robust mode."""

    r: tuple

    def __post_init__(self):
        for row in self.r:
            for rm in row:
                if np.linalg.norm(rm - rm.conj().T) > 1e-12 * max(1.0, np.linalg.norm(rm)):
                    raise ValueError("covariance statistics must be Hermitian")

    @property
    def n_bs(self) -> int:
        return len(self.r)

    @property
    def n_ms(self) -> int:
        return len(self.r[0])


def flat_channels(topology: Topology, params: SystemParams) -> FlatChannelSet:
    """Steering-vector channels with geometric path loss for every pair."""
    d, phi = topology.geometry()
    zeta = np.vectorize(lambda x: path_loss(x, params.ref_distance, params.exponent))(d)
    h = tuple(
        tuple(steering_vector(phi[j, i], topology.bs_antennas[j]) for i in range(topology.n_ms))
        for j in range(topology.n_bs)
    )
    return FlatChannelSet(h, zeta, d, phi)


def selective_channels(topology: Topology, params: SystemParams,
                       decay_rate: float = 1.0, angle_spread_deg: float = 10.0,
                       seed: int = 0) -> SelectiveChannelSet:
    """Multipath channels h_l = |g_l| s(phi + eps_l) with exponential decay.

    Per-path magnitudes are |CN(0, p_l)| draws with p_l proportional to
    exp(-decay_rate * l), normalized so the mean total path power is 1 (the
    decay constant and the total-power convention are config here; defaults
    decay_rate=1.0, unit total power).  Per-path angle offsets are uniform on
    +/- angle_spread_deg.  Deterministic for a fixed seed.
    """
    L = params.n_paths
    if L < 1:
        raise ValueError("need at least one path")
    rng = np.random.default_rng(seed)
    d, phi = topology.geometry()
    zeta = np.vectorize(lambda x: path_loss(x, params.ref_distance, params.exponent))(d)
    powers = np.exp(-decay_rate * np.arange(L))
    powers /= powers.sum()
    spread = math.radians(angle_spread_deg)
    h = []
    for j in range(topology.n_bs):
        m = topology.bs_antennas[j]
        row = []
        for i in range(topology.n_ms):
            cols = []
            for l in range(L):
                g = rng.normal(scale=math.sqrt(powers[l] / 2.0), size=2)
                mag = math.hypot(g[0], g[1])
                off = rng.uniform(-spread, spread) if spread > 0 else 0.0
                cols.append(mag * steering_vector(phi[j, i] + off, m))
            row.append(np.stack(cols, axis=1))
        h.append(tuple(row))
    return SelectiveChannelSet(tuple(h), zeta, d, phi)


def angular_covariance(phi_hat: float, eps_phi: float, m: int, n_samples: int = 1001) -> np.ndarray:
    """Deterministic quadrature average of s(phi) s(phi)' over the angle box.

    Uses a uniform grid of n_samples angles on [phi_hat - eps, phi_hat + eps]
    (quadrature, not random sampling, so robust-mode results are exactly
    reproducible).  The result is Hermitian PSD with trace exactly m.
    """
    if n_samples < 1:
        raise ValueError("need at least one quadrature node")
    if eps_phi == 0.0 or n_samples == 1:
        s = steering_vector(phi_hat, m)
        return np.outer(s, s.conj())
    grid = np.linspace(phi_hat - eps_phi, phi_hat + eps_phi, n_samples)
    s = np.exp(1j * math.pi * np.arange(m)[None, :] * np.cos(grid)[:, None])
    r = (s[:, :, None] * s.conj()[:, None, :]).mean(axis=0)
    # unit-modulus entries make every diagonal exactly 1; pin it against roundoff
    np.fill_diagonal(r, 1.0)
    return r


def quad_gain(g: np.ndarray, sigma: np.ndarray) -> float:
    """Real part of tr(G Sigma) with a roundoff clamp at zero.

    G and Sigma are Hermitian with G PSD; values below the clamp threshold
    indicate a non-PSD input and raise.
    """
    val = float(np.trace(g @ sigma).real)
    scale = max(1.0, float(np.trace(np.abs(g))) * float(np.trace(np.abs(sigma))))
    if val < _NEG_CLAMP * scale:
        raise ValueError(f"quadratic form is significantly negative ({val:g}); non-PSD input?")
    return max(val, 0.0)


def effective_gain(sigma: np.ndarray, h: np.ndarray, zeta: float) -> float:
    """Effective gain xi = zeta^2 * h' Sigma h (real, clamped at zero).

    The same operation serves the robust statistics form: pass R through
    :func:`effective_gain_stat` which evaluates zeta^2 tr(R Sigma).
    """
    h = np.asarray(h)
    sigma = np.asarray(sigma)
    if sigma.shape != (h.size, h.size):
        raise ValueError(f"dimension mismatch: Sigma {sigma.shape} vs h {h.shape}")
    val = float((h.conj() @ sigma @ h).real) * zeta ** 2
    scale = max(1.0, float(np.abs(sigma).sum()) * float(np.abs(h).sum()) ** 2 * zeta ** 2)
    if val < _NEG_CLAMP * scale:
        raise ValueError(f"effective gain is significantly negative ({val:g}); non-PSD input?")
    return max(val, 0.0)


def effective_gain_stat(sigma: np.ndarray, r: np.ndarray, zeta: float) -> float:
    """Statistical effective gain zeta^2 tr(R Sigma) used by the robust mode."""
    if sigma.shape != r.shape:
        raise ValueError(f"dimension mismatch: Sigma {sigma.shape} vs R {r.shape}")
    return zeta ** 2 * quad_gain(r, sigma)


def channels_to_json(channels) -> dict:
    """Serializable form of a channel set (complex entries as [re, im] pairs)."""
    def enc(a):
        a = np.asarray(a)
        return np.stack([a.real, a.imag], axis=-1).tolist()

    return {
        "kind": type(channels).__name__,
        "h": [[enc(channels.h[j][i]) for i in range(channels.n_ms)] for j in range(channels.n_bs)],
        "zeta": channels.zeta.tolist(),
        "dist": channels.dist.tolist(),
        "phi": channels.phi.tolist(),
    }


def channels_from_json(blob: dict):
    """Inverse of :func:`channels_to_json`."""
    def dec(a):
        a = np.asarray(a, dtype=float)
        return a[..., 0] + 1j * a[..., 1]

    h = tuple(tuple(dec(x) for x in row) for row in blob["h"])
    cls = FlatChannelSet if blob["kind"] == "FlatChannelSet" else SelectiveChannelSet
    return cls(h, np.asarray(blob["zeta"]), np.asarray(blob["dist"]), np.asarray(blob["phi"]))
