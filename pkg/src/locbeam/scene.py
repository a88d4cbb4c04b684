"""Network geometry, physical parameters, requirements and uncertainty models.

Everything downstream (channels, Fisher information, rates, the optimizer)
consumes the immutable value types defined here.  Conventions: angles are in
radians, powers in watts, distances in meters; dB/dBm appear only at I/O
boundaries (see :mod:`locbeam.harness`).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np


class DegenerateGeometryError(ValueError):
    """A BS and an MS coincide, so distance/angle are undefined."""


class InvalidCalibrationError(ValueError):
    """Path-loss calibration target is not a loss (>= 0 dB)."""


class LocalizabilityError(ValueError):
    """The scenario cannot support localization (too few anchors, or an
    OFDM grouping that leaves the position unidentifiable)."""


@dataclass(frozen=True)
class Position:
    """A point in the 2-D deployment plane, in meters."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("position coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def distance_and_angle(bs: Position, ms: Position) -> tuple[float, float]:
    """Distance (m) and bearing (rad, in (-pi, pi]) from a BS to an MS.

    The angle is measured at the BS toward the MS, counterclockwise from the
    +x axis.

    Raises:
        DegenerateGeometryError: if the two positions coincide.
    """
    dx = ms.x - bs.x
    dy = ms.y - bs.y
    d = math.hypot(dx, dy)
    if d == 0.0:
        raise DegenerateGeometryError(f"BS and MS coincide at ({bs.x}, {bs.y})")
    return d, math.atan2(dy, dx)


def path_loss(d: float, ref_distance: float, exponent: float) -> float:
    """Amplitude path-loss factor zeta = (1 + (d/Delta)^eta)^(-1/2).

    Note this is an amplitude (not power) loss: the received power scales by
    zeta**2.  zeta(0) = 1 and zeta decreases strictly with distance.
    """
    if d < 0:
        raise ValueError("distance must be nonnegative")
    if ref_distance <= 0 or exponent <= 0:
        raise ValueError("reference distance and exponent must be positive")
    return (1.0 + (d / ref_distance) ** exponent) ** -0.5


def calibrate_reference_distance(target_power_loss_db: float, at_distance: float,
                                 exponent: float) -> float:
    """Reference distance Delta such that zeta(at_distance)**2 hits a dB target.

    Solves (1 + (d/Delta)^eta)^(-1) = 10^(target/10) in closed form.

    Raises:
        InvalidCalibrationError: if the target is not a loss (< 0 dB).
    """
    if target_power_loss_db >= 0:
        raise InvalidCalibrationError("path-loss target must be negative (a loss in dB)")
    if at_distance <= 0:
        raise ValueError("calibration distance must be positive")
    # 10^(-target/10) > 1 is guaranteed by target < 0, so the root exists.
    return at_distance / (10.0 ** (-target_power_loss_db / 10.0) - 1.0) ** (1.0 / exponent)


@dataclass(frozen=True)
class Topology:
    """BS/MS placement in a square region, plus per-BS antenna counts.

    Invariants enforced at construction: at least 3 BSs (triangulation needs
    three anchors) and strictly positive BS-MS distances.
    """

    region_side: float
    bs_positions: tuple[Position, ...]
    ms_positions: tuple[Position, ...]
    bs_antennas: tuple[int, ...]

    def __post_init__(self):
        if len(self.bs_positions) < 3:
            raise LocalizabilityError("at least 3 BSs are required for localization")
        if len(self.bs_antennas) != len(self.bs_positions):
            raise ValueError("one antenna count per BS is required")
        if any(m < 1 for m in self.bs_antennas):
            raise ValueError("antenna counts must be positive")
        for b in self.bs_positions:
            for m in self.ms_positions:
                distance_and_angle(b, m)  # raises on coincident positions

    @property
    def n_bs(self) -> int:
        return len(self.bs_positions)

    @property
    def n_ms(self) -> int:
        return len(self.ms_positions)

    def geometry(self) -> tuple[np.ndarray, np.ndarray]:
        """(n_bs, n_ms) arrays of distances and angles for every pair."""
        d = np.zeros((self.n_bs, self.n_ms))
        phi = np.zeros((self.n_bs, self.n_ms))
        for j, b in enumerate(self.bs_positions):
            for i, m in enumerate(self.ms_positions):
                d[j, i], phi[j, i] = distance_and_angle(b, m)
        return d, phi


def make_topology(region_side, bs_xy, ms_xy, antennas) -> Topology:
    """Build a Topology from plain coordinate sequences.

    ``antennas`` may be a single int (shared by all BSs) or one per BS.
    """
    bs = tuple(Position(float(x), float(y)) for x, y in bs_xy)
    ms = tuple(Position(float(x), float(y)) for x, y in ms_xy)
    if np.isscalar(antennas):
        ant = tuple([int(antennas)] * len(bs))
    else:
        ant = tuple(int(a) for a in antennas)
    return Topology(float(region_side), bs, ms, ant)


def random_topology(seed: int, region_side: float, n_bs: int, n_ms: int,
                    bs_placement: str = "uniform", ms_placement: str = "uniform",
                    ms_offset_frac: float = 0.3, antennas: int = 1) -> Topology:
    """Deterministic scenario generator.

    bs_placement:
        "corners"  -- n_bs must be 4; BSs at the vertices of the square.
        "uniform"  -- i.i.d. uniform over the square.
    ms_placement:
        "uniform"    -- i.i.d. uniform over the square.
        "line_scene" -- MS 1 at the center, MS 2 on the x-axis through the
                        center at ``ms_offset_frac * region_side`` to the
                        right; further MSs (if any) drawn uniformly.

    The same seed always yields the same topology.
    """
    if n_bs < 3:
        raise LocalizabilityError("at least 3 BSs are required for localization")
    rng = np.random.default_rng(seed)
    delta = float(region_side)

    if bs_placement == "corners":
        if n_bs != 4:
            raise ValueError("corner placement requires exactly 4 BSs")
        bs_xy = [(0.0, 0.0), (delta, 0.0), (delta, delta), (0.0, delta)]
    elif bs_placement == "uniform":
        bs_xy = [tuple(rng.uniform(0.0, delta, size=2)) for _ in range(n_bs)]
    else:
        raise ValueError(f"unknown bs_placement {bs_placement!r}")

    if ms_placement == "line_scene":
        ms_xy = [(delta / 2.0, delta / 2.0)]
        if n_ms >= 2:
            ms_xy.append((delta / 2.0 + ms_offset_frac * delta, delta / 2.0))
        while len(ms_xy) < n_ms:
            ms_xy.append(tuple(rng.uniform(0.0, delta, size=2)))
    elif ms_placement == "uniform":
        ms_xy = [tuple(rng.uniform(0.0, delta, size=2)) for _ in range(n_ms)]
    else:
        raise ValueError(f"unknown ms_placement {ms_placement!r}")

    return make_topology(delta, bs_xy, ms_xy[:n_ms], antennas)


@dataclass(frozen=True)
class SystemParams:
    """Physical-layer constants shared by every operation.

    Flat-channel fields:
        n_pilots      -- pilot symbol count n_p per training phase.
        beta          -- effective bandwidth in Hz.
        c             -- propagation speed, m/s.
        n0            -- noise level in watts (the SINR denominators use it
                         directly as a power).
        duty          -- data fraction T_d/T of the transmission block.
        exponent      -- path-loss exponent eta.
        ref_distance  -- path-loss reference distance Delta, meters.
        k_b           -- clock-prior scalar K_b = J_b / (8 pi^2 n_p beta^2),
                         per MS (scalar broadcasts to all MSs).

    OFDM fields (used only in the frequency-selective mode):
        n_subcarriers -- N, assumed even.
        n_blocks      -- N_C beamforming blocks; N must divide evenly.
        t_sample      -- sampling period T_s in seconds.
        n_paths       -- multipath count L per MS.
        t_data        -- data OFDM symbols per pilot symbol (the OFDM rate
                         prefactor is T_d/(N_B (T_d+1)) with this T_d; the
                         flat prefactor duty/N_B uses the distinct ratio
                         above -- the two T_d symbols are unrelated).
    """

    n_pilots: int = 10
    beta: float = 200e3
    c: float = 3e8
    n0: float = 10 ** (-12.1) * 1e-3  # -121 dBm, in watts
    duty: float = 2.0 / 3.0
    exponent: float = 4.0
    ref_distance: float = field(default_factory=lambda: calibrate_reference_distance(-110.0, 100.0, 4.0))
    k_b: float = 0.0
    n_subcarriers: int = 32
    n_blocks: int = 1
    t_sample: float = 5e-6
    n_paths: int = 3
    t_data: int = 2

    def __post_init__(self):
        if self.n_pilots < 1:
            raise ValueError("n_pilots must be >= 1")
        if self.beta <= 0 or self.n0 <= 0 or self.c <= 0:
            raise ValueError("beta, n0 and c must be positive")
        if not (0.0 < self.duty <= 1.0):
            raise ValueError("duty must be in (0, 1]")
        if np.any(np.asarray(self.k_b) < 0):
            raise ValueError("k_b must be nonnegative")
        if self.n_subcarriers % self.n_blocks != 0:
            raise ValueError("n_subcarriers must be divisible by n_blocks")

    @property
    def kappa(self) -> float:
        """Flat-channel EFIM scale 8 pi^2 n_p beta^2 / c^2, units 1/m^2 per unit SNR."""
        return 8.0 * math.pi ** 2 * self.n_pilots * self.beta ** 2 / self.c ** 2

    @property
    def kappa_ofdm(self) -> float:
        """OFDM EFIM scale 8 pi^2 / (c^2 T_s^2)."""
        return 8.0 * math.pi ** 2 / (self.c ** 2 * self.t_sample ** 2)

    def k_b_of(self, ms_index: int) -> float:
        k = np.asarray(self.k_b, dtype=float)
        return float(k) if k.ndim == 0 else float(k[ms_index])

    def with_(self, **kwargs) -> "SystemParams":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class Requirements:
    """Per-MS rate floors (bits/s/Hz) and squared-position-error caps (m^2).

    ``q`` entries may be ``inf`` to disable the localization constraint and
    ``rate`` entries may be 0 to disable the rate constraint.
    """

    rate: tuple[float, ...]
    q: tuple[float, ...]

    def __post_init__(self):
        if len(self.rate) != len(self.q):
            raise ValueError("rate and q must have one entry per MS")
        if any(r < 0 for r in self.rate):
            raise ValueError("rates must be nonnegative")
        if any(not (qq > 0) for qq in self.q):
            raise ValueError("localization requirements must be positive")

    @classmethod
    def broadcast(cls, rate: float, q: float, n_ms: int) -> "Requirements":
        return cls(tuple([float(rate)] * n_ms), tuple([float(q)] * n_ms))


@dataclass(frozen=True)
class UncertaintyModel:
    """Box uncertainty on distances and angles for the robust mode.

    Arrays are (n_bs, n_ms): nominal distance/angle plus half-widths.  The
    induced path-loss interval [zeta_lo, zeta_up] is derived against given
    system parameters; zeta_lo (largest distance) is the worst case used by
    the robust design.
    """

    d_hat: np.ndarray
    phi_hat: np.ndarray
    eps_d: np.ndarray
    eps_phi: np.ndarray
    zeta_lo: np.ndarray
    zeta_up: np.ndarray

    def __post_init__(self):
        if np.any(self.eps_d < 0) or np.any(self.d_hat - self.eps_d <= 0):
            raise ValueError("need eps_d >= 0 and d_hat - eps_d > 0")
        if np.any(self.eps_phi < 0) or np.any(self.eps_phi >= math.pi / 2):
            raise ValueError("angle half-widths must lie in [0, pi/2)")
        if np.any(self.zeta_lo > self.zeta_up + 1e-15):
            raise ValueError("path-loss bounds are inverted")

    @classmethod
    def from_nominal(cls, d_hat, phi_hat, eps_d, eps_phi, params: SystemParams) -> "UncertaintyModel":
        d_hat = np.asarray(d_hat, dtype=float)
        phi_hat = np.asarray(phi_hat, dtype=float)
        eps_d = np.broadcast_to(np.asarray(eps_d, dtype=float), d_hat.shape).copy()
        eps_phi = np.broadcast_to(np.asarray(eps_phi, dtype=float), d_hat.shape).copy()
        zl = np.vectorize(lambda d: path_loss(d, params.ref_distance, params.exponent))(d_hat + eps_d)
        zu = np.vectorize(lambda d: path_loss(d, params.ref_distance, params.exponent))(np.maximum(d_hat - eps_d, 1e-12))
        return cls(d_hat, phi_hat, eps_d, eps_phi, np.atleast_2d(zl), np.atleast_2d(zu))

    @classmethod
    def from_topology(cls, topology: Topology, params: SystemParams,
                      eps_d, eps_phi) -> "UncertaintyModel":
        d, phi = topology.geometry()
        return cls.from_nominal(d, phi, eps_d, eps_phi, params)
