"""SINR and achievable-rate evaluation, plus the MM tangent planes.

Flat-channel rates carry the prefactor duty/N_B (orthogonal BS resources);
OFDM rates carry T_d/(N_B (T_d + 1)) with T_d the data-symbol count.  The two
prefactors are mode-local by design.

The tangent operations return explicit affine data (constant + one gradient
matrix per interfering covariance) so the cone-program builder can consume
them without re-deriving gradients.
"""

import math
from dataclasses import dataclass

import numpy as np

from .channel import effective_gain, effective_gain_stat
from .fim import path_fourier_matrix
from .scene import SystemParams

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class RateReport:
    """Per-link rates (bits/s/Hz), per-MS totals, and the SINR values behind
    them.  ``sinr`` is (n_bs, n_ms) for flat channels and a nested
    [j][i][b][n] list in the OFDM mode."""

    per_link: np.ndarray
    per_ms: np.ndarray
    sinr: object


@dataclass(frozen=True)
class TangentPlane:
    """Affine majorizer of the concave interference log-term.

    value(cov) = constant + sum over (bs, ms) keys of Re tr(gradient * Sigma).
    Evaluating at the expansion point returns exactly the log-term there;
    everywhere else the plane lies above it (concavity), which is what makes
    the MM surrogate rate a lower bound on the true rate.
    """

    constant: float
    gradients: dict

    def evaluate(self, cov) -> float:
        val = self.constant
        for key, g in self.gradients.items():
            sig = cov[key[0]][key[1]]
            if len(key) == 3:  # OFDM keys carry the block index
                sig = sig[key[2]]
            val += float(np.trace(g @ np.asarray(sig)).real)
        return val


def sinr_flat(cov, channels, j: int, i: int, n0: float) -> float:
    """SINR of link (j, i): own gain over noise plus the other MSs' gains."""
    h = channels.h[j][i]
    z = channels.zeta[j, i]
    own = effective_gain(np.asarray(cov[j][i]), h, z)
    interf = sum(effective_gain(np.asarray(cov[j][k]), h, z)
                 for k in range(channels.n_ms) if k != i)
    return own / (n0 + interf)


def rate_flat(cov, channels, params: SystemParams) -> RateReport:
    """Flat-channel rates r_ji = duty/N_B * log2(1 + SINR_ji)."""
    nb, nm = channels.n_bs, channels.n_ms
    pf = params.duty / nb
    sinr = np.zeros((nb, nm))
    per_link = np.zeros((nb, nm))
    for j in range(nb):
        for i in range(nm):
            sinr[j, i] = sinr_flat(cov, channels, j, i, params.n0)
            per_link[j, i] = pf * math.log2(1.0 + sinr[j, i])
    return RateReport(per_link, per_link.sum(axis=0), sinr)


def rate_robust(cov, stats, uncertainty, params: SystemParams) -> RateReport:
    """Worst-case statistical rates: gains zeta_lo^2 tr(R_ji Sigma_jk).

    This is the rate the robust design constrains; path loss sits at the
    largest in-set distance and the channel enters through its second-order
    statistics only.
    """
    nb, nm = stats.n_bs, stats.n_ms
    pf = params.duty / nb
    sinr = np.zeros((nb, nm))
    per_link = np.zeros((nb, nm))
    for j in range(nb):
        for i in range(nm):
            z = uncertainty.zeta_lo[j, i]
            own = effective_gain_stat(np.asarray(cov[j][i]), stats.r[j][i], z)
            interf = sum(effective_gain_stat(np.asarray(cov[j][k]), stats.r[j][i], z)
                         for k in range(nm) if k != i)
            sinr[j, i] = own / (params.n0 + interf)
            per_link[j, i] = pf * math.log2(1.0 + sinr[j, i])
    return RateReport(per_link, per_link.sum(axis=0), sinr)


def dc_tangent_robust(cov_old, stats, uncertainty, i: int, m: int, n0: float) -> TangentPlane:
    """Tangent of the statistical interference log-term (robust mode)."""
    r = stats.r[m][i]
    z = uncertainty.zeta_lo[m, i]
    others = [k for k in range(stats.n_ms) if k != i]
    s_old = sum(effective_gain_stat(np.asarray(cov_old[m][k]), r, z) for k in others)
    denom = _LN2 * (n0 + s_old)
    grad = z ** 2 * r / denom
    gradients = {(m, k): grad for k in others}
    constant = math.log2(n0 + s_old) - s_old / denom
    return TangentPlane(constant, gradients)


def subcarrier_channel(channels, j: int, i: int, b: int, params: SystemParams) -> np.ndarray:
    """(N/N_C, M) effective per-subcarrier vectors f_{ji,bn} = sum_l h_l e^{-i 2 pi c_bn l / N}."""
    h = channels.h[j][i]  # M x L
    n, nc = params.n_subcarriers, params.n_blocks
    phase = path_fourier_matrix(n, nc, b, h.shape[1])  # (N/NC, L)
    return phase @ h.T  # (N/NC, M)


def rate_ofdm(cov_blocks, channels, params: SystemParams) -> RateReport:
    """OFDM rates: per-subcarrier SINRs summed over blocks and subcarriers."""
    nb, nm = channels.n_bs, channels.n_ms
    nc = params.n_blocks
    per = params.n_subcarriers // nc
    pf = params.t_data / (nb * (params.t_data + 1.0))
    per_link = np.zeros((nb, nm))
    sinr = [[[np.zeros(per) for _ in range(nc)] for _ in range(nm)] for _ in range(nb)]
    for j in range(nb):
        for i in range(nm):
            z = channels.zeta[j, i]
            for b in range(nc):
                f = subcarrier_channel(channels, j, i, b, params)
                for n in range(per):
                    own = effective_gain(np.asarray(cov_blocks[j][i][b]), f[n], z)
                    interf = sum(effective_gain(np.asarray(cov_blocks[j][k][b]), f[n], z)
                                 for k in range(nm) if k != i)
                    s = own / (params.n0 + interf)
                    sinr[j][i][b][n] = s
                    per_link[j, i] += pf * math.log2(1.0 + s)
    return RateReport(per_link, per_link.sum(axis=0), sinr)


def dc_tangent_flat(cov_old, channels, i: int, m: int, n0: float) -> TangentPlane:
    """Tangent plane of log2(N0 + interference of MS i at BS m) at cov_old.

    The gradient with respect to each interfering covariance Sigma_mp is
    zeta_mi^2 h_mi h_mi' / (ln2 (N0 + S_old)).
    """
    h = channels.h[m][i]
    z = channels.zeta[m, i]
    others = [k for k in range(channels.n_ms) if k != i]
    s_old = sum(effective_gain(np.asarray(cov_old[m][k]), h, z) for k in others)
    denom = _LN2 * (n0 + s_old)
    outer = z ** 2 * np.outer(h, h.conj())
    gradients = {(m, k): outer / denom for k in others}
    constant = math.log2(n0 + s_old) - s_old / denom
    return TangentPlane(constant, gradients)


def dc_tangent_ofdm(cov_old, channels, i: int, p: int, b: int, n: int,
                    params: SystemParams) -> TangentPlane:
    """Per-subcarrier tangent of log2(N0 + interference) for block b, tone n."""
    f = subcarrier_channel(channels, p, i, b, params)[n]
    z = channels.zeta[p, i]
    others = [k for k in range(channels.n_ms) if k != i]
    s_old = sum(effective_gain(np.asarray(cov_old[p][k][b]), f, z) for k in others)
    denom = _LN2 * (params.n0 + s_old)
    outer = z ** 2 * np.outer(f, f.conj())
    gradients = {(p, k, b): outer / denom for k in others}
    constant = math.log2(params.n0 + s_old) - s_old / denom
    return TangentPlane(constant, gradients)
