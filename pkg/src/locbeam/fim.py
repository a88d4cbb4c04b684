"""Localization-accuracy mathematics.

Direction matrices, the four equivalent-Fisher-information variants (flat
TOA/TDOA, robust surrogates, OFDM TOA), the CRB, and independent full-FIM
oracles that rebuild the same information from first principles (Slepian-Bang
blocks + Schur complement) for cross-validation.

Covariance sets are passed as nested indexables: ``cov[j][i]`` is the
Hermitian M_j x M_j matrix of pair (j, i), or ``cov[j][i][b]`` per block in
the OFDM mode.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import effective_gain, effective_gain_stat
from .scene import SystemParams


class DegenerateInputError(ValueError):
    """EFIM undefined for these inputs (0/0 normalization, K_b = 0 division)."""


class OracleDegenerateError(ValueError):
    """A nuisance block of the full FIM is singular; the oracle cannot reduce."""


@dataclass(frozen=True)
class Efim:
    """2x2 equivalent Fisher information for one MS's position, 1/m^2 units.

    ``kappa`` records the physical scale (8 pi^2 n_p beta^2 / c^2 for flat
    channels, 8 pi^2 / (c^2 T_s^2) for OFDM) that multiplies the SNR-level
    sums inside ``matrix``.
    """

    matrix: np.ndarray
    kappa: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 2):
            raise ValueError("EFIM must be 2x2")
        if abs(m[0, 1] - m[1, 0]) > 1e-9 * max(1.0, float(np.abs(m).max())):
            raise ValueError("EFIM must be symmetric")

    def min_eigenvalue(self) -> float:
        a, b, c = self.matrix[0, 0], self.matrix[0, 1], self.matrix[1, 1]
        return 0.5 * (a + c) - math.hypot(0.5 * (a - c), b)


@dataclass(frozen=True)
class CrbResult:
    """Trace of the inverse EFIM (m^2); +inf when the EFIM is singular."""

    value: float
    min_eigenvalue: float


def singularity_threshold(j: np.ndarray) -> float:
    """Scale-aware eigenvalue floor below which the CRB is reported infinite."""
    return 1e-12 * max(1.0, float(np.abs(j).max()))


def crb(efim: Efim) -> CrbResult:
    """tr(J^{-1}) via the closed-form 2x2 inverse."""
    j = np.asarray(efim.matrix, dtype=float)
    a, b, c = j[0, 0], j[0, 1], j[1, 1]
    lo = 0.5 * (a + c) - math.hypot(0.5 * (a - c), b)
    if lo <= singularity_threshold(j):
        return CrbResult(math.inf, lo)
    det = a * c - b * b
    return CrbResult((a + c) / det, lo)


def j_phi(phi: float) -> np.ndarray:
    """Rank-1 direction matrix q q^T with q = [cos phi, sin phi]^T."""
    q = np.array([math.cos(phi), math.sin(phi)])
    return np.outer(q, q)


def j_phi_pair(phi: float, phi2: float) -> np.ndarray:
    """Paired direction matrix (q - q')(q - q')^T for delay differences."""
    dq = np.array([math.cos(phi) - math.cos(phi2), math.sin(phi) - math.sin(phi2)])
    return np.outer(dq, dq)


def q_phi_toa(phi_hat: float, eps_phi: float) -> np.ndarray:
    """Robust surrogate J_phi(phi_hat) - sin(eps) I; dominated by J_phi(phi)
    for every phi within eps of phi_hat (may be indefinite)."""
    if not (0.0 <= eps_phi < math.pi / 2):
        raise ValueError("eps_phi must lie in [0, pi/2)")
    return j_phi(phi_hat) - math.sin(eps_phi) * np.eye(2)


def q_phi_tdoa(phi_hat: float, phi_hat2: float, eps: float, eps2: float) -> np.ndarray:
    """Paired robust surrogate with margin sin(e) + sin(e') + 4 sin((e+e')/2)."""
    for e in (eps, eps2):
        if not (0.0 <= e < math.pi / 2):
            raise ValueError("angle half-widths must lie in [0, pi/2)")
    margin = math.sin(eps) + math.sin(eps2) + 4.0 * math.sin(0.5 * (eps + eps2))
    return j_phi_pair(phi_hat, phi_hat2) - margin * np.eye(2)


def snr_values(cov, channels, ms_index: int, n0: float) -> np.ndarray:
    """Per-BS SNR_ji = sum_k xi_ji^(k)(Sigma_jk) / N0 for MS ms_index."""
    i = ms_index
    out = np.zeros(channels.n_bs)
    for j in range(channels.n_bs):
        h = channels.h[j][i]
        z = channels.zeta[j, i]
        out[j] = sum(effective_gain(np.asarray(cov[j][k]), h, z) for k in range(channels.n_ms)) / n0
    return out


def efim_toa_flat(cov, channels, params: SystemParams, ms_index: int) -> Efim:
    """TOA EFIM: kappa * sum_j SNR_ji * J_phi(phi_ji); linear in the covariances."""
    snr = snr_values(cov, channels, ms_index, params.n0)
    j = np.zeros((2, 2))
    for jj in range(channels.n_bs):
        j += snr[jj] * j_phi(channels.phi[jj, ms_index])
    return Efim(params.kappa * j, params.kappa)


def _tdoa_from_parts(snr: np.ndarray, phis: np.ndarray, k_b: float) -> np.ndarray:
    """Normalized (kappa = 1) TDOA EFIM from per-BS SNRs and angles."""
    total = float(snr.sum()) + k_b
    if total <= 0.0:
        raise DegenerateInputError("TDOA EFIM undefined: zero total SNR and no clock prior")
    num = np.zeros((2, 2))
    nb = len(snr)
    for m in range(nb):
        num += k_b * snr[m] * j_phi(phis[m])
    for j in range(nb):
        for l in range(j + 1, nb):
            num += snr[j] * snr[l] * j_phi_pair(phis[j], phis[l])
    return num / total


def efim_tdoa_flat(cov, channels, params: SystemParams, ms_index: int,
                   k_b: float | None = None) -> Efim:
    """TDOA EFIM with clock-prior scalar K_b (pairwise-difference form).

    In debug runs the equivalent TOA-minus-correction form is evaluated as an
    algebraic cross-check.
    """
    if k_b is None:
        k_b = params.k_b_of(ms_index)
    if k_b < 0:
        raise ValueError("k_b must be nonnegative")
    snr = snr_values(cov, channels, ms_index, params.n0)
    phis = channels.phi[:, ms_index]
    j = _tdoa_from_parts(snr, phis, k_b)
    if __debug__:
        # Equivalent form: J_TOA minus the Gram correction, same denominator.
        toa = sum(snr[m] * j_phi(phis[m]) for m in range(len(snr)))
        g = sum(snr[m] * np.array([math.cos(phis[m]), math.sin(phis[m])]) for m in range(len(snr)))
        alt = toa - np.outer(g, g) / (float(snr.sum()) + k_b)
        assert np.allclose(j, alt, atol=1e-9 * max(1.0, float(np.abs(j).max())), rtol=1e-9)
    return Efim(params.kappa * j, params.kappa)


def efim_tdoa_lower_bound(cov, channels, params: SystemParams, ms_index: int,
                          k_b: float | None = None) -> Efim:
    """Covariance-linear lower bound on the TDOA EFIM (may be indefinite).

    Subtracts from the TOA EFIM the worst-case Gram correction obtained by
    bounding every SNR by N_M zeta^2 ||h||^2 / N0; valid for K_b > 0 and
    tight only when K_b dominates the total SNR.
    """
    if k_b is None:
        k_b = params.k_b_of(ms_index)
    if k_b <= 0:
        raise ZeroDivisionError("the TDOA lower bound requires a positive clock prior")
    i = ms_index
    toa = efim_toa_flat(cov, channels, params, i)
    g = np.zeros(2)
    for j in range(channels.n_bs):
        h = channels.h[j][i]
        smax = channels.zeta[j, i] ** 2 * float(np.vdot(h, h).real) / params.n0
        g += smax * np.array([math.cos(channels.phi[j, i]), math.sin(channels.phi[j, i])])
    corr = params.kappa * channels.n_ms ** 2 / k_b * np.outer(g, g)
    m = toa.matrix - corr
    return Efim(0.5 * (m + m.T), params.kappa)


def robust_gains(cov, stats, uncertainty, ms_index: int) -> np.ndarray:
    """(n_bs, n_ms) statistical gains zeta_lo^2 tr(R_ji Sigma_jk) at the
    worst-case path loss."""
    i = ms_index
    nb, nm = stats.n_bs, stats.n_ms
    out = np.zeros((nb, nm))
    for j in range(nb):
        for k in range(nm):
            out[j, k] = effective_gain_stat(np.asarray(cov[j][k]), stats.r[j][i],
                                            uncertainty.zeta_lo[j, i])
    return out


def efim_robust(cov, stats, uncertainty, params: SystemParams, ms_index: int,
                mode: str) -> Efim:
    """Worst-case EFIM surrogate for the robust design.

    Replaces |effective gain|^2 terms by statistical gains at the worst-case
    path loss and the direction matrices by their uncertainty-dominated
    counterparts.  mode "toa" or "tdoa".  The result may be indefinite when
    the angle boxes are large; callers detect that via crb() returning +inf.
    """
    i = ms_index
    xi = robust_gains(cov, stats, uncertainty, i)  # watts
    phis = uncertainty.phi_hat[:, i]
    eps = uncertainty.eps_phi[:, i]
    nb = stats.n_bs
    if mode == "toa":
        j = np.zeros((2, 2))
        for jj in range(nb):
            j += (xi[jj].sum() / params.n0) * q_phi_toa(phis[jj], eps[jj])
        return Efim(params.kappa * j, params.kappa)
    if mode == "tdoa":
        k_b = params.k_b_of(i)
        s = xi.sum(axis=1) / params.n0  # per-BS statistical SNR
        total = float(s.sum()) + k_b
        if total <= 0.0:
            raise DegenerateInputError("robust TDOA EFIM undefined: zero gains and no prior")
        num = np.zeros((2, 2))
        for m in range(nb):
            num += k_b * s[m] * q_phi_toa(phis[m], eps[m])
        for l in range(nb):
            for t in range(l + 1, nb):
                num += s[l] * s[t] * q_phi_tdoa(phis[l], phis[t], eps[l], eps[t])
        return Efim(params.kappa * num / total, params.kappa)
    raise ValueError(f"unknown robust mode {mode!r}")


# ---------------------------------------------------------------------------
# OFDM machinery


def subcarrier_indices(n: int, n_blocks: int, block: int) -> np.ndarray:
    """Signed subcarrier indices c_bn of one beamforming block (0-based block)."""
    per = n // n_blocks
    return (per * block - n // 2 + np.arange(1, per + 1)).astype(float)


def path_fourier_matrix(n: int, n_blocks: int, block: int, n_paths: int) -> np.ndarray:
    """(N/N_C) x L matrix with entries exp(-i 2 pi c_bn l / N)."""
    c = subcarrier_indices(n, n_blocks, block)
    l = np.arange(n_paths)
    return np.exp(-2j * math.pi * np.outer(c, l) / n)


def delay_kernel(n: int, n_blocks: int, block: int, n_paths: int) -> np.ndarray:
    """L x L Hermitian PSD kernel F' K P_perp K F of one block.

    P_perp projects onto the orthogonal complement of the column space of F,
    so the kernel vanishes when the block has no excess dimensions beyond the
    path count (N/N_C <= L): delays are then unidentifiable.
    """
    f = path_fourier_matrix(n, n_blocks, block, n_paths)
    k = np.diag(subcarrier_indices(n, n_blocks, block))
    proj = np.eye(f.shape[0]) - f @ np.linalg.pinv(f)
    kern = f.conj().T @ k @ proj @ k @ f
    return 0.5 * (kern + kern.conj().T)


def ofdm_block_gain(sigma: np.ndarray, h: np.ndarray, zeta: float, kernel: np.ndarray) -> float:
    """Block localization gain xi_{ji,b} = tr(zeta^2 H Kern H' Sigma)."""
    g = zeta ** 2 * (h @ kernel @ h.conj().T)
    val = float(np.trace(g @ sigma).real)
    return max(val, 0.0)


def efim_toa_ofdm(cov_blocks, channels, params: SystemParams, ms_index: int) -> Efim:
    """OFDM TOA EFIM: kappa_ofdm / N0 * sum_{j,b,k} xi_{ji,b} J_phi(phi_ji)."""
    i = ms_index
    per = params.n_subcarriers // params.n_blocks
    if per <= channels.n_paths:
        # Remark-2 regime: the kernels are exactly zero and the CRB is infinite.
        return Efim(np.zeros((2, 2)), params.kappa_ofdm)
    kernels = [delay_kernel(params.n_subcarriers, params.n_blocks, b, channels.n_paths)
               for b in range(params.n_blocks)]
    j = np.zeros((2, 2))
    for jj in range(channels.n_bs):
        h = channels.h[jj][i]
        z = channels.zeta[jj, i]
        direction = j_phi(channels.phi[jj, i])
        for b in range(params.n_blocks):
            gain = sum(ofdm_block_gain(np.asarray(cov_blocks[jj][k][b]), h, z, kernels[b])
                       for k in range(channels.n_ms))
            j += (gain / params.n0) * direction
    return Efim(params.kappa_ofdm * j, params.kappa_ofdm)


# ---------------------------------------------------------------------------
# Full-FIM oracles (independent constructions)


def oracle_full_fim_flat(cov, channels, params: SystemParams, ms_index: int,
                         mode: str, k_b: float | None = None) -> Efim:
    """Rebuild the flat-channel EFIM from the full Fisher information matrix.

    Assembles the Jacobian T, the per-BS Slepian-Bang blocks Psi (real pilot
    sequences assumed, so the delay/gain blocks decouple), the clock prior in
    TDOA mode, and Schur-complements the nuisance parameters away.  This is
    the independent check for efim_toa_flat / efim_tdoa_flat.
    """
    i = ms_index
    nb, nm = channels.n_bs, channels.n_ms
    snr = snr_values(cov, channels, i, params.n0)
    sb = 8.0 * math.pi ** 2 * params.n_pilots * params.beta ** 2  # Slepian-Bang delay scale
    gain_info = 2.0 * params.n_pilots / params.n0
    c = params.c
    width = 2 * nm + 1  # per-BS parameter block: [tau, Re/Im gains]
    tdoa = mode == "tdoa"
    if tdoa and k_b is None:
        k_b = params.k_b_of(i)

    n_rows = (3 if tdoa else 2) + 2 * nm * nb
    t = np.zeros((n_rows, nb * width))
    psi = np.zeros((nb * width, nb * width))
    for j in range(nb):
        col = j * width
        q = np.array([math.cos(channels.phi[j, i]), math.sin(channels.phi[j, i])])
        t[0:2, col] = q / c
        if tdoa:
            t[2, col] = 1.0
        row = (3 if tdoa else 2) + 2 * nm * j
        t[row:row + 2 * nm, col + 1:col + width] = np.eye(2 * nm)
        psi[col, col] = sb * snr[j]
        psi[col + 1:col + width, col + 1:col + width] = gain_info * np.eye(2 * nm)

    j_full = t @ psi @ t.T
    if tdoa:
        j_full[2, 2] += k_b * sb  # prior on the clock offset, J_b = K_b * 8 pi^2 n_p beta^2
    a = j_full[:2, :2]
    b = j_full[:2, 2:]
    cmat = j_full[2:, 2:]
    if cmat.size:
        sign, logdet = np.linalg.slogdet(cmat)
        if sign <= 0 or not np.isfinite(logdet):
            raise OracleDegenerateError("nuisance block of the full FIM is singular")
        efm = a - b @ np.linalg.solve(cmat, b.T)
    else:
        efm = a
    return Efim(0.5 * (efm + efm.T), params.kappa)


def _rank1_streams(sigma: np.ndarray, tol: float = 1e-12) -> list[np.ndarray]:
    """Split a Hermitian PSD matrix into weighted rank-1 vectors w with
    Sigma = sum w w'; general covariances enter the OFDM oracle as one
    virtual transmit stream per eigencomponent."""
    sigma = np.asarray(sigma, dtype=complex)
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.conj().T))
    top = float(vals.max(initial=0.0))
    return [math.sqrt(float(v)) * vecs[:, k]
            for k, v in enumerate(vals) if v > tol * max(1.0, top)]


def oracle_full_fim_ofdm(cov_blocks, channels, params: SystemParams, ms_index: int) -> Efim:
    """Rebuild the OFDM EFIM from the per-(BS, block) Fisher blocks.

    Builds the delay/gain information blocks (J_tau, the cross vector, and
    the real-embedded Gram blocks), assembles the global A/B/C partition and
    Schur-complements to the 2x2 position block.
    """
    i = ms_index
    nb = channels.n_bs
    n, nc, L = params.n_subcarriers, params.n_blocks, channels.n_paths
    n0, ts, c = params.n0, params.t_sample, params.c

    blocks = []  # per (j, b): dict with j_tau, j_vec, j_alpha, q
    for j in range(nb):
        h = channels.h[j][i]  # M x L
        z = channels.zeta[j, i]
        q = np.array([math.cos(channels.phi[j, i]), math.sin(channels.phi[j, i])])
        for b in range(nc):
            f = path_fourier_matrix(n, nc, b, L)
            k = np.diag(subcarrier_indices(n, nc, b))
            fkf = f.conj().T @ k @ f
            fk2f = f.conj().T @ k @ k @ f
            gram = f.conj().T @ f
            gram_r = np.block([[gram.real, -gram.imag], [gram.imag, gram.real]])
            alphas = []
            for kk in range(channels.n_ms):
                for w in _rank1_streams(cov_blocks[j][kk][b]):
                    alphas.append(z * (h.conj().T @ w))
            j_tau = 4.0 * math.pi ** 2 / ts ** 2 * sum(float((a.conj() @ fk2f @ a).real) for a in alphas)
            vecs = []
            j_alpha_blocks = []
            for a in alphas:
                m = fkf @ a
                vecs.append(2.0 * math.pi / ts * np.concatenate([m.imag, -m.real]))
                j_alpha_blocks.append(gram_r)
            blocks.append({"j_tau": j_tau, "j_vec": vecs, "j_alpha": j_alpha_blocks, "q": q})

    a = np.zeros((2, 2))
    b_cols = []
    c_blocks = []
    for blk in blocks:
        a += 2.0 / (c ** 2 * n0) * blk["j_tau"] * np.outer(blk["q"], blk["q"])
        for v, g in zip(blk["j_vec"], blk["j_alpha"]):
            b_cols.append(2.0 / (c * n0) * np.outer(blk["q"], v))
            c_blocks.append(2.0 / n0 * g)
    if b_cols:
        b = np.hstack(b_cols)
        cmat = scipy.linalg.block_diag(*c_blocks)
        sign, logdet = np.linalg.slogdet(cmat)
        if sign <= 0 or not np.isfinite(logdet):
            raise OracleDegenerateError("gain block of the OFDM FIM is singular")
        efm = a - b @ np.linalg.solve(cmat, b.T)
    else:
        efm = a
    return Efim(0.5 * (efm + efm.T), params.kappa_ofdm)


def efim_to_json(efim: Efim) -> dict:
    """Debug dump used in test fixtures."""
    return {"matrix": np.asarray(efim.matrix).tolist(), "kappa": efim.kappa}
