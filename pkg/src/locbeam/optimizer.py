"""Power-minimizing beamformer design under rate and localization constraints.

Four solve entry points cover the design variants: joint MM iteration for
flat TOA, per-BS block-coordinate iteration for flat TDOA (plus the
linear-lower-bound variant usable at large clock priors), the robust
worst-case counterparts of both, and the OFDM per-block design.

Every subproblem is an exact cone program: rates keep their logarithms in
exponential cones (only the concave interference term is linearized at the
previous iterate), the CRB enters through a Schur-complement LMI on the
covariance-linear Fisher information, and each covariance is a Hermitian PSD
block.  Internally all powers are expressed in noise units and Fisher
matrices in kappa units so solver-facing numbers stay near one; reports are
converted back to watts and m^2.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import conic, fim, rate
from .conic import HermitianBlock, ProblemBuilder, build_schur_crb_block
from .scene import LocalizabilityError, Requirements, SystemParams, Topology

_LN2 = math.log(2.0)


class RankReductionError(RuntimeError):
    """Rescaling the rank-1 beamformers never reached feasibility.

    Carries the relaxed covariance solution so callers can fall back to it.
    """

    def __init__(self, msg, covariances=None):
        super().__init__(msg)
        self.covariances = covariances


@dataclass(frozen=True)
class CovarianceSet:
    """Hermitian PSD transmit covariances, one per (BS, MS) pair; in the OFDM
    mode each entry is a tuple with one matrix per subcarrier block."""

    mats: tuple
    blocked: bool = False

    def __getitem__(self, j):
        return self.mats[j]

    @property
    def n_bs(self):
        return len(self.mats)

    @property
    def n_ms(self):
        return len(self.mats[0])

    def leaves(self):
        for row in self.mats:
            for entry in row:
                if self.blocked:
                    yield from entry
                else:
                    yield entry

    def total_power(self) -> float:
        return float(sum(np.trace(m).real for m in self.leaves()))

    def scaled(self, factor: float) -> "CovarianceSet":
        if self.blocked:
            mats = tuple(tuple(tuple(factor * b for b in entry) for entry in row)
                         for row in self.mats)
        else:
            mats = tuple(tuple(factor * entry for entry in row) for row in self.mats)
        return CovarianceSet(mats, self.blocked)

    def frobenius_distance(self, other: "CovarianceSet") -> float:
        return float(sum(np.linalg.norm(a - b)
                         for a, b in zip(self.leaves(), other.leaves())))


@dataclass(frozen=True)
class BeamformerSet:
    """Beamforming vectors w_ji (or w_{ji,b} per block in the OFDM mode)."""

    vecs: tuple
    blocked: bool = False

    def __getitem__(self, j):
        return self.vecs[j]

    def leaves(self):
        for row in self.vecs:
            for entry in row:
                if self.blocked:
                    yield from entry
                else:
                    yield entry

    def total_power(self) -> float:
        return float(sum(np.vdot(w, w).real for w in self.leaves()))

    def scaled(self, factor: float) -> "BeamformerSet":
        if self.blocked:
            vecs = tuple(tuple(tuple(factor * b for b in entry) for entry in row)
                         for row in self.vecs)
        else:
            vecs = tuple(tuple(factor * entry for entry in row) for row in self.vecs)
        return BeamformerSet(vecs, self.blocked)

    def to_covariances(self) -> CovarianceSet:
        if self.blocked:
            mats = tuple(tuple(tuple(np.outer(w, w.conj()) for w in entry) for entry in row)
                         for row in self.vecs)
        else:
            mats = tuple(tuple(np.outer(entry, entry.conj()) for entry in row)
                         for row in self.vecs)
        return CovarianceSet(mats, self.blocked)


@dataclass(frozen=True)
class Scenario:
    """Everything one solve needs: geometry, channels, constraints, mode.

    mode is one of toa_flat | tdoa_flat | robust_toa | robust_tdoa | ofdm_toa.
    ``stats``/``uncertainty`` are required in the robust modes only.
    """

    mode: str
    topology: Topology
    params: SystemParams
    requirements: Requirements
    channels: object
    stats: object = None
    uncertainty: object = None

    @property
    def n_bs(self):
        return self.topology.n_bs

    @property
    def n_ms(self):
        return self.topology.n_ms


@dataclass(frozen=True)
class SolverOptions:
    conic_tol: float = 1e-7
    conic_max_iters: int = 50000
    delta_th: float = 1e-5
    max_outer: int = 50
    delta_inc: float = 0.05
    init_power: float | None = None  # None: isotropic at the problem's own power scale
    tdoa_method: str = "auto"  # auto | bound | block
    feas_tol: float = 1e-6
    rescale_cap: float = 1e6


@dataclass
class FeasibilityReport:
    """Per-MS normalized slacks: positive means strictly satisfied."""

    rate_slack: np.ndarray
    crb_slack: np.ndarray
    rates: np.ndarray
    crbs: np.ndarray
    tol: float

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.rate_slack >= -self.tol) and np.all(self.crb_slack >= -self.tol))


@dataclass
class SolveReport:
    status: str  # feasible | infeasible | max_iters
    beamformers: BeamformerSet | None
    covariances: CovarianceSet | None
    total_power: float
    per_ms_rate: np.ndarray | None
    per_ms_crb: np.ndarray | None
    objective_trace: list
    rescale_factor: float
    mode: str
    tdoa_method: str | None = None
    message: str = ""


# ---------------------------------------------------------------------------
# Scenario-level evaluation


def _true_rates(cov, scenario: Scenario) -> np.ndarray:
    s = scenario
    if s.mode in ("toa_flat", "tdoa_flat"):
        return rate.rate_flat(cov, s.channels, s.params).per_ms
    if s.mode in ("robust_toa", "robust_tdoa"):
        return rate.rate_robust(cov, s.stats, s.uncertainty, s.params).per_ms
    if s.mode == "ofdm_toa":
        return rate.rate_ofdm(cov, s.channels, s.params).per_ms
    raise ValueError(f"unknown mode {s.mode!r}")


def _true_crbs(cov, scenario: Scenario) -> np.ndarray:
    s = scenario
    out = np.zeros(s.n_ms)
    for i in range(s.n_ms):
        if s.mode == "toa_flat":
            j = fim.efim_toa_flat(cov, s.channels, s.params, i)
        elif s.mode == "tdoa_flat":
            j = fim.efim_tdoa_flat(cov, s.channels, s.params, i)
        elif s.mode == "robust_toa":
            j = fim.efim_robust(cov, s.stats, s.uncertainty, s.params, i, "toa")
        elif s.mode == "robust_tdoa":
            j = fim.efim_robust(cov, s.stats, s.uncertainty, s.params, i, "tdoa")
        elif s.mode == "ofdm_toa":
            j = fim.efim_toa_ofdm(cov, s.channels, s.params, i)
        else:
            raise ValueError(f"unknown mode {s.mode!r}")
        out[i] = fim.crb(j).value
    return out


def check_feasibility(solution, scenario: Scenario, tol: float = 1e-6) -> FeasibilityReport:
    """Evaluate the TRUE constraints (no surrogates, no frozen denominators).

    Accepts a BeamformerSet or a CovarianceSet.  Rate slack is normalized by
    max(R, 1), CRB slack by Q, so the common tolerance is meaningful for
    both.
    """
    cov = solution.to_covariances() if isinstance(solution, BeamformerSet) else solution
    s = scenario
    rates = _true_rates(cov, s)
    crbs = _true_crbs(cov, s)
    r_req = np.asarray(s.requirements.rate)
    q_req = np.asarray(s.requirements.q)
    rate_slack = (rates - r_req) / np.maximum(r_req, 1.0)
    with np.errstate(invalid="ignore"):
        crb_slack = np.where(np.isinf(q_req), np.inf,
                             (q_req - crbs) / q_req)
    crb_slack = np.where(np.isinf(crbs) & np.isfinite(q_req), -np.inf, crb_slack)
    return FeasibilityReport(rate_slack, crb_slack, rates, crbs, tol)


def rank_reduce(sigma: np.ndarray) -> np.ndarray:
    """Principal-eigenpair beamformer sqrt(lambda_max) v_max with a fixed
    phase convention (first significant entry real positive)."""
    sigma = np.asarray(sigma, dtype=complex)
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.conj().T))
    k = int(np.argmax(vals))
    lam = max(float(vals[k]), 0.0)
    v = vecs[:, k]
    nz = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max(initial=1.0))
    if nz.size:
        phase = v[nz[0]] / abs(v[nz[0]])
        v = v / phase
    return math.sqrt(lam) * v


def _extract_beamformers(cov: CovarianceSet) -> BeamformerSet:
    if cov.blocked:
        vecs = tuple(tuple(tuple(rank_reduce(b) for b in entry) for entry in row)
                     for row in cov.mats)
    else:
        vecs = tuple(tuple(rank_reduce(entry) for entry in row) for row in cov.mats)
    return BeamformerSet(vecs, cov.blocked)


def rescale_to_feasible(beams: BeamformerSet, scenario: Scenario,
                        delta_inc: float = 0.05, tol: float = 1e-6,
                        cap: float = 1e6, relaxed_cov: CovarianceSet | None = None):
    """Scale ALL beamformers up by (1 + delta_inc) until the true constraints
    hold; returns (beamformers, factor).

    Uniform scaling provably restores the localization constraints (every
    EFIM variant is matrix-nondecreasing in a common power scale) and the
    rate constraints in interference-free regimes; in interference-limited
    multi-MS regimes it may stall, which surfaces as RankReductionError with
    the relaxed covariance solution attached once the factor cap is hit.
    """
    factor = 1.0
    current = beams
    while True:
        if check_feasibility(current, scenario, tol).feasible:
            return current, factor
        factor *= (1.0 + delta_inc)
        if factor > cap:
            raise RankReductionError(
                "rank-1 rescaling hit the factor cap without reaching feasibility",
                covariances=relaxed_cov)
        current = beams.scaled(factor)


# ---------------------------------------------------------------------------
# Normalized problem data


class _Normalization:
    """Noise/power scaling shared by all builders.

    Covariances are expressed in units of p_scale watts; every gain matrix is
    premultiplied so that Re tr(G~ Sigma~) is the link SNR contribution, and
    the Fisher blocks carry kappa = 1.
    """

    def __init__(self, scenario: Scenario):
        s = scenario
        nb, nm = s.n_bs, s.n_ms
        self.scenario = s
        self.nb, self.nm = nb, nm
        params = s.params
        self.kappa = params.kappa_ofdm if s.mode == "ofdm_toa" else params.kappa
        robust = s.mode in ("robust_toa", "robust_tdoa")
        # physical rate-gain matrices: observing MS i at BS j
        if s.mode == "ofdm_toa":
            gains = [[s.channels.zeta[j, i] ** 2 for i in range(nm)] for j in range(nb)]
            traces = [gains[j][i] * np.linalg.norm(s.channels.h[j][i]) ** 2
                      for j in range(nb) for i in range(nm)]
        elif robust:
            gains = [[s.uncertainty.zeta_lo[j, i] ** 2 * s.stats.r[j][i] for i in range(nm)]
                     for j in range(nb)]
            traces = [float(np.trace(gains[j][i]).real) for j in range(nb) for i in range(nm)]
        else:
            gains = [[s.channels.zeta[j, i] ** 2 * np.outer(s.channels.h[j][i],
                                                            s.channels.h[j][i].conj())
                      for i in range(nm)] for j in range(nb)]
            traces = [float(np.trace(gains[j][i]).real) for j in range(nb) for i in range(nm)]
        self.p_scale = params.n0 / float(np.median(traces))
        self.snr_unit = self.p_scale / params.n0
        if s.mode != "ofdm_toa":
            # G~ such that xi~ = Re tr(G~ Sigma~) is in SNR units
            self.gain = [[gains[j][i] * self.snr_unit for i in range(nm)] for j in range(nb)]

    def q_norm(self, i: int) -> float:
        return float(self.scenario.requirements.q[i]) * self.kappa

    def cov_from_theta(self, blocks, x) -> list:
        return [[blocks[j][i].value(x) for i in range(self.nm)] for j in range(self.nb)]


def _as_phys(cov_norm, norm: _Normalization, blocked=False) -> CovarianceSet:
    if blocked:
        mats = tuple(tuple(tuple(norm.p_scale * b for b in entry) for entry in row)
                     for row in cov_norm)
    else:
        mats = tuple(tuple(norm.p_scale * m for m in row) for row in cov_norm)
    return CovarianceSet(mats, blocked)


def _init_cov_norm(scenario: Scenario, norm: _Normalization, init_power):
    """Isotropic start (init_power watts split over the antennas), normalized.

    The default (None) starts each pair at the identity on the problem's own
    power scale; a fixed wattage is accepted but badly mis-scaled starts make
    the first MM tangent needlessly conservative.
    """
    nb, nm = scenario.n_bs, scenario.n_ms
    out = []
    for j in range(nb):
        m = scenario.topology.bs_antennas[j]
        watts = norm.p_scale * m if init_power is None else init_power
        base = (watts / norm.p_scale / m) * np.eye(m, dtype=complex)
        if scenario.mode == "ofdm_toa":
            nc = scenario.params.n_blocks
            out.append([[base.copy() for _ in range(nc)] for _ in range(nm)])
        else:
            out.append([base.copy() for _ in range(nm)])
    return out


# ---------------------------------------------------------------------------
# Flat-mode joint subproblem (Algorithm-1 family: TOA, robust TOA, TDOA bound)


def _build_flat_joint(scenario: Scenario, norm: _Normalization, cov_old,
                      loc_correction=None, loc_directions=None):
    """One MM subproblem over all covariances.

    cov_old holds the expansion point in normalized units.  loc_directions
    overrides the per-(j, i) 2x2 direction matrices (robust surrogates);
    loc_correction[i] is a constant matrix subtracted from MS i's normalized
    Fisher block (the TDOA lower-bound variant).
    """
    s = scenario
    nb, nm = s.n_bs, s.n_ms
    params = s.params
    pf = params.duty / nb
    builder = ProblemBuilder()
    blocks = [[HermitianBlock(builder, s.topology.bs_antennas[j]) for _ in range(nm)]
              for j in range(nb)]
    for j in range(nb):
        for i in range(nm):
            builder.minimize(blocks[j][i].trace_coeffs())

    if loc_directions is None:
        loc_directions = [[fim.j_phi(s.channels.phi[j, i]) if s.mode in ("toa_flat", "tdoa_flat")
                           else fim.q_phi_toa(s.uncertainty.phi_hat[j, i], s.uncertainty.eps_phi[j, i])
                           for i in range(nm)] for j in range(nb)]

    m_blocks = {}
    for i in range(nm):
        if math.isinf(s.requirements.q[i]):
            continue
        terms = []
        for j in range(nb):
            # the same gain matrix G~_ji applies to every covariance of BS j
            for k in range(nm):
                for idx, val in blocks[j][k].gain_coeffs(norm.gain[j][i]).items():
                    terms.append((idx, val * loc_directions[j][i]))
        const = -loc_correction[i] if loc_correction is not None else np.zeros((2, 2))
        m_blocks[i] = build_schur_crb_block(builder, const, terms, norm.q_norm(i))

    t_vars = {}
    for i in range(nm):
        r_i = s.requirements.rate[i]
        if r_i <= 0.0:
            continue
        row = {}
        const_total = float(r_i)
        for j in range(nb):
            t = int(builder.add_vars(1)[0])
            t_vars[(j, i)] = t
            z_aff = {}
            for k in range(nm):
                for idx, val in blocks[j][k].gain_coeffs(norm.gain[j][i]).items():
                    z_aff[idx] = z_aff.get(idx, 0.0) + val
            builder.add_exp(({t: _LN2}, 0.0), ({}, 1.0), (z_aff, 1.0))
            row[t] = -pf
        for m in range(nb):
            if nm == 1:
                continue  # no interference term: tangent is the constant log2(1) = 0
            s_old = sum(float(np.trace(norm.gain[m][i] @ cov_old[m][k]).real)
                        for k in range(nm) if k != i)
            denom = _LN2 * (1.0 + s_old)
            const_total += pf * (math.log2(1.0 + s_old) - s_old / denom)
            for k in range(nm):
                if k == i:
                    continue
                for idx, val in blocks[m][k].gain_coeffs(norm.gain[m][i]).items():
                    row[idx] = row.get(idx, 0.0) + pf * val / denom
        builder.add_ineq(row, -const_total)

    problem = builder.build()
    return problem, blocks, m_blocks, t_vars


def _tdoa_bound_corrections(scenario: Scenario, norm: _Normalization) -> list:
    """Constant normalized matrices subtracted from the TOA Fisher block in
    the TDOA lower-bound variant (requires K_b > 0)."""
    s = scenario
    out = []
    for i in range(s.n_ms):
        k_b = s.params.k_b_of(i)
        g = np.zeros(2)
        for j in range(s.n_bs):
            h = s.channels.h[j][i]
            smax = s.channels.zeta[j, i] ** 2 * float(np.vdot(h, h).real) / s.params.n0
            g += smax * np.array([math.cos(s.channels.phi[j, i]),
                                  math.sin(s.channels.phi[j, i])])
        out.append(s.n_ms ** 2 / k_b * np.outer(g, g))
    return out


# ---------------------------------------------------------------------------
# MM driver


def _solve_subproblem(problem, opts: SolverOptions, warm, first: bool,
                      accept_above_tol: float = None):
    sol = conic.solve(problem, tol=opts.conic_tol, max_iters=opts.conic_max_iters,
                      warm_start=warm)
    if sol.status == "optimal":
        return sol, None
    if sol.status in ("infeasible", "unbounded"):
        if first:
            return sol, "infeasible"
        # MM theory makes later subproblems feasible; treat as numerical and
        # retry once at a relaxed tolerance
        sol2 = conic.solve(problem, tol=opts.conic_tol * 10, max_iters=opts.conic_max_iters,
                           warm_start=warm)
        if sol2.status == "optimal":
            return sol2, None
        return sol2, "numerical"
    limit = accept_above_tol if accept_above_tol is not None else 1e3 * opts.conic_tol
    if sol.status == "max_iters" and np.all(np.isfinite(sol.x)) \
            and max(sol.residuals.values()) < limit:
        return sol, None  # near-converged iterate is still a usable step
    return sol, "numerical"


def _mm_flat(scenario: Scenario, opts: SolverOptions, loc_correction=None):
    """Algorithm-1 style joint MM loop; returns (cov_norm, trace, status, norm)."""
    norm = _Normalization(scenario)
    cov = _init_cov_norm(scenario, norm, opts.init_power)
    has_rate = any(r > 0 for r in scenario.requirements.rate) and scenario.n_ms > 1
    trace = []
    warm = None
    status = "feasible"
    for it in range(opts.max_outer):
        problem, blocks, _, _ = _build_flat_joint(scenario, norm, cov,
                                                  loc_correction=loc_correction)
        sol, err = _solve_subproblem(problem, opts, warm, first=(it == 0))
        if err == "infeasible":
            return None, trace, "infeasible", norm
        if err == "numerical":
            status = "max_iters" if not trace else "feasible"
            break
        warm = (sol.x, sol.y, sol.s)
        new_cov = norm.cov_from_theta(blocks, sol.x)
        obj = sum(float(np.trace(new_cov[j][i]).real)
                  for j in range(scenario.n_bs) for i in range(scenario.n_ms))
        trace.append(obj * norm.p_scale)
        delta = sum(np.linalg.norm(np.asarray(new_cov[j][i]) - np.asarray(cov[j][i]))
                    for j in range(scenario.n_bs) for i in range(scenario.n_ms))
        cov = new_cov
        if not has_rate:
            break  # no linearized term: the subproblem was already exact
        if delta * norm.p_scale < opts.delta_th:  # summed Frobenius change, watts
            break
    else:
        status = "max_iters"
    return cov, trace, status, norm


# ---------------------------------------------------------------------------
# Flat TDOA block-coordinate subproblem (Algorithm-2 family)


def _matched_feasible_init(scenario: Scenario, norm: _Normalization, cap_doublings: int = 60):
    """Feasible start for the block-coordinate sweeps.

    Beams each pair toward its own principal gain direction projected off the
    co-served MSs' directions (zero-forcing; matched beams alone saturate at
    an interference-limited rate), then doubles a common power factor until
    the true constraints hold.  Block sweeps then descend from a feasible
    point, which keeps every per-BS subproblem feasible.
    """
    nb, nm = scenario.n_bs, scenario.n_ms
    dirs = []
    for j in range(nb):
        row = []
        for i in range(nm):
            g = norm.gain[j][i]
            vals, vecs = np.linalg.eigh(0.5 * (g + g.conj().T))
            row.append(vecs[:, int(np.argmax(vals))])
        dirs.append(row)
    base = []
    for j in range(nb):
        m = scenario.topology.bs_antennas[j]
        row = []
        for i in range(nm):
            u = dirs[j][i]
            others = [dirs[j][k] for k in range(nm) if k != i]
            if others:
                span = np.stack(others, axis=1)
                q, _ = np.linalg.qr(span)
                w = u - q @ (q.conj().T @ u)
                if np.linalg.norm(w) < 1e-8:
                    w = u  # co-linear channels: fall back to the matched beam
            else:
                w = u
            w = w / np.linalg.norm(w)
            row.append(m * np.outer(w, w.conj()))
        base.append(row)
    gamma = 1.0
    for _ in range(cap_doublings):
        cov = [[gamma * base[j][i] for i in range(nm)] for j in range(nb)]
        if check_feasibility(_as_phys(cov, norm), scenario).feasible:
            return cov, True
        gamma *= 2.0
    return [[gamma * base[j][i] for i in range(nm)] for j in range(nb)], False


def _build_tdoa_block(scenario: Scenario, norm: _Normalization, j_up: int,
                      cov_mixed, cov_denominator, robust: bool):
    """Cone program over BS j_up's covariances with every other BS frozen.

    cov_mixed holds already-updated blocks for BSs before j_up in this sweep
    and previous-iterate blocks after it; cov_denominator is the full
    previous iterate used to freeze the TDOA normalization.
    """
    s = scenario
    nb, nm = s.n_bs, s.n_ms
    params = s.params
    pf = params.duty / nb
    builder = ProblemBuilder()
    blocks = [HermitianBlock(builder, s.topology.bs_antennas[j_up]) for _ in range(nm)]
    for i in range(nm):
        builder.minimize(blocks[i].trace_coeffs())

    if robust:
        dir_single = [[fim.q_phi_toa(s.uncertainty.phi_hat[m, i], s.uncertainty.eps_phi[m, i])
                       for i in range(nm)] for m in range(nb)]

        def dir_pair(l, t, i):
            return fim.q_phi_tdoa(s.uncertainty.phi_hat[l, i], s.uncertainty.phi_hat[t, i],
                                  s.uncertainty.eps_phi[l, i], s.uncertainty.eps_phi[t, i])
    else:
        dir_single = [[fim.j_phi(s.channels.phi[m, i]) for i in range(nm)] for m in range(nb)]

        def dir_pair(l, t, i):
            return fim.j_phi_pair(s.channels.phi[l, i], s.channels.phi[t, i])

    def gain_value(m, i, sigma):
        return float(np.trace(norm.gain[m][i] @ np.asarray(sigma)).real)

    for i in range(nm):
        if math.isinf(s.requirements.q[i]):
            continue
        k_b = params.k_b_of(i)
        denom = sum(gain_value(p, i, cov_denominator[p][q]) for p in range(nb)
                    for q in range(nm)) + k_b
        if denom <= 0.0:
            raise fim.DegenerateInputError("TDOA block update undefined: zero SNR and no prior")
        s_frozen = [sum(gain_value(m, i, cov_mixed[m][k]) for k in range(nm))
                    for m in range(nb)]
        const = np.zeros((2, 2))
        for m in range(nb):
            if m != j_up:
                const += k_b * s_frozen[m] * dir_single[m][i]
        for l in range(nb):
            for t in range(l + 1, nb):
                if j_up not in (l, t):
                    const += s_frozen[l] * s_frozen[t] * dir_pair(l, t, i)
        # variable coefficient matrix shared by every parameter of BS j_up
        coef_dir = k_b * dir_single[j_up][i]
        for t in range(nb):
            if t != j_up:
                coef_dir = coef_dir + s_frozen[t] * dir_pair(min(j_up, t), max(j_up, t), i)
        terms = []
        for k in range(nm):
            for idx, val in blocks[k].gain_coeffs(norm.gain[j_up][i]).items():
                terms.append((idx, val * coef_dir / denom))
        build_schur_crb_block(builder, const / denom, terms, norm.q_norm(i))

    for i in range(nm):
        r_i = s.requirements.rate[i]
        if r_i <= 0.0:
            continue
        row = {}
        const_total = float(r_i)
        # BS j_up's log stays exact through an exp cone; other BSs are frozen
        t = int(builder.add_vars(1)[0])
        z_aff = {}
        for k in range(nm):
            for idx, val in blocks[k].gain_coeffs(norm.gain[j_up][i]).items():
                z_aff[idx] = z_aff.get(idx, 0.0) + val
        builder.add_exp(({t: _LN2}, 0.0), ({}, 1.0), (z_aff, 1.0))
        row[t] = -pf
        for m in range(nb):
            if m != j_up:
                s_all = sum(gain_value(m, i, cov_mixed[m][k]) for k in range(nm))
                const_total -= pf * math.log2(1.0 + s_all)
        if nm > 1:
            for p in range(nb):
                s_old = sum(gain_value(p, i, cov_denominator[p][k])
                            for k in range(nm) if k != i)
                denom_t = _LN2 * (1.0 + s_old)
                const_total += pf * (math.log2(1.0 + s_old) - s_old / denom_t)
                if p == j_up:
                    for k in range(nm):
                        if k == i:
                            continue
                        for idx, val in blocks[k].gain_coeffs(norm.gain[p][i]).items():
                            row[idx] = row.get(idx, 0.0) + pf * val / denom_t
                else:
                    s_mix = sum(gain_value(p, i, cov_mixed[p][k])
                                for k in range(nm) if k != i)
                    const_total += pf * (s_mix - s_old) / denom_t
        builder.add_ineq(row, -const_total)

    return builder.build(), blocks


def _block_coordinate_tdoa(scenario: Scenario, opts: SolverOptions, robust: bool):
    """Algorithm-2 style sweep: update each BS's covariances in turn against
    the frozen TDOA denominator, then validate against the true EFIM."""
    norm = _Normalization(scenario)
    if opts.init_power is None:
        cov, init_ok = _matched_feasible_init(scenario, norm)
        if not init_ok:
            return None, [], "infeasible", norm
    else:
        cov = _init_cov_norm(scenario, norm, opts.init_power)
    trace = []
    prev_obj = None
    status = "max_iters"
    stagnant = 0
    for outer in range(opts.max_outer):
        cov_start = [[np.asarray(cov[j][i]).copy() for i in range(scenario.n_ms)]
                     for j in range(scenario.n_bs)]
        sweep_delta = 0.0
        block_opts = replace(opts, conic_max_iters=min(opts.conic_max_iters, 8000))
        updated_any = False
        for j in range(scenario.n_bs):
            problem, blocks = _build_tdoa_block(scenario, norm, j, cov, cov_start, robust)
            sol, err = _solve_subproblem(problem, block_opts, None,
                                         first=(outer == 0 and j == 0),
                                         accept_above_tol=1e-3)
            if err == "infeasible":
                return None, trace, "infeasible", norm
            if err == "numerical":
                continue  # keep this BS's previous covariances, a valid point
            updated_any = True
            for i in range(scenario.n_ms):
                new = blocks[i].value(sol.x)
                sweep_delta += float(np.linalg.norm(new - cov[j][i]))
                cov[j][i] = new
        if not updated_any:
            return cov, trace, "max_iters", norm
        obj = sum(float(np.trace(cov[j][i]).real)
                  for j in range(scenario.n_bs) for i in range(scenario.n_ms))
        trace.append(obj * norm.p_scale)
        feas = check_feasibility(_as_phys(cov, norm), scenario, opts.feas_tol)
        converged = sweep_delta * norm.p_scale < opts.delta_th
        small_change = prev_obj is not None and abs(obj - prev_obj) < 1e-5 * abs(prev_obj)
        # stalled block solves leave ~1e-3-level noise on the objective;
        # treat changes at that level as a flatline
        flat = prev_obj is not None and abs(obj - prev_obj) < 1e-3 * abs(prev_obj)
        stagnant = stagnant + 1 if flat else 0
        prev_obj = obj
        if feas.feasible and (converged or small_change):
            status = "feasible"
            break
        if stagnant >= 3:
            # sweeps have flatlined just outside tolerance; the final
            # validation rescale absorbs the residual violation
            break
    return cov, trace, status, norm


# ---------------------------------------------------------------------------
# OFDM joint subproblem (Algorithm-3 family)


def _build_ofdm_joint(scenario: Scenario, norm: _Normalization, cov_old):
    s = scenario
    nb, nm = s.n_bs, s.n_ms
    params = s.params
    nc = params.n_blocks
    per = params.n_subcarriers // nc
    pf = params.t_data / (nb * (params.t_data + 1.0))
    builder = ProblemBuilder()
    blocks = [[[HermitianBlock(builder, s.topology.bs_antennas[j]) for _ in range(nc)]
               for _ in range(nm)] for j in range(nb)]
    for j in range(nb):
        for i in range(nm):
            for b in range(nc):
                builder.minimize(blocks[j][i][b].trace_coeffs())

    # per-subcarrier rate gain matrices and per-block localization kernels
    sub_gain = {}
    for j in range(nb):
        for i in range(nm):
            z2 = s.channels.zeta[j, i] ** 2 * norm.snr_unit
            for b in range(nc):
                f = rate.subcarrier_channel(s.channels, j, i, b, params)
                for n in range(per):
                    sub_gain[(j, i, b, n)] = z2 * np.outer(f[n], f[n].conj())
    kernels = [fim.delay_kernel(params.n_subcarriers, nc, b, s.channels.n_paths)
               for b in range(nc)]
    loc_gain = {}
    for j in range(nb):
        for i in range(nm):
            h = s.channels.h[j][i]
            z2 = s.channels.zeta[j, i] ** 2 * norm.snr_unit
            for b in range(nc):
                g = z2 * (h @ kernels[b] @ h.conj().T)
                loc_gain[(j, i, b)] = 0.5 * (g + g.conj().T)

    for i in range(nm):
        if math.isinf(s.requirements.q[i]):
            continue
        terms = []
        for j in range(nb):
            direction = fim.j_phi(s.channels.phi[j, i])
            for b in range(nc):
                for k in range(nm):
                    for idx, val in blocks[j][k][b].gain_coeffs(loc_gain[(j, i, b)]).items():
                        terms.append((idx, val * direction))
        build_schur_crb_block(builder, np.zeros((2, 2)), terms, norm.q_norm(i))

    for i in range(nm):
        r_i = s.requirements.rate[i]
        if r_i <= 0.0:
            continue
        row = {}
        const_total = float(r_i)
        for j in range(nb):
            for b in range(nc):
                for n in range(per):
                    t = int(builder.add_vars(1)[0])
                    z_aff = {}
                    for k in range(nm):
                        for idx, val in blocks[j][k][b].gain_coeffs(sub_gain[(j, i, b, n)]).items():
                            z_aff[idx] = z_aff.get(idx, 0.0) + val
                    builder.add_exp(({t: _LN2}, 0.0), ({}, 1.0), (z_aff, 1.0))
                    row[t] = -pf
        if nm > 1:
            for p in range(nb):
                for b in range(nc):
                    for n in range(per):
                        s_old = sum(float(np.trace(sub_gain[(p, i, b, n)]
                                                   @ cov_old[p][k][b]).real)
                                    for k in range(nm) if k != i)
                        denom = _LN2 * (1.0 + s_old)
                        const_total += pf * (math.log2(1.0 + s_old) - s_old / denom)
                        for k in range(nm):
                            if k == i:
                                continue
                            for idx, val in blocks[p][k][b].gain_coeffs(sub_gain[(p, i, b, n)]).items():
                                row[idx] = row.get(idx, 0.0) + pf * val / denom
        builder.add_ineq(row, -const_total)

    return builder.build(), blocks


def _mm_ofdm(scenario: Scenario, opts: SolverOptions):
    norm = _Normalization(scenario)
    cov = _init_cov_norm(scenario, norm, opts.init_power)
    has_rate = any(r > 0 for r in scenario.requirements.rate) and scenario.n_ms > 1
    trace = []
    warm = None
    status = "feasible"
    nb, nm, nc = scenario.n_bs, scenario.n_ms, scenario.params.n_blocks
    for it in range(opts.max_outer):
        problem, blocks = _build_ofdm_joint(scenario, norm, cov)
        sol, err = _solve_subproblem(problem, opts, warm, first=(it == 0))
        if err == "infeasible":
            return None, trace, "infeasible", norm
        if err == "numerical":
            status = "max_iters" if not trace else "feasible"
            break
        warm = (sol.x, sol.y, sol.s)
        new_cov = [[[blocks[j][i][b].value(sol.x) for b in range(nc)]
                    for i in range(nm)] for j in range(nb)]
        obj = sum(float(np.trace(new_cov[j][i][b]).real)
                  for j in range(nb) for i in range(nm) for b in range(nc))
        trace.append(obj * norm.p_scale)
        delta = sum(np.linalg.norm(np.asarray(new_cov[j][i][b]) - np.asarray(cov[j][i][b]))
                    for j in range(nb) for i in range(nm) for b in range(nc))
        cov = new_cov
        if not has_rate:
            break
        if delta * norm.p_scale < opts.delta_th:
            break
    else:
        status = "max_iters"
    return cov, trace, status, norm


# ---------------------------------------------------------------------------
# Entry points


def _finalize(cov_norm, norm, scenario, opts, trace, status, tdoa_method=None):
    """Rank-reduce the relaxed solution, rescale to feasibility, and report
    true per-MS rates/CRBs."""
    if cov_norm is None:
        return SolveReport("infeasible", None, None, math.inf, None, None,
                           trace, math.nan, scenario.mode, tdoa_method,
                           message="first subproblem infeasible")
    blocked = scenario.mode == "ofdm_toa"
    cov_phys = _as_phys(cov_norm, norm, blocked)
    beams = _extract_beamformers(cov_phys)
    beams, factor = rescale_to_feasible(beams, scenario, opts.delta_inc,
                                        opts.feas_tol, opts.rescale_cap,
                                        relaxed_cov=cov_phys)
    final_cov = beams.to_covariances()
    feas = check_feasibility(final_cov, scenario, opts.feas_tol)
    if feas.feasible:
        status = "feasible"  # the delivered solution is what the label certifies
    return SolveReport(status, beams, final_cov, beams.total_power(),
                       feas.rates, feas.crbs, trace, factor, scenario.mode,
                       tdoa_method)


def solve_toa_flat(scenario: Scenario, opts: SolverOptions = SolverOptions()) -> SolveReport:
    """Joint MM design for flat channels with TOA localization."""
    if scenario.n_bs < 3:
        raise LocalizabilityError("TOA design assumes at least 3 BSs")
    cov, trace, status, norm = _mm_flat(scenario, opts)
    return _finalize(cov, norm, scenario, opts, trace, status)


def solve_robust(scenario: Scenario, opts: SolverOptions = SolverOptions()) -> SolveReport:
    """Worst-case design over bounded distance/angle boxes with statistical CSI."""
    if scenario.stats is None or scenario.uncertainty is None:
        raise ValueError("robust modes need channel statistics and an uncertainty model")
    if scenario.mode == "robust_toa":
        cov, trace, status, norm = _mm_flat(scenario, opts)
        return _finalize(cov, norm, scenario, opts, trace, status)
    if scenario.mode == "robust_tdoa":
        cov, trace, status, norm = _block_coordinate_tdoa(scenario, opts, robust=True)
        rep = _finalize_tdoa(cov, norm, scenario, opts, trace, status, method="block")
        if rep.status == "infeasible":
            rep.message += " (check the dominated-surrogate PSD hypothesis)"
        return rep
    raise ValueError(f"solve_robust expects a robust mode, got {scenario.mode!r}")


def _finalize_tdoa(cov_norm, norm, scenario, opts, trace, status, method):
    """TDOA variants validate the final iterate against the true EFIM and may
    rescale the covariances before rank reduction."""
    if cov_norm is None:
        return SolveReport("infeasible", None, None, math.inf, None, None,
                           trace, math.nan, scenario.mode, method,
                           message="first subproblem infeasible")
    blocked = False
    cov_phys = _as_phys(cov_norm, norm, blocked)
    factor_cov = 1.0
    while not check_feasibility(cov_phys, scenario, opts.feas_tol).feasible:
        factor_cov *= (1.0 + opts.delta_inc)
        if factor_cov > opts.rescale_cap:
            return SolveReport("max_iters", None, cov_phys, cov_phys.total_power(),
                               None, None, trace, math.nan, scenario.mode, method,
                               message="true-EFIM validation failed to rescale")
        cov_phys = cov_phys.scaled(1.0 + opts.delta_inc)
    beams = _extract_beamformers(cov_phys)
    beams, factor = rescale_to_feasible(beams, scenario, opts.delta_inc,
                                        opts.feas_tol, opts.rescale_cap,
                                        relaxed_cov=cov_phys)
    final_cov = beams.to_covariances()
    feas = check_feasibility(final_cov, scenario, opts.feas_tol)
    if feas.feasible:
        status = "feasible"
    return SolveReport(status, beams, final_cov, beams.total_power(),
                       feas.rates, feas.crbs, trace,
                       factor * math.sqrt(factor_cov), scenario.mode, method)


def _bound_variant_applicable(scenario: Scenario) -> bool:
    """The linear lower bound is tight only when the clock prior dominates
    the largest possible total SNR."""
    s = scenario
    worst = 0.0
    for i in range(s.n_ms):
        for j in range(s.n_bs):
            h = s.channels.h[j][i]
            worst = max(worst, s.channels.zeta[j, i] ** 2 * float(np.vdot(h, h).real) / s.params.n0)
    k_b_min = min(s.params.k_b_of(i) for i in range(s.n_ms))
    return k_b_min >= 10.0 * s.n_bs * s.n_ms * worst


def solve_tdoa_flat(scenario: Scenario, opts: SolverOptions = SolverOptions()) -> SolveReport:
    """Flat-channel TDOA design.

    Runs the block-coordinate method and, when the clock prior is large
    enough for the linear lower bound to be tight (or when forced via
    options), the bound variant of the joint MM design; returns the
    lower-power feasible result.
    """
    candidates = []
    method = opts.tdoa_method
    run_bound = method == "bound" or (method == "auto" and _bound_variant_applicable(scenario))
    run_block = method == "block" or method == "auto"
    if run_bound:
        try:
            corr = _tdoa_bound_corrections(scenario, _Normalization(scenario))
            cov, trace, status, norm = _mm_flat(scenario, opts, loc_correction=corr)
            rep = _finalize_tdoa(cov, norm, scenario, opts, trace, status, method="bound")
            if rep.status == "feasible":
                candidates.append(rep)
        except (ZeroDivisionError, RankReductionError):
            pass
    if run_block:
        cov, trace, status, norm = _block_coordinate_tdoa(scenario, opts, robust=False)
        rep = _finalize_tdoa(cov, norm, scenario, opts, trace, status, method="block")
        candidates.append(rep)
    feasible = [r for r in candidates if r.status == "feasible"]
    if feasible:
        return min(feasible, key=lambda r: r.total_power)
    return candidates[-1] if candidates else SolveReport(
        "infeasible", None, None, math.inf, None, None, [], math.nan,
        scenario.mode, method, message="no TDOA method produced a solution")


def solve_ofdm(scenario: Scenario, opts: SolverOptions = SolverOptions()) -> SolveReport:
    """Per-block OFDM design with TOA localization (subcarrier grouping)."""
    params = scenario.params
    per = params.n_subcarriers // params.n_blocks
    if any(math.isfinite(q) for q in scenario.requirements.q) and per <= params.n_paths:
        raise LocalizabilityError(
            f"{per} subcarriers per block cannot resolve {params.n_paths} paths; "
            "localization needs N/N_C > L")
    cov, trace, status, norm = _mm_ofdm(scenario, opts)
    return _finalize(cov, norm, scenario, opts, trace, status)


def solve_scenario(scenario: Scenario, opts: SolverOptions = SolverOptions()) -> SolveReport:
    """Dispatch on scenario.mode."""
    if scenario.mode == "toa_flat":
        return solve_toa_flat(scenario, opts)
    if scenario.mode == "tdoa_flat":
        return solve_tdoa_flat(scenario, opts)
    if scenario.mode in ("robust_toa", "robust_tdoa"):
        return solve_robust(scenario, opts)
    if scenario.mode == "ofdm_toa":
        return solve_ofdm(scenario, opts)
    raise ValueError(f"unknown mode {scenario.mode!r}")
