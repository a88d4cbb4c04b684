"""A small dense cone-program solver plus the builders that assemble LMIs.

Standard form:  minimize c'x  subject to  Ax + s = b,  s in K,
where K is an ordered product of zero, nonnegative, PSD (real symmetric,
svec-vectorized with sqrt(2)-scaled off-diagonals) and 3-dimensional
exponential cones.

The solver runs operator splitting (ADMM) on the homogeneous self-dual
embedding, so it returns either a solution meeting relative primal/dual/gap
tolerances or an infeasibility/unboundedness certificate.  Everything is
dense and deterministic; problem sizes here never exceed a few thousand rows.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is an optional speedup
    _njit = None

_SQRT2 = math.sqrt(2.0)


class NumericalError(RuntimeError):
    """An internal numerical step (eigensolver, root-find) failed."""


# ---------------------------------------------------------------------------
# Symmetric vectorization


def _tri_indices(n: int):
    rows, cols, scale = [], [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
            scale.append(1.0 if i == j else _SQRT2)
    return np.array(rows), np.array(cols), np.array(scale)


_TRI_CACHE: dict = {}


def _tri(n: int):
    if n not in _TRI_CACHE:
        _TRI_CACHE[n] = _tri_indices(n)
    return _TRI_CACHE[n]


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def svec(mat: np.ndarray) -> np.ndarray:
    """Isometric vectorization of a symmetric matrix (Frobenius -> Euclidean)."""
    n = mat.shape[0]
    rows, cols, scale = _tri(n)
    return np.asarray(mat)[rows, cols] * scale


def smat(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`svec`."""
    vec = np.asarray(vec, dtype=float)
    n = int((math.isqrt(8 * vec.size + 1) - 1) // 2)
    rows, cols, scale = _tri(n)
    out = np.zeros((n, n))
    vals = vec / scale
    out[rows, cols] = vals
    out[cols, rows] = vals
    return out


# ---------------------------------------------------------------------------
# Cones


@dataclass(frozen=True)
class ConeSpec:
    """Ordered cone layout of the slack vector: zero, nonneg, PSD sides, exp count."""

    zero: int = 0
    nonneg: int = 0
    psd: tuple[int, ...] = ()
    exp: int = 0

    @property
    def dim(self) -> int:
        return self.zero + self.nonneg + sum(svec_dim(n) for n in self.psd) + 3 * self.exp

    def blocks(self):
        """Yield (kind, offset, length, side) descriptors in layout order."""
        off = 0
        if self.zero:
            yield ("zero", off, self.zero, None)
            off += self.zero
        if self.nonneg:
            yield ("nonneg", off, self.nonneg, None)
            off += self.nonneg
        for n in self.psd:
            yield ("psd", off, svec_dim(n), n)
            off += svec_dim(n)
        if self.exp:
            yield ("exp", off, 3 * self.exp, None)
            off += 3 * self.exp


@dataclass(frozen=True)
class ConicProblem:
    c: np.ndarray
    a: np.ndarray
    b: np.ndarray
    cones: ConeSpec

    def __post_init__(self):
        m, n = self.a.shape
        if self.c.shape != (n,) or self.b.shape != (m,):
            raise ValueError("inconsistent problem dimensions")
        if self.cones.dim != m:
            raise ValueError(f"cone dimension {self.cones.dim} does not match {m} rows")


@dataclass
class ConicSolution:
    status: str  # optimal | infeasible | unbounded | max_iters
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    residuals: dict
    iterations: int


# ---------------------------------------------------------------------------
# Projections


def psd_project_matrix(mat: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) PSD matrix: clamp negative eigenvalues to zero."""
    try:
        vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh rarely fails
        raise NumericalError("eigendecomposition failed in PSD projection") from exc
    vals = np.maximum(vals, 0.0)
    return (vecs * vals) @ vecs.T


def project_psd(vec: np.ndarray) -> np.ndarray:
    """Euclidean projection of an svec'd symmetric matrix onto the PSD cone."""
    return svec(psd_project_matrix(smat(vec)))


def _psd_project_batch(stack: np.ndarray) -> np.ndarray:
    """Batched eigenvalue clamp for a (k, n, n) stack of symmetric matrices."""
    sym = 0.5 * (stack + np.swapaxes(stack, 1, 2))
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, 0.0)
    return np.einsum("kij,kj,klj->kil", vecs, vals, vecs)


def _exp_residual(rho, r, s, t):
    # h(rho) = ((rho-1) r + s) e^rho - (r - rho s) e^{-rho} - (rho^2 - rho + 1) t
    # callers keep |rho| <= 690 so the exponentials stay finite
    e = np.exp(rho)
    return ((rho - 1.0) * r + s) * e - (r - rho * s) / e - (rho * (rho - 1.0) + 1.0) * t


def project_exp_many(v: np.ndarray) -> np.ndarray:
    """Rowwise Euclidean projection of (k, 3) points onto the exponential cone
    cl{(x, y, z): y > 0, y e^{x/y} <= z}.

    Trivial cases (already in the cone, in the polar cone, or on the y<=0
    face) are handled directly; the remaining rows reduce to a bracketed
    scalar root-find in rho = x/y, solved by bisection.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    norms = np.linalg.norm(v, axis=1)
    unit = np.where(norms > 0.0, norms, 1.0)
    w = v / unit[:, None]  # the cone is scale-invariant; work on unit vectors
    r, s, t = w[:, 0], w[:, 1], w[:, 2]
    out = np.zeros_like(w)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        in_cone = ((s > 0) & (t > 0) & (np.log(np.where(t > 0, t, 1.0))
                                        - np.log(np.where(s > 0, s, 1.0)) >= r / np.where(s > 0, s, 1.0))) | \
                  ((s == 0) & (r <= 0) & (t >= 0))
        # polar cone: r > 0, t < 0, r e^{s/r} <= -e t  (log form), plus its r = 0 face
        in_polar = ((r > 0) & (t < 0) & (np.log(np.where(r > 0, r, 1.0)) + s / np.where(r > 0, r, 1.0)
                                         <= 1.0 + np.log(np.where(t < 0, -t, 1.0)))) | \
                   ((r == 0) & (s <= 0) & (t <= 0))
    face = (r <= 0) & (s <= 0) & ~in_cone & ~in_polar

    out[in_cone] = w[in_cone]
    # in_polar rows stay zero
    if np.any(face):
        out[face, 0] = r[face]
        out[face, 2] = np.maximum(t[face], 0.0)

    hard = ~(in_cone | in_polar | face)
    if np.any(hard):
        rr, ss, tt = r[hard], s[hard], t[hard]
        # Normalized inputs keep every residual term finite up to |rho| ~ 690.
        big = 690.0
        lo = np.full(rr.shape, -big)
        hi = np.full(rr.shape, big)
        # feasible interval from y(rho) > 0 and mu(rho) > 0
        pos_r = rr > 0
        neg_r = rr < 0
        lo[pos_r] = np.maximum(lo[pos_r], 1.0 - ss[pos_r] / rr[pos_r])
        hi[neg_r] = np.minimum(hi[neg_r], 1.0 - ss[neg_r] / rr[neg_r])
        pos_s = ss > 0
        neg_s = ss < 0
        hi[pos_s] = np.minimum(hi[pos_s], rr[pos_s] / ss[pos_s])
        lo[neg_s] = np.maximum(lo[neg_s], rr[neg_s] / ss[neg_s])
        lo = np.clip(lo, -big, big)
        hi = np.clip(hi, lo, big)
        # Brackets pushed past the representable range mean the projection is
        # (to double precision) a limit point on a face of the cone.
        beyond_hi = lo >= big  # root at rho -> +inf: y -> 0 face
        beyond_lo = hi <= -big  # root at rho -> -inf: z -> 0 face
        sign_lo = np.sign(_exp_residual(lo, rr, ss, tt))
        sign_hi = np.sign(_exp_residual(hi, rr, ss, tt))
        # No sign change (numerical edge): collapse toward the root side.
        same = sign_lo == sign_hi
        hi = np.where(same & (sign_lo > 0), lo, hi)
        lo = np.where(same & (sign_lo <= 0), hi, lo)
        # Bisection: ~60 halvings of a <=1380-wide bracket reach 1e-15
        # absolute, past double resolution at any root scale that matters.
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            hm = _exp_residual(mid, rr, ss, tt)
            take_lo = np.sign(hm) == sign_lo
            lo = np.where(take_lo, mid, lo)
            hi = np.where(take_lo, hi, mid)
        rho = 0.5 * (lo + hi)
        dd = rho * (rho - 1.0) + 1.0
        y = np.maximum((ss + (rho - 1.0) * rr) / dd, 0.0)
        # Two equivalent expressions for z; each is the numerically stable one
        # on its own side (z = y e^rho degrades in the y -> 0 layer at large
        # positive rho, z = t + mu in the mu -> 0 layer at large negative rho).
        with np.errstate(over="ignore", invalid="ignore"):
            erho = np.exp(np.clip(rho, -700.0, 700.0))
            z_grow = y * erho
            mu = np.maximum((rr - rho * ss) / erho, 0.0) / dd
        z_grow = np.where(y == 0.0, 0.0, z_grow)
        z = np.where(rho > 0, np.maximum(tt + mu, 0.0), z_grow)
        out_h = np.stack([rho * y, y, z], axis=1)
        out_h[beyond_hi] = np.stack([np.zeros(beyond_hi.sum()),
                                     np.zeros(beyond_hi.sum()),
                                     np.maximum(tt[beyond_hi], 0.0)], axis=1)
        out_h[beyond_lo] = np.stack([np.minimum(rr[beyond_lo], 0.0),
                                     np.maximum(ss[beyond_lo], 0.0),
                                     np.zeros(beyond_lo.sum())], axis=1)
        out[hard] = out_h

    return out * unit[:, None]


def _exp_proj_loop(v, out):  # compiled below when numba is available
    for k in range(v.shape[0]):
        r0, s0, t0 = v[k, 0], v[k, 1], v[k, 2]
        nrm = math.sqrt(r0 * r0 + s0 * s0 + t0 * t0)
        if nrm == 0.0:
            out[k, 0] = 0.0
            out[k, 1] = 0.0
            out[k, 2] = 0.0
            continue
        r, s, t = r0 / nrm, s0 / nrm, t0 / nrm
        if (s > 0.0 and t > 0.0 and math.log(t) - math.log(s) >= r / s) or \
                (s == 0.0 and r <= 0.0 and t >= 0.0):
            out[k, 0] = r0
            out[k, 1] = s0
            out[k, 2] = t0
            continue
        if (r > 0.0 and t < 0.0 and math.log(r) + s / r <= 1.0 + math.log(-t)) or \
                (r == 0.0 and s <= 0.0 and t <= 0.0):
            out[k, 0] = 0.0
            out[k, 1] = 0.0
            out[k, 2] = 0.0
            continue
        if r <= 0.0 and s <= 0.0:
            out[k, 0] = r0
            out[k, 1] = 0.0
            out[k, 2] = max(t0, 0.0)
            continue
        big = 690.0
        lo = -big
        hi = big
        if r > 0.0:
            lo = max(lo, 1.0 - s / r)
        elif r < 0.0:
            hi = min(hi, 1.0 - s / r)
        if s > 0.0:
            hi = min(hi, r / s)
        elif s < 0.0:
            lo = max(lo, r / s)
        lo = min(max(lo, -big), big)
        hi = min(max(hi, lo), big)
        if lo >= big:
            out[k, 0] = 0.0
            out[k, 1] = 0.0
            out[k, 2] = max(t0, 0.0)
            continue
        if hi <= -big:
            out[k, 0] = min(r0, 0.0)
            out[k, 1] = max(s0, 0.0)
            out[k, 2] = 0.0
            continue
        elo = math.exp(lo)
        hlo = ((lo - 1.0) * r + s) * elo - (r - lo * s) / elo - (lo * (lo - 1.0) + 1.0) * t
        ehi = math.exp(hi)
        hhi = ((hi - 1.0) * r + s) * ehi - (r - hi * s) / ehi - (hi * (hi - 1.0) + 1.0) * t
        slo = 1.0 if hlo > 0.0 else (-1.0 if hlo < 0.0 else 0.0)
        shi = 1.0 if hhi > 0.0 else (-1.0 if hhi < 0.0 else 0.0)
        if slo == shi:
            if slo > 0.0:
                hi = lo
            else:
                lo = hi
        for _ in range(64):
            if hi - lo <= 1e-16 * (1.0 + abs(lo) + abs(hi)):
                break
            mid = 0.5 * (lo + hi)
            em = math.exp(mid)
            hm = ((mid - 1.0) * r + s) * em - (r - mid * s) / em - (mid * (mid - 1.0) + 1.0) * t
            sm = 1.0 if hm > 0.0 else (-1.0 if hm < 0.0 else 0.0)
            if sm == slo:
                lo = mid
            else:
                hi = mid
        rho = 0.5 * (lo + hi)
        dd = rho * (rho - 1.0) + 1.0
        y = (s + (rho - 1.0) * r) / dd
        if y < 0.0:
            y = 0.0
        if rho > 0.0:
            mu = (r - rho * s) * math.exp(-rho) / dd
            if mu < 0.0:
                mu = 0.0
            z = t + mu
            if z < 0.0:
                z = 0.0
        else:
            z = y * math.exp(rho) if y > 0.0 else 0.0
        out[k, 0] = rho * y * nrm
        out[k, 1] = y * nrm
        out[k, 2] = z * nrm


if _njit is not None:
    _exp_proj_loop_fast = _njit(cache=True)(_exp_proj_loop)
else:  # pragma: no cover
    _exp_proj_loop_fast = None


def project_exp_fast(v: np.ndarray) -> np.ndarray:
    """Compiled scalar-loop variant of :func:`project_exp_many` (same math)."""
    v = np.ascontiguousarray(np.atleast_2d(v), dtype=float)
    if _exp_proj_loop_fast is None:
        return project_exp_many(v)
    out = np.empty_like(v)
    _exp_proj_loop_fast(v, out)
    return out


def project_exp(v) -> np.ndarray:
    """Euclidean projection of one 3-vector onto the exponential cone."""
    return project_exp_many(np.asarray(v, dtype=float).reshape(1, 3))[0]


def project_exp_dual_many(v: np.ndarray) -> np.ndarray:
    """Projection onto the dual exponential cone via Moreau decomposition."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    return v + project_exp_fast(-v)


def hermitian_embed(h: np.ndarray) -> np.ndarray:
    """Real symmetric embedding [[Re H, -Im H], [Im H, Re H]] of a Hermitian H.

    H >= 0 iff the embedding is PSD; eigenvalues double up and the trace
    doubles (builders halve trace objectives accordingly).
    """
    h = np.asarray(h)
    scale = max(1.0, float(np.abs(h).max(initial=0.0)))
    if np.abs(h - h.conj().T).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("input must be Hermitian")
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


# ---------------------------------------------------------------------------
# Solver


class _ConeProjector:
    """Precomputed block layout for fast dual-cone projection of the y iterate."""

    def __init__(self, cones: ConeSpec):
        self.cones = cones
        self.psd_groups: dict = {}  # side -> list of offsets
        self.nonneg = None
        self.exp = None
        for kind, off, length, side in cones.blocks():
            if kind == "nonneg":
                self.nonneg = (off, length)
            elif kind == "psd":
                self.psd_groups.setdefault(side, []).append(off)
            elif kind == "exp":
                self.exp = (off, length)
        for side, offs in self.psd_groups.items():
            d = svec_dim(side)
            self.psd_groups[side] = (np.array(offs), d, *_tri(side))

    def project_dual(self, y: np.ndarray) -> np.ndarray:
        """Project onto K* = free x nonneg x PSD x exp-dual (layout order)."""
        out = y.copy()
        if self.nonneg:
            off, length = self.nonneg
            np.maximum(out[off:off + length], 0.0, out=out[off:off + length])
        for side, (offs, d, rows, cols, scale) in self.psd_groups.items():
            idx = offs[:, None] + np.arange(d)[None, :]
            chunks = out[idx] / scale
            stack = np.zeros((len(offs), side, side))
            stack[:, rows, cols] = chunks
            stack[:, cols, rows] = chunks
            stack = _psd_project_batch(stack)
            out[idx] = stack[:, rows, cols] * scale
        if self.exp:
            off, length = self.exp
            pts = out[off:off + length].reshape(-1, 3)
            out[off:off + length] = project_exp_dual_many(pts).ravel()
        return out


def _equilibrate(a, b, c, cones: ConeSpec):
    """Scalar normalization of the offset and objective vectors.

    Diagonal (Ruiz-style) row/column scaling was measured to slow these
    problems down more often than it helped -- the builders already emit
    near-unit data -- so only the scale-free b/c normalization remains.
    """
    m, n = a.shape
    d = np.ones(m)
    e = np.ones(n)
    sigma = 1.0 / max(np.linalg.norm(b), 1e-6)
    rho = 1.0 / max(np.linalg.norm(c), 1e-6)
    return a.copy(), b * sigma, c * rho, d, e, sigma, rho


def solve(problem: ConicProblem, tol: float = 1e-7, max_iters: int = 50000,
          warm_start=None, check_every: int = 25, relax: float = 1.8,
          stall_window: int = 0) -> ConicSolution:
    """Operator-splitting solve of the homogeneous self-dual embedding.

    Returns status "optimal" when relative primal residual, dual residual and
    duality gap are all below tol; "infeasible"/"unbounded" on certificates;
    "max_iters" with the best iterate otherwise (also when the worst residual
    has not improved over the last ``stall_window`` iterations).  ``relax``
    is the standard ADMM over-relaxation parameter.  Deterministic for fixed
    inputs.
    """
    a0 = np.asarray(problem.a, dtype=float)
    b0 = np.asarray(problem.b, dtype=float)
    c0 = np.asarray(problem.c, dtype=float)
    m, n = a0.shape
    cones = problem.cones

    a, b, c, d_sc, e_sc, sigma, rho = _equilibrate(a0, b0, c0, cones)
    proj = _ConeProjector(cones)

    gram = np.eye(n) + a.T @ a
    try:
        chol = cho_factor(gram, check_finite=False)
        # problems here are small and well-conditioned: apply the inverse as
        # a single matvec instead of paying per-iteration triangular-solve
        # overhead
        gram_inv = cho_solve(chol, np.eye(n), check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalError("failed to factorize the ADMM system") from exc
    at = a.T.copy()

    h = np.concatenate([c, b])

    def m_inv(g1, g2):
        z1 = gram_inv @ (g1 - at @ g2)
        z2 = g2 + a @ z1
        return z1, z2

    ph1, ph2 = m_inv(c, b)
    p_h = np.concatenate([ph1, ph2])
    denom_h = 1.0 + h @ p_h

    def lin_solve(w, omega):
        g = w - omega * h
        g1, g2 = m_inv(g[:n], g[n:])
        mg = np.concatenate([g1, g2])
        z = mg - p_h * ((h @ mg) / denom_h)
        zeta = omega + h @ z
        return z, zeta

    u = np.zeros(n + m + 1)
    v = np.zeros(n + m + 1)
    u[-1] = 1.0
    v[-1] = 1.0
    if warm_start is not None:
        x0, y0, s0 = warm_start
        u[:n] = sigma * np.asarray(x0) / e_sc
        u[n:n + m] = rho * np.asarray(y0) / d_sc
        v[n:n + m] = sigma * d_sc * np.asarray(s0)
        u[-1] = 1.0
        v[-1] = 0.0

    norm_b = max(np.linalg.norm(b0), 1e-10)
    norm_c = max(np.linalg.norm(c0), 1e-10)

    def unscale(u_vec, v_vec):
        tau = u_vec[-1]
        x = e_sc * u_vec[:n] / (sigma * tau)
        y = d_sc * u_vec[n:n + m] / (rho * tau)
        s = v_vec[n:n + m] / (d_sc * sigma * tau)
        return x, y, s

    best = None
    best_metric = math.inf
    best_iter = 0
    status = "max_iters"
    it = 0
    for it in range(1, max_iters + 1):
        w = u + v
        zt, zeta = lin_solve(w[:-1], w[-1])
        ut = np.concatenate([zt, [zeta]])
        rel = relax * ut + (1.0 - relax) * u - v
        u_new = rel.copy()
        u_new[n:n + m] = proj.project_dual(rel[n:n + m])
        u_new[-1] = max(rel[-1], 0.0)
        v = v + u_new - relax * ut - (1.0 - relax) * u
        u = u_new

        if it % check_every == 0 or it == max_iters:
            tau = u[-1]
            kappa = v[-1]
            if tau > 1e-11 * max(1.0, kappa):
                x, y, s = unscale(u, v)
                pres = np.linalg.norm(a0 @ x + s - b0) / (1.0 + norm_b)
                dres = np.linalg.norm(a0.T @ y + c0) / (1.0 + norm_c)
                pobj = c0 @ x
                dobj = -b0 @ y
                gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
                res = {"primal": pres, "dual": dres, "gap": gap}
                metric = max(pres, dres, gap)
                if best is None or metric < max(best[3].values()):
                    best = (x, y, s, res)
                if metric < 0.9 * best_metric:
                    best_metric = metric
                    best_iter = it
                if pres <= tol and dres <= tol and gap <= tol:
                    return ConicSolution("optimal", x, y, s, float(pobj), res, it)
                if stall_window and it - best_iter >= stall_window:
                    break  # residuals have flatlined; return the best iterate
            # certificate checks (scale-free directions)
            y_dir = d_sc * u[n:n + m] / rho
            by = b0 @ y_dir
            if by < -1e-12 and np.linalg.norm(a0.T @ y_dir) <= tol * (-by) / norm_b:
                sol_y = y_dir / (-by)
                return ConicSolution("infeasible", np.full(n, np.nan), sol_y,
                                     np.full(m, np.nan), math.inf,
                                     {"primal": math.inf, "dual": 0.0, "gap": math.inf}, it)
            x_dir = e_sc * u[:n] / sigma
            s_dir = v[n:n + m] / (d_sc * sigma)
            cx = c0 @ x_dir
            if cx < -1e-12 and np.linalg.norm(a0 @ x_dir + s_dir) <= tol * (-cx) / norm_c:
                sol_x = x_dir / (-cx)
                return ConicSolution("unbounded", sol_x, np.full(m, np.nan),
                                     s_dir / (-cx), -math.inf,
                                     {"primal": 0.0, "dual": math.inf, "gap": math.inf}, it)

    if best is None:
        x = np.full(n, np.nan)
        best = (x, np.full(m, np.nan), np.full(m, np.nan),
                {"primal": math.inf, "dual": math.inf, "gap": math.inf})
    x, y, s, res = best
    return ConicSolution(status, x, y, s, float(c0 @ x) if np.all(np.isfinite(x)) else math.nan,
                         res, it)


# ---------------------------------------------------------------------------
# Problem assembly


@dataclass
class _AffineRow:
    coeffs: dict
    const: float


class ProblemBuilder:
    """Incremental assembly of a ConicProblem.

    Variables are plain indices; constraints are collected per cone kind and
    laid out in the fixed order zero / nonneg / PSD / exp at build time.
    Affine expressions are (coefficient-dict, constant) pairs handled by the
    ``add_*`` methods.
    """

    def __init__(self):
        self.n_vars = 0
        self._obj: dict = {}
        self._eq: list[_AffineRow] = []
        self._ineq: list[_AffineRow] = []
        self._psd: list[tuple] = []  # (side, const S0, [(idx, Sk), ...])
        self._exp: list[tuple] = []  # ((coeffs,const) x3)

    def add_vars(self, k: int) -> np.ndarray:
        idx = np.arange(self.n_vars, self.n_vars + k)
        self.n_vars += k
        return idx

    def minimize(self, coeffs: dict):
        for k, vc in coeffs.items():
            self._obj[k] = self._obj.get(k, 0.0) + float(vc)

    def add_eq(self, coeffs: dict, rhs: float):
        """sum coeffs * x = rhs."""
        self._eq.append(_AffineRow(dict(coeffs), float(rhs)))

    def add_ineq(self, coeffs: dict, rhs: float):
        """sum coeffs * x <= rhs."""
        self._ineq.append(_AffineRow(dict(coeffs), float(rhs)))

    def add_psd_form(self, side: int, const: np.ndarray, terms: list):
        """const + sum_k x_k * term_k  is constrained PSD (all real symmetric)."""
        self._psd.append((side, np.asarray(const, dtype=float),
                          [(int(i), np.asarray(mat, dtype=float)) for i, mat in terms]))

    def add_exp(self, x_aff, y_aff, z_aff):
        """(x, y, z) affine triple constrained to the exponential cone."""
        self._exp.append((x_aff, y_aff, z_aff))

    def build(self) -> ConicProblem:
        n = self.n_vars
        m = (len(self._eq) + len(self._ineq)
             + sum(svec_dim(side) for side, _, _ in self._psd) + 3 * len(self._exp))
        a = np.zeros((m, n))
        b = np.zeros(m)
        c = np.zeros(n)
        for k, vc in self._obj.items():
            c[k] = vc
        row = 0
        for r in self._eq:
            for k, vc in r.coeffs.items():
                a[row, k] += vc
            b[row] = r.const
            row += 1
        for r in self._ineq:
            for k, vc in r.coeffs.items():
                a[row, k] += vc
            b[row] = r.const
            row += 1
        for side, const, terms in self._psd:
            d = svec_dim(side)
            b[row:row + d] = svec(const)
            for k, mat in terms:
                a[row:row + d, k] -= svec(mat)
            row += d
        for x_aff, y_aff, z_aff in self._exp:
            for off, (coeffs, const) in enumerate((x_aff, y_aff, z_aff)):
                b[row + off] = const
                for k, vc in coeffs.items():
                    a[row + off, k] -= vc
            row += 3
        cones = ConeSpec(zero=len(self._eq), nonneg=len(self._ineq),
                         psd=tuple(side for side, _, _ in self._psd), exp=len(self._exp))
        return ConicProblem(c, a, b, cones)


class HermitianBlock:
    """A Hermitian matrix variable parametrized by m^2 real coordinates.

    Layout: the m diagonal entries, then (Re, Im) per off-diagonal pair in
    row-major upper-triangle order.  Provides the coefficient vectors that
    turn trace-linear functionals of the matrix into rows over the real
    parameters.
    """

    def __init__(self, builder: ProblemBuilder, m: int, psd: bool = True):
        self.m = m
        self.indices = builder.add_vars(m * m)
        basis = []
        for d in range(m):
            e = np.zeros((m, m), dtype=complex)
            e[d, d] = 1.0
            basis.append(e)
        for p in range(m):
            for q in range(p + 1, m):
                e = np.zeros((m, m), dtype=complex)
                e[p, q] = 1.0
                e[q, p] = 1.0
                basis.append(e)
                e = np.zeros((m, m), dtype=complex)
                e[p, q] = 1.0j
                e[q, p] = -1.0j
                basis.append(e)
        self.basis = basis
        if psd:
            terms = [(int(self.indices[k]), hermitian_embed(bmat)) for k, bmat in enumerate(basis)]
            builder.add_psd_form(2 * m, np.zeros((2 * m, 2 * m)), terms)

    def gain_coeffs(self, g: np.ndarray) -> dict:
        """Coefficients of Re tr(G * H) over the real parameters (G Hermitian)."""
        out = {}
        for k, bmat in enumerate(self.basis):
            val = float(np.trace(g @ bmat).real)
            if val != 0.0:
                out[int(self.indices[k])] = val
        return out

    def trace_coeffs(self) -> dict:
        return {int(self.indices[d]): 1.0 for d in range(self.m)}

    def value(self, x: np.ndarray) -> np.ndarray:
        h = np.zeros((self.m, self.m), dtype=complex)
        for k, bmat in enumerate(self.basis):
            h += x[self.indices[k]] * bmat
        return h

    def coords_of(self, h: np.ndarray) -> np.ndarray:
        """Real coordinates of a Hermitian matrix in this block's basis."""
        m = self.m
        out = np.zeros(m * m)
        out[:m] = np.diag(h).real
        k = m
        for p in range(m):
            for q in range(p + 1, m):
                out[k] = h[p, q].real
                out[k + 1] = h[p, q].imag
                k += 2
        return out


@dataclass
class SymmetricBlock:
    """A 2x2 real symmetric auxiliary variable [m00, m01, m11]."""

    indices: np.ndarray

    @classmethod
    def create(cls, builder: ProblemBuilder, psd: bool = True) -> "SymmetricBlock":
        idx = builder.add_vars(3)
        blk = cls(idx)
        if psd:
            builder.add_psd_form(2, np.zeros((2, 2)), list(zip(map(int, idx), blk.basis())))
        return blk

    @staticmethod
    def basis():
        return [np.array([[1.0, 0.0], [0.0, 0.0]]),
                np.array([[0.0, 1.0], [1.0, 0.0]]),
                np.array([[0.0, 0.0], [0.0, 1.0]])]

    def value(self, x: np.ndarray) -> np.ndarray:
        m00, m01, m11 = x[self.indices]
        return np.array([[m00, m01], [m01, m11]])


def build_schur_crb_block(builder: ProblemBuilder, efim_const: np.ndarray,
                          efim_terms: list, q_bound: float) -> SymmetricBlock:
    """Emit the trace-of-inverse constraint tr(J(x)^{-1}) <= q as an LMI.

    Introduces an auxiliary 2x2 symmetric M with [[M, I], [I, J(x)]] PSD and
    tr(M) <= q.  ``efim_const`` is the constant part of the (real 2x2) EFIM
    block -- nonzero in the bound variant where a fixed matrix is subtracted
    -- and ``efim_terms`` is a list of (var_index, 2x2 coefficient).
    """
    mi = SymmetricBlock.create(builder, psd=True)
    s0 = np.zeros((4, 4))
    s0[0:2, 2:4] = np.eye(2)
    s0[2:4, 0:2] = np.eye(2)
    s0[2:4, 2:4] = efim_const
    terms = []
    for k, base in zip(map(int, mi.indices), mi.basis()):
        mat = np.zeros((4, 4))
        mat[0:2, 0:2] = base
        terms.append((k, mat))
    for k, coef in efim_terms:
        mat = np.zeros((4, 4))
        mat[2:4, 2:4] = coef
        terms.append((int(k), mat))
    builder.add_psd_form(4, s0, terms)
    builder.add_ineq({int(mi.indices[0]): 1.0, int(mi.indices[2]): 1.0}, q_bound)
    return mi


# ---------------------------------------------------------------------------
# Problem serialization (regression fixtures)


def problem_to_json(problem: ConicProblem) -> dict:
    return {
        "c": problem.c.tolist(),
        "a": problem.a.tolist(),
        "b": problem.b.tolist(),
        "cones": {"zero": problem.cones.zero, "nonneg": problem.cones.nonneg,
                  "psd": list(problem.cones.psd), "exp": problem.cones.exp},
    }


def problem_from_json(blob: dict) -> ConicProblem:
    cones = ConeSpec(zero=blob["cones"]["zero"], nonneg=blob["cones"]["nonneg"],
                     psd=tuple(blob["cones"]["psd"]), exp=blob["cones"]["exp"])
    return ConicProblem(np.asarray(blob["c"], dtype=float),
                        np.asarray(blob["a"], dtype=float),
                        np.asarray(blob["b"], dtype=float), cones)
