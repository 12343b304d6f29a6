"""Expected critical point counts via three integral representations.

* ``er``        -- unrestricted critical values (E = R), any Borel domain of
  known volume; inner expectation over N ordered GOE eigenvalues, with the
  Gaussian y-integral done in closed form per eigenvalue configuration.
* ``shell-goi`` -- shell domains, arbitrary value sets; inner expectation
  over N-1 orthogonally invariant eigenvalues plus chi-square weights.
* ``shell-goe`` -- shell domains under the three-inequality condition; inner
  expectation over N-1 GOE eigenvalues with the corner entry integrated in
  closed form through the Gaussian c.d.f.

For N <= 2 the inner expectations are evaluated by deterministic quadrature
(no Monte Carlo error); for larger N a common-random-numbers batch of
eigenvalue/chi-square draws is reused at every outer quadrature node so the
integrand stays smooth in the outer variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import special
from scipy.integrate import quad

from .conditions import check_assumption3, nondeg_scalar
from .structure import StructureFunction, eval_D, local_params
from .streams import stream

__all__ = [
    "Budget",
    "CountRequest",
    "CountResult",
    "crt_total_er",
    "crt_index_er",
    "crt_shell_goi",
    "crt_shell_goe",
    "shell_profile",
    "closed_form_n2",
    "eta_prime",
    "shell_volume",
    "parse_intervals",
]

_TINY_DENOM = 1e-12
_PATHOLOGICAL_FRACTION = 1e-6
_SQRT2PI = math.sqrt(2.0 * math.pi)
_U_TAIL_SIGMAS = 8.0


class PathologicalSampleError(ArithmeticError):
    """Too many samples fell on the measure-zero singular set."""


# ---------------------------------------------------------------------------
# request / result plumbing
# ---------------------------------------------------------------------------

@dataclass
class Budget:
    mc_samples: int = 20000
    tol: float = 1e-3
    seed: int = 0
    max_refine: int = 2
    max_doublings: int = 2
    node_chunk_elems: int = 1 << 22


@dataclass
class CountResult:
    estimate: float
    std_error: float
    method: str
    quad_error: float = 0.0
    diagnostics: dict = dc_field(default_factory=dict)

    @property
    def combined_error(self) -> float:
        return math.hypot(self.std_error, self.quad_error)

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "quad_error": self.quad_error,
            "method": self.method,
            "diagnostics": self.diagnostics,
        }


@dataclass
class CountRequest:
    """A full counting query, mirrored by the CLI `count` subcommand."""

    field_descriptor: dict
    N: int
    method: str                      # er | shell-goi | shell-goe | closed-n2
    volume: Optional[float] = None   # er only
    R1: Optional[float] = None
    R2: Optional[float] = None
    E: Optional[list] = None         # list of [lo, hi], None = all reals
    k: Optional[int] = None          # None = total
    budget: Budget = dc_field(default_factory=Budget)

    def to_json(self) -> dict:
        return {
            "field": self.field_descriptor,
            "N": self.N,
            "method": self.method,
            "volume": self.volume,
            "R1": self.R1,
            "R2": self.R2,
            "E": self.E,
            "k": self.k,
            "budget": {
                "mc_samples": self.budget.mc_samples,
                "tol": self.budget.tol,
                "seed": self.budget.seed,
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "CountRequest":
        bud = d.get("budget", {})
        return cls(
            field_descriptor=d["field"], N=int(d["N"]), method=d["method"],
            volume=d.get("volume"), R1=d.get("R1"), R2=d.get("R2"),
            E=d.get("E"), k=d.get("k"),
            budget=Budget(mc_samples=int(bud.get("mc_samples", 20000)),
                          tol=float(bud.get("tol", 1e-3)),
                          seed=int(bud.get("seed", 0))),
        )

    def run(self) -> CountResult:
        from .structure import from_descriptor
        f = from_descriptor(self.field_descriptor)
        if self.method == "er":
            if self.k is None:
                return crt_total_er(f, self.N, self.volume, self.budget)
            return crt_index_er(f, self.N, self.k, self.volume, self.budget)
        if self.method == "closed-n2":
            vals = closed_form_n2(f)
            est = sum(vals) if self.k is None else vals[self.k]
            return CountResult(est, 0.0, "closed-n2")
        if self.method == "shell-goi":
            return crt_shell_goi(f, self.N, self.E, self.R1, self.R2, self.k, self.budget)
        if self.method == "shell-goe":
            return crt_shell_goe(f, self.N, self.E, self.R1, self.R2, self.k, self.budget)
        raise ValueError(f"unknown method {self.method!r}")


def parse_intervals(spec: str):
    """Parse 'lo:hi,lo:hi' with inf/-inf literals; 'all' means the whole line."""
    if spec in ("all", "R", "reals"):
        return None
    out = []
    for part in spec.split(","):
        lo_s, hi_s = part.split(":")
        lo, hi = float(lo_s), float(hi_s)
        if not lo < hi:
            raise ValueError(f"empty interval {part!r}")
        out.append((lo, hi))
    return out


def shell_volume(N: int, R1: float, R2: float) -> float:
    """Lebesgue measure of the shell R1 < |x| < R2 in R^N."""
    ball = math.pi ** (N / 2.0) / math.gamma(N / 2.0 + 1.0)
    return ball * (R2 ** N - R1 ** N)


# ---------------------------------------------------------------------------
# quadrature node caches
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _gh_nodes(n: int):
    # nodes/weights for E[g(W)], W standard normal
    x, w = special.roots_hermitenorm(n)
    return x, w / w.sum()


@lru_cache(maxsize=64)
def _gl_exp_nodes(n: int):
    # nodes/weights for integral_0^inf e^{-t} g(t) dt
    t, w = special.roots_laguerre(n)
    return t, w


@lru_cache(maxsize=64)
def _chi2_nodes(n: int):
    # nodes/weights for E[g(Z^2)], Z standard normal: Z^2 = 2t, gen-Laguerre(-1/2)
    t, w = special.roots_genlaguerre(n, -0.5)
    return 2.0 * t, w / math.sqrt(math.pi)


@lru_cache(maxsize=64)
def _leg_nodes(n: int):
    return np.polynomial.legendre.leggauss(n)


def _panel_nodes(a: float, b: float, panels: int, per_panel: int):
    """Composite Gauss-Legendre nodes/weights on [a, b]."""
    x0, w0 = _leg_nodes(per_panel)
    edges = np.linspace(a, b, panels + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        xs.append(0.5 * (lo + hi) + half * x0)
        ws.append(half * w0)
    return np.concatenate(xs), np.concatenate(ws)


# ---------------------------------------------------------------------------
# closed-form Gaussian reductions
# ---------------------------------------------------------------------------

def _norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT2PI


def _e_chi_plus(A, B: float):
    """E[(A - B Z^2)^+] for Z standard normal, B > 0, A arrayed."""
    A = np.asarray(A, dtype=float)
    t = np.sqrt(np.clip(A, 0.0, None) / B)
    inner = 2.0 * special.ndtr(t) - 1.0
    return (A - B) * inner + 2.0 * B * t * _norm_pdf(t)


def _e_chi_parts(A, B: float):
    plus = _e_chi_plus(A, B)
    return plus, plus - (np.asarray(A, dtype=float) - B)


def _gauss_plus(x, b):
    """E[(x + b W)^+] = x Phi(x/b) + b phi(x/b) for W standard normal."""
    z = x / b
    return x * special.ndtr(z) + b * _norm_pdf(z)


def _gauss_minus(x, b):
    z = x / b
    return -x * special.ndtr(-z) + b * _norm_pdf(z)


def _gauss_abs(x, b):
    z = x / b
    return x * (2.0 * special.ndtr(z) - 1.0) + 2.0 * b * _norm_pdf(z)


# incomplete Gaussian moments: integral_a^b y^m exp(-y^2) dy, vectorized
def _moment_table(a, b, mmax: int):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def edge(x, m):
        fin = np.isfinite(x)
        xf = np.where(fin, x, 0.0)
        val = np.where(fin, xf ** max(m - 1, 0) * np.exp(-xf * xf), 0.0)
        return val

    out = [0.5 * math.sqrt(math.pi) * (special.erf(b) - special.erf(a))]
    if mmax >= 1:
        ea = np.where(np.isfinite(a), np.exp(-np.where(np.isfinite(a), a, 0.0) ** 2), 0.0)
        eb = np.where(np.isfinite(b), np.exp(-np.where(np.isfinite(b), b, 0.0) ** 2), 0.0)
        out.append(0.5 * (ea - eb))
    for m in range(2, mmax + 1):
        out.append(0.5 * (m - 1) * out[m - 2] + 0.5 * (edge(a, m) - edge(b, m)))
    return out


def _poly_from_roots_neg(lam):
    """Ascending coefficients of prod_j (y + lam_j); lam has shape (..., n)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    coefs = np.zeros(lam.shape[:-1] + (n + 1,))
    coefs[..., 0] = 1.0
    deg = 0
    for j in range(n):
        new = np.zeros_like(coefs)
        new[..., 1:deg + 2] += coefs[..., 0:deg + 1]
        new[..., 0:deg + 1] += lam[..., j:j + 1] * coefs[..., 0:deg + 1]
        coefs = new
        deg += 1
    return coefs


def _er_piece(lam, k: int):
    """(-1)^k integral over the index-k window of prod_j (y + lam_j) e^{-y^2} dy.

    lam is (..., N) ascending; window y in (-lam_{k+1}, -lam_k) with the
    infinite conventions at the ends.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    base = lam.shape[:-1]
    lo = -lam[..., k] if k < n else np.full(base, -np.inf)
    hi = -lam[..., k - 1] if k >= 1 else np.full(base, np.inf)
    coefs = _poly_from_roots_neg(lam)
    mom = _moment_table(lo, hi, n)
    val = np.zeros(base)
    for m in range(n + 1):
        val += coefs[..., m] * mom[m]
    return ((-1.0) ** k) * val


# ---------------------------------------------------------------------------
# representation with unrestricted critical values (E = R)
# ---------------------------------------------------------------------------

def _er_prefactor(f: StructureFunction, N: int, volume: float) -> float:
    dp0 = eval_D(f, 0.0, 1)
    dpp0 = eval_D(f, 0.0, 2)
    if dp0 <= 0 or dpp0 >= 0:
        raise ValueError(f"{f.name}: needs D'(0) > 0 and D''(0) < 0")
    d4 = eval_D(f, 0.0, 4)
    if not (0.0 < abs(d4) < math.inf):
        raise ValueError(f"{f.name}: smoothness condition fails, D''''(0) = {d4}")
    if volume is None or volume <= 0:
        raise ValueError("volume must be positive")
    return (-2.0 * dpp0) ** (N / 2.0) * volume / (
        math.pi ** ((N + 1) / 2.0) * dp0 ** (N / 2.0))


def _er_expectation_det(N: int, k: Optional[int], n_nodes: int) -> float:
    """Deterministic E over GOE_N eigenvalues of the exact y-window integral."""
    if N == 1:
        x, w = _gh_nodes(n_nodes)
        lam = x[:, None]
        if k is None:
            val = sum(_er_piece(lam, kk) for kk in range(2))
        else:
            val = _er_piece(lam, k)
        return float(w @ val)
    if N == 2:
        # ordered pair in separable coordinates: sum p ~ N(0, 2), gap s with
        # density (s/2) e^{-s^2/4}, i.e. s = 2 sqrt(t), t ~ Exp(1)
        xp, wp = _gh_nodes(n_nodes)
        t, wt = _gl_exp_nodes(n_nodes)
        p = math.sqrt(2.0) * xp
        s = 2.0 * np.sqrt(t)
        lam1 = 0.5 * (p[:, None] - s[None, :])
        lam2 = 0.5 * (p[:, None] + s[None, :])
        lam = np.stack([lam1, lam2], axis=-1)
        if k is None:
            val = sum(_er_piece(lam, kk) for kk in range(3))
        else:
            val = _er_piece(lam, k)
        return float(wp @ val @ wt)
    if N == 3:
        # (mean, gap, gap) coordinates: lam = m + (-(2s+t), s-t, s+2t)/3 with
        # unit Jacobian; the joint density separates into a Gaussian in m and
        # s t (s+t) exp(-(s^2+st+t^2)/3) over the positive quadrant
        logk3 = (3 / 2.0) * math.log(2.0) + sum(special.gammaln(i / 2.0) for i in (1, 2, 3))
        xm, wm = _gh_nodes(n_nodes)
        m = xm / math.sqrt(3.0)
        sg, swg = _panel_nodes(0.0, 12.0, max(4, n_nodes // 12), 10)
        s = sg[:, None]
        t = sg[None, :]
        dens = (np.exp(-(s * s + s * t + t * t) / 3.0) * s * t * (s + t)
                * swg[:, None] * swg[None, :])
        v1 = -(2.0 * s + t) / 3.0
        v2 = (s - t) / 3.0
        v3 = (s + 2.0 * t) / 3.0
        lam = np.stack(np.broadcast_arrays(v1, v2, v3), axis=-1)  # (S, S, 3)
        total = 0.0
        ks = range(4) if k is None else (k,)
        for mi, wi in zip(m, wm):
            lam_m = lam + mi
            val = sum(_er_piece(lam_m, kk) for kk in ks)
            total += wi * float(np.sum(dens * val))
        return total * math.sqrt(2.0 * math.pi / 3.0) * math.exp(-logk3)
    raise ValueError("deterministic path supports N <= 3")


def crt_index_er(f: StructureFunction, N: int, k: Optional[int], volume: float,
                 budget: Optional[Budget] = None) -> CountResult:
    """Expected count of index-k critical points over a set of given volume,
    with unrestricted critical values (k=None gives the total)."""
    budget = budget or Budget()
    if k is not None and not (0 <= k <= N):
        raise ValueError(f"index k must lie in 0..{N}")
    pref = _er_prefactor(f, N, volume)
    if N <= 3:
        n0, n1 = (64, 96) if N <= 2 else (48, 72)
        e0 = _er_expectation_det(N, k, n0)
        e1 = _er_expectation_det(N, k, n1)
        est = pref * e1
        qerr = abs(pref * (e1 - e0))
        return CountResult(max(est, 0.0), 0.0, "er", quad_error=qerr,
                           diagnostics={"inner": "quadrature", "nodes": n1})
    rng = stream(budget.seed, 11, N)
    B = int(budget.mc_samples)
    from .rmt import sample_goe
    mats = sample_goe(N, rng, size=B)
    lam = np.linalg.eigvalsh(mats)
    if k is None:
        vals = sum(_er_piece(lam, kk) for kk in range(N + 1))
    else:
        vals = _er_piece(lam, k)
    est = pref * float(vals.mean())
    se = pref * float(vals.std(ddof=1)) / math.sqrt(B)
    return CountResult(max(est, 0.0), se, "er",
                       diagnostics={"inner": "mc", "mc_samples": B})


def crt_total_er(f: StructureFunction, N: int, volume: float,
                 budget: Optional[Budget] = None) -> CountResult:
    """Expected total count of critical points over a set of given volume."""
    return crt_index_er(f, N, None, volume, budget)


def closed_form_n2(f: StructureFunction):
    """(index-0, index-1, index-2) expected counts per unit area in the plane."""
    dp0 = eval_D(f, 0.0, 1)
    dpp0 = eval_D(f, 0.0, 2)
    d4 = eval_D(f, 0.0, 4)
    if not (0.0 < abs(d4) < math.inf):
        raise ValueError(f"{f.name}: smoothness condition fails, D''''(0) = {d4}")
    base = -dpp0 / (math.sqrt(3.0) * math.pi * dp0)
    return (base, 2.0 * base, base)


# ---------------------------------------------------------------------------
# eta' evaluation (corner factor of the conditioned determinant)
# ---------------------------------------------------------------------------

def eta_prime(m1: float, y: float, m3: float, lambdas, Z, d2pp0: float) -> float:
    """m1 + 2 sqrt(-D''(0)) y - sqrt(-D''(0)) sum_l Z_l^2 / (lambda_l + m3)."""
    if d2pp0 >= 0:
        raise ValueError("D''(0) must be negative")
    lam = np.asarray(lambdas, dtype=float)
    z = np.asarray(Z, dtype=float)
    denom = lam + m3
    if lam.size and np.min(np.abs(denom)) < _TINY_DENOM:
        raise PathologicalSampleError(
            f"|lambda + m3| < {_TINY_DENOM}: sample lies on the singular set")
    root = math.sqrt(-d2pp0)
    return float(m1 + 2.0 * root * y - root * np.sum(z * z / denom))


# ---------------------------------------------------------------------------
# shell-domain engines
# ---------------------------------------------------------------------------

def _keys_for(N: int, k):
    if k is None:
        return ["total"]
    if k == "all":
        return ["total"] + list(range(N + 1))
    if not (0 <= int(k) <= N):
        raise ValueError(f"index k must lie in 0..{N}")
    return [int(k)]


def _u_grid(E, sigma: float, n_gh: int, per_sigma_panels: int, per_panel: int):
    """Nodes/weights of the u-integral including the Gaussian density factor.

    Returns (nodes, weights, clipped_mass)."""
    if E is None:
        x, w = _gh_nodes(n_gh)
        return sigma * x, w, 0.0
    nodes, weights = [], []
    clipped = 0.0
    tail = float(special.ndtr(-_U_TAIL_SIGMAS))
    lim = _U_TAIL_SIGMAS * sigma
    for lo, hi in E:
        clo = max(lo, -lim)
        chi = min(hi, lim)
        if clo >= chi:
            # whole interval beyond the tail cut
            clipped += tail
            continue
        span = chi - clo
        panels = max(2, per_sigma_panels * int(math.ceil(span / (2.0 * sigma))))
        panels = min(panels, 48)
        x, w = _panel_nodes(clo, chi, panels, per_panel)
        nodes.append(x)
        weights.append(w * _norm_pdf(x / sigma) / sigma)
        if lo < -lim:
            clipped += tail
        if hi > lim:
            clipped += tail
    if not nodes:
        return np.zeros(0), np.zeros(0), clipped
    return np.concatenate(nodes), np.concatenate(weights), clipped


@dataclass
class _ShellGrids:
    rho: np.ndarray
    rho_w: np.ndarray
    n_u: int
    n_y: int
    n_eig: int
    n_z: int
    u_panels: int = 2
    u_per_panel: int = 8


def _shell_grids(R1, R2, level: int, deterministic: bool) -> _ShellGrids:
    if deterministic:
        # the inner eigenvalue / chi-square rules converge spectrally on these
        # integrands, so refinement sweeps only the outer (rho, u, y) grids
        scale = [1.0, 1.5, 2.25, 3.375][min(level, 3)]
        rho, rho_w = _panel_nodes(R1, R2, 3 + 2 * level, 8)
        return _ShellGrids(rho, rho_w, n_u=int(24 * scale), n_y=int(24 * scale),
                           n_eig=56, n_z=20,
                           u_panels=1 + level, u_per_panel=8)
    sizes = {0: (2, 16, 16), 1: (3, 24, 24), 2: (4, 32, 32)}
    p, nu, ny = sizes.get(level, (4, 32, 32))
    rho, rho_w = _panel_nodes(R1, R2, p, 8)
    return _ShellGrids(rho, rho_w, n_u=nu, n_y=ny, n_eig=0, n_z=0,
                       u_panels=1, u_per_panel=8)


def _precheck_shell(f, N, R1, R2, flavor):
    probes = np.linspace(R1 if R1 > 0 else (R1 + 1e-6 * (R2 - R1)), R2, 16)
    for rho in probes:
        r = float(rho * rho)
        if flavor == "goe":
            rep = check_assumption3(f, r)
            if rep.holds is not True:
                raise ValueError(
                    f"{f.name}: three-inequality condition fails at r={r:.6g} "
                    f"(margin {rep.margin:.3e}); the GOE shell representation needs it")
        else:
            val = nondeg_scalar(f, N, r)
            if val <= 0:
                raise ValueError(
                    f"{f.name}: nondegeneracy fails at r={r:.6g} (value {val:.3e})")


# ---- deterministic inner engines (N = 2, one inner eigenvalue) -------------

def _vals_goi_det(a0, m3, lam, lam_w, Broot, keys):
    """Inner expectation values for each key; a0/m3 arrays of outer shape S.

    The chi-square average is in closed form; only the single eigenvalue is
    integrated numerically."""
    A = a0[..., None] * (lam + m3[..., None])          # (S, L)
    plus, minus = _e_chi_parts(A, Broot)
    above = (lam + m3[..., None]) > 0
    out = {}
    for key in keys:
        if key == "total":
            v = plus + minus
        elif key == 0:
            v = np.where(above, plus, 0.0)
        elif key == 1:
            v = minus
        else:  # key == 2
            v = np.where(~above, plus, 0.0)
        out[key] = v @ lam_w
    return out


def _vals_goe_det(abar, ynode, lam, lam_w, z2, z2_w, Broot, bstd, keys):
    """Inner expectation for the GOE shell flavor at N=2 (one eigenvalue).

    One pass of the Gaussian c.d.f. tensor serves every key, since the minus
    part is the plus part shifted by the mean.  Chunked over the outer nodes
    so the (nodes, eig, chi2) tensor stays small.
    """
    a_flat = np.ravel(abar)
    y_flat = np.ravel(ynode)
    out = {key: np.empty(a_flat.shape) for key in keys}
    chunk = max(1, (1 << 21) // (lam.size * z2.size))
    for lo in range(0, a_flat.size, chunk):
        hi = min(lo + chunk, a_flat.size)
        q = lam - y_flat[lo:hi, None]                   # (C, L)
        absq = np.abs(q)
        safe = np.where(absq < _TINY_DENOM, np.copysign(_TINY_DENOM, q), q)
        aN = a_flat[lo:hi, None, None] - Broot * z2 / safe[..., None]  # (C, L, Z)
        pz = _gauss_plus(aN, bstd) @ z2_w               # (C, L) chi2-averaged plus part
        mz = pz - aN @ z2_w
        below = q < 0                                    # lambda < y
        for key in keys:
            if key == "total":
                v = pz + mz
            elif key == 0:
                v = np.where(below, 0.0, pz)
            elif key == 1:
                v = np.where(below, pz, mz)
            else:  # key == 2
                v = np.where(below, mz, 0.0)
            out[key][lo:hi] = (v * absq) @ lam_w
    return {key: out[key].reshape(np.shape(abar)) for key in keys}


# ---- common-random-numbers batches for N >= 3 ------------------------------

@dataclass
class _CrnBatch:
    lam_centered: np.ndarray   # (B, n) eigenvalues of the traceless GOE part
    lam_goe: np.ndarray        # (B, n) plain GOE eigenvalues
    zeta0: np.ndarray          # (B,) standard normal for the trace shift
    z2: np.ndarray             # (B, n) chi-square(1) weights


def _draw_batch(n: int, B: int, seed: int, flavor: str) -> _CrnBatch:
    from .rmt import sample_goe
    rng = stream(seed, 23, n, 0 if flavor == "goi" else 1)
    mats = sample_goe(n, rng, size=B)
    lam = np.linalg.eigvalsh(mats)
    zeta0 = rng.standard_normal(B)
    z2 = rng.standard_normal((B, n)) ** 2
    return _CrnBatch(lam - lam.mean(axis=1, keepdims=True), lam, zeta0, z2)


def _loo_products(sh):
    """Leave-one-out products along the last axis via prefix/suffix scans."""
    pre = np.ones_like(sh)
    pre[..., 1:] = np.cumprod(sh[..., :-1], axis=-1)
    suf = np.ones_like(sh)
    suf[..., -2::-1] = np.cumprod(sh[..., :0:-1], axis=-1)
    return pre * suf


def _vals_goi_mc(a0, m3, lam, z2, Broot, keys):
    """(C,) node params against a (B, n) eigenvalue batch -> {key: (C, B)}.

    The eigenvalue axis is unrolled (n is 2 or 3 in practice) so everything
    stays in flat (C, B) elementwise arithmetic."""
    n = lam.shape[1]
    need_eta = any(key != "total" for key in keys)
    m3c = m3[:, None]
    sh = [lam[None, :, j] + m3c for j in range(n)]      # n arrays of (C, B)
    prod = sh[0].copy()
    for j in range(1, n):
        prod *= sh[j]
    # sum_l Z_l^2 prod_{j != l} sh_j without any division
    ssum = np.zeros_like(prod)
    for l in range(n):
        term = z2[None, :, l].copy() if n == 1 else z2[None, :, l] * sh[(l + 1) % n]
        for j in range(n):
            if j != l and j != (l + 1) % n:
                term = term * sh[j]
        ssum += term
    bracket = a0[:, None] * prod - Broot * ssum
    out = {}
    bad = None
    if need_eta:
        bad = np.abs(sh[0]) < _TINY_DENOM
        zsum = z2[None, :, 0] / np.where(bad, 1.0, sh[0])
        for j in range(1, n):
            bj = np.abs(sh[j]) < _TINY_DENOM
            zsum += z2[None, :, j] / np.where(bj, 1.0, sh[j])
            bad |= bj
        eta = a0[:, None] - Broot * zsum
        count = (sh[0] < 0).astype(np.int8)
        for j in range(1, n):
            count += sh[j] < 0
    absb = np.abs(bracket)
    for key in keys:
        if key == "total":
            out[key] = absb
            continue
        k = int(key)
        ind = np.zeros(bracket.shape, dtype=bool)
        if k <= n:  # first branch: block index k, eta > 0 (valid for k <= N-1)
            ind |= (count == k) & (eta > 0)
        if k >= 1:
            ind |= (count == k - 1) & (eta < 0)
        ind &= ~bad
        out[key] = np.where(ind, absb, 0.0)
    if bad is not None:
        out["_bad"] = bad
    return out


def _vals_goe_mc(abar, ynode, lam, z2, Broot, bstd, keys):
    """GOE-flavor inner values; eigenvalue axis unrolled as in the GOI case."""
    n = lam.shape[1]
    yc = ynode[:, None]
    q0 = lam[None, :, 0] - yc
    bad = np.abs(q0) < _TINY_DENOM
    prodabs = np.abs(q0)
    zsum = z2[None, :, 0] / np.where(bad, 1.0, q0)
    nbelow = (q0 < 0).astype(np.int8)
    for j in range(1, n):
        qj = lam[None, :, j] - yc
        bj = np.abs(qj) < _TINY_DENOM
        prodabs = prodabs * np.abs(qj)
        zsum += z2[None, :, j] / np.where(bj, 1.0, qj)
        nbelow += qj < 0
        bad |= bj
    aN = abar[:, None] - Broot * zsum
    plus = _gauss_plus(aN, bstd)
    minus = plus - aN
    out = {}
    for key in keys:
        if key == "total":
            v = (plus + minus) * prodabs
        else:
            k = int(key)
            v = np.zeros_like(aN)
            if k <= n:       # lambda_k < y < lambda_{k+1}
                v += np.where(nbelow == k, plus, 0.0)
            if k >= 1:
                v += np.where(nbelow == k - 1, minus, 0.0)
            v = v * prodabs
        v = np.where(bad, 0.0, v)
        out[key] = v
    out["_bad"] = bad
    return out


# ---- the outer integral -----------------------------------------------------

def _shell_pass(f, N, E, R1, R2, keys, flavor, grids: _ShellGrids,
                batch: Optional[_CrnBatch]):
    """One full evaluation of the shell integral on the given grids.

    Returns ({key: estimate}, {key: per-draw totals} or None, diagnostics)."""
    dp0 = eval_D(f, 0.0, 1)
    dpp0 = eval_D(f, 0.0, 2)
    Broot = math.sqrt(-dpp0)
    const = ((-2.0 * dpp0) ** (N / 2.0)
             / (dp0 ** (N / 2.0) * math.gamma(N / 2.0) * Broot))
    n_inner = N - 1
    deterministic = batch is None

    ests = {key: 0.0 for key in keys}
    perdraw = None if deterministic else {key: np.zeros(batch.lam_goe.shape[0]) for key in keys}
    bad_count = 0
    eval_count = 0
    tail_mass = 0.0

    if deterministic and n_inner == 1:
        ghx, ghw = _gh_nodes(grids.n_eig)
        z2, z2w = _chi2_nodes(grids.n_z)

    for rho, wrho in zip(grids.rho, grids.rho_w):
        p = local_params(f, float(rho), 0.0)
        r = rho * rho
        u_nodes, u_w, clip = _u_grid(E, p.sigma_Y, grids.n_u,
                                     grids.u_panels, grids.u_per_panel)
        tail_mass = max(tail_mass, clip)
        if u_nodes.size == 0:
            continue
        geom = wrho * rho ** (N - 1)
        m1 = u_nodes * p.m1_coeff
        m2 = u_nodes * p.m2_coeff

        if flavor == "goi":
            V = p.var_corner
            if V <= 0:
                raise ValueError(f"{f.name}: corner variance {V:.3e} <= 0 at rho={rho:.6g}")
            yg, yw = _gh_nodes(grids.n_y)
            y = math.sqrt(V) * yg
            slope = (p.d1 + p.d2) / V
            a0 = m1[:, None] + 2.0 * Broot * y[None, :]
            m3 = slope * y[None, :] + m2[:, None] / (2.0 * Broot)
            wgt = u_w[:, None] * yw[None, :] * geom
            if n_inner == 0:
                # no inner eigenvalues: integrate |a0| (and sign parts) exactly in y
                tau = 2.0 * Broot * math.sqrt(V)
                for key in keys:
                    if key == "total":
                        vals_u = _gauss_abs(m1, tau)
                    elif key == 0:
                        vals_u = _gauss_plus(m1, tau)
                    else:
                        vals_u = _gauss_minus(m1, tau)
                    ests[key] += geom * float(u_w @ vals_u)
                continue
            if deterministic:
                lam = math.sqrt(1.0 + p.c) * ghx
                vals = _vals_goi_det(a0, m3, lam, ghw, Broot, keys)
                for key in keys:
                    ests[key] += float(np.sum(wgt * vals[key]))
            else:
                if p.c <= -1.0 / n_inner:
                    raise ValueError(
                        f"{f.name}: conditioned block degenerate at rho={rho:.6g} (c={p.c:.4f})")
                shift = math.sqrt((1.0 + n_inner * p.c) / n_inner)
                lam = batch.lam_centered + shift * batch.zeta0[:, None]
                lam = np.sort(lam, axis=1)
                bad_count, eval_count = _mc_accumulate(
                    a0, m3, wgt, lam, batch, Broot, None, keys, "goi",
                    ests, perdraw, bad_count, eval_count)
        else:
            s2 = -2.0 * dpp0 - p.beta ** 2               # sigma2^2 + alpha beta rho^2
            if s2 <= 0 or p.b2 <= 0:
                raise ValueError(
                    f"{f.name}: GOE shell representation degenerate at rho={rho:.6g} "
                    f"(s2={s2:.3e}, b^2={p.b2:.3e})")
            bstd = math.sqrt(p.b2)
            wg, ww = _gh_nodes(grids.n_y)
            w_nodes = math.sqrt(s2) * wg
            y = (w_nodes[None, :] - m2[:, None]) / (2.0 * Broot)
            abar = m1[:, None] - p.sigma2_sq * w_nodes[None, :] / s2
            wgt = u_w[:, None] * ww[None, :] * geom
            if n_inner == 0:
                vals = {}
                for key in keys:
                    if key == "total":
                        vals[key] = _gauss_abs(abar, bstd)
                    elif key == 0:
                        vals[key] = _gauss_plus(abar, bstd)
                    else:
                        vals[key] = _gauss_minus(abar, bstd)
                    ests[key] += float(np.sum(wgt * vals[key]))
                continue
            if deterministic:
                vals = _vals_goe_det(abar, y, ghx, ghw, z2, z2w, Broot, bstd, keys)
                for key in keys:
                    ests[key] += float(np.sum(wgt * vals[key]))
            else:
                bad_count, eval_count = _mc_accumulate(
                    abar, y, wgt, batch.lam_goe, batch, Broot, bstd, keys, "goe",
                    ests, perdraw, bad_count, eval_count)

    for key in keys:
        ests[key] *= const
        if perdraw is not None:
            perdraw[key] *= const
    diag = {"tail_mass": tail_mass, "pathological": bad_count,
            "inner_evals": eval_count}
    return ests, perdraw, diag


def _mc_accumulate(par1, par2, wgt, lam, batch, Broot, bstd, keys, flavor,
                   ests, perdraw, bad_count, eval_count):
    """Chunked accumulation of node-weighted inner values over the CRN batch."""
    B = lam.shape[0]
    p1 = np.ravel(par1)
    p2 = np.ravel(par2)
    wts = np.ravel(wgt)
    chunk = max(1, (1 << 22) // B)
    for lo in range(0, p1.size, chunk):
        hi = min(lo + chunk, p1.size)
        if flavor == "goi":
            vals = _vals_goi_mc(p1[lo:hi], p2[lo:hi], lam, batch.z2, Broot, keys)
        else:
            vals = _vals_goe_mc(p1[lo:hi], p2[lo:hi], lam, batch.z2, Broot, bstd, keys)
        bad = vals.pop("_bad", None)
        if bad is not None:
            bad_count += int(bad.sum())
        eval_count += (hi - lo) * B
        wchunk = wts[lo:hi]
        for key in keys:
            node_mean = vals[key].mean(axis=1)
            ests[key] += float(wchunk @ node_mean)
            perdraw[key] += wchunk @ vals[key]
    return bad_count, eval_count


def shell_profile(f: StructureFunction, N: int, E, R1: float, R2: float,
                  flavor: str, budget: Optional[Budget] = None, k="all"):
    """Evaluate total and/or per-index counts over a shell in one pass.

    Returns {key: CountResult} with key 'total' and integer indices."""
    budget = budget or Budget()
    if not (0 <= R1 < R2 < math.inf):
        raise ValueError("need 0 <= R1 < R2 < inf")
    if N < 1:
        raise ValueError("N must be >= 1")
    keys = _keys_for(N, k)
    _precheck_shell(f, N, R1, R2, flavor)
    deterministic = (N - 1) <= 1

    if deterministic:
        prev = None
        level = 0
        while True:
            grids = _shell_grids(R1, R2, level, True)
            ests, _, diag = _shell_pass(f, N, E, R1, R2, keys, flavor, grids, None)
            if prev is not None:
                qerr = {key: abs(ests[key] - prev[key]) for key in keys}
                scale = max(max(abs(v) for v in ests.values()), 1e-12)
                if max(qerr.values()) <= budget.tol * scale or level >= budget.max_refine:
                    out = {}
                    for key in keys:
                        diag_k = dict(diag, level=level, inner="quadrature")
                        out[key] = CountResult(max(ests[key], 0.0), 0.0,
                                               f"shell-{flavor}", quad_error=qerr[key],
                                               diagnostics=diag_k)
                    return out
            prev = ests
            level += 1
    # Monte Carlo inner expectation with common random numbers
    B = int(budget.mc_samples)
    doublings = 0
    while True:
        batch = _draw_batch(N - 1, B, budget.seed, flavor)
        g0 = _shell_grids(R1, R2, 0, False)
        e0, _, _ = _shell_pass(f, N, E, R1, R2, keys, flavor, g0, batch)
        g1 = _shell_grids(R1, R2, 1, False)
        e1, perdraw, diag = _shell_pass(f, N, E, R1, R2, keys, flavor, g1, batch)
        if diag["pathological"] > _PATHOLOGICAL_FRACTION * diag["inner_evals"]:
            raise PathologicalSampleError(
                f"{diag['pathological']} of {diag['inner_evals']} inner evaluations hit "
                "the singular set")
        ses = {key: float(perdraw[key].std(ddof=1)) / math.sqrt(B) for key in keys}
        scale = max(max(abs(v) for v in e1.values()), 1e-12)
        if max(ses.values()) <= budget.tol * scale / 3.0 or doublings >= budget.max_doublings:
            out = {}
            for key in keys:
                diag_k = dict(diag, inner="mc", mc_samples=B)
                out[key] = CountResult(max(e1[key], 0.0), ses[key], f"shell-{flavor}",
                                       quad_error=abs(e1[key] - e0[key]),
                                       diagnostics=diag_k)
            return out
        B *= 2
        doublings += 1


def crt_shell_goi(f: StructureFunction, N: int, E, R1: float, R2: float,
                  k: Optional[int] = None, budget: Optional[Budget] = None) -> CountResult:
    """Shell count through the orthogonally invariant representation
    (arbitrary value set E; E=None means unrestricted)."""
    key = "total" if k is None else int(k)
    return shell_profile(f, N, E, R1, R2, "goi", budget, k=k)[key]


def crt_shell_goe(f: StructureFunction, N: int, E, R1: float, R2: float,
                  k: Optional[int] = None, budget: Optional[Budget] = None) -> CountResult:
    """Shell count through the GOE representation; requires the
    three-inequality condition on the shell radii."""
    key = "total" if k is None else int(k)
    return shell_profile(f, N, E, R1, R2, "goe", budget, k=k)[key]
