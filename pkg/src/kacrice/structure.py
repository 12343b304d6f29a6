"""Structure functions of Gaussian fields with isotropic increments.

A structure function D encodes the law of a centered Gaussian field H on
R^N (pinned at the origin) through E[(H(x)-H(y))^2] = D(||x-y||^2).  Three
evaluation paths are supported:

* ``bernstein``  -- D(r) = A r + sum_i w_i (1 - exp(-t_i r)) + integral
  pieces; valid in every dimension.  Derivatives pass under the sum.
* ``finite``     -- D(r) = A r + sum_i w_i (1 - K_N(sqrt(t_i r))) + ...,
  where K_N is the radial kernel (cosine in 1-d, normalized Bessel above);
  valid in dimension N and below.
* ``closed``     -- named formulas with hand-coded derivatives.

All evaluators accept scalars or numpy arrays of radii.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special
from scipy.integrate import quad

__all__ = [
    "DensityPiece",
    "SpectralRep",
    "StructureFunction",
    "LocalParams",
    "DegenerateFieldError",
    "eval_lambda",
    "eval_D",
    "local_params",
    "catalog",
    "by_name",
    "from_descriptor",
]

# absolute tolerance for spectral moment integrals over density pieces
QUAD_ABS_TOL = 1e-12
# crossover between the kernel power series and the Bessel routine, in x
_SERIES_MAX_TERMS = 500


class DegenerateFieldError(ValueError):
    """Raised when a conditioning variance is not strictly positive."""


# ---------------------------------------------------------------------------
# radial kernel K_N and its derivatives in r = x^2
# ---------------------------------------------------------------------------

def _phi_series(b: float, z: np.ndarray) -> np.ndarray:
    # 0F1(; b; -z/4) summed termwise; alternating, safe below the crossover
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    term = np.ones_like(z)
    for m in range(1, _SERIES_MAX_TERMS):
        term = term * (-z / 4.0) / (m * (b + m - 1.0))
        out += term
        if np.all(np.abs(term) <= 1e-18 * (np.abs(out) + 1e-30)):
            break
    return out


def _phi(N: float, r: np.ndarray) -> np.ndarray:
    """K_N(sqrt(r)) for r >= 0, i.e. the kernel as a function of squared distance."""
    r = np.asarray(r, dtype=float)
    x = np.sqrt(np.maximum(r, 0.0))
    cross = max(8.0, float(N))
    small = x < cross
    out = np.empty_like(r)
    if np.any(small):
        out[small] = _phi_series(N / 2.0, r[small])
    if np.any(~small):
        xs = x[~small]
        nu = (N - 2.0) / 2.0
        # 2^nu Gamma(N/2) J_nu(x) / x^nu, stable for large x
        lg = special.gammaln(N / 2.0) + nu * math.log(2.0)
        out[~small] = np.exp(lg - nu * np.log(xs)) * special.jv(nu, xs)
    return out


def _phi_deriv(N: int, r: np.ndarray, k: int) -> np.ndarray:
    """k-th derivative of r -> K_N(sqrt(r)).

    Differentiating the hypergeometric series term by term shifts the kernel
    dimension: d/dr K_N(sqrt r) = -K_{N+2}(sqrt r)/(2N), and so on.
    """
    if k == 0:
        return _phi(N, r)
    b = N / 2.0
    # (-1/4)^k / (b)_k
    poch = math.exp(special.gammaln(b + k) - special.gammaln(b))
    return ((-0.25) ** k / poch) * _phi(N + 2 * k, r)


def eval_lambda(N: int, x) -> float:
    """Radial kernel value: cos(x) in 1-d, normalized Bessel for N >= 2."""
    if int(N) != N or N < 1:
        raise ValueError(f"kernel dimension must be a positive integer, got {N}")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("kernel argument must be nonnegative")
    out = _phi(int(N), xa * xa)
    return float(out) if np.isscalar(x) or xa.ndim == 0 else out


# ---------------------------------------------------------------------------
# spectral representation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityPiece:
    """Power-law density coef * t^p on (a, b), a piece of the spectral measure."""

    a: float
    b: float
    p: float
    coef: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.a < self.b):
            raise ValueError(f"density piece needs 0 <= a < b, got ({self.a}, {self.b})")
        if self.coef <= 0:
            raise ValueError("density coefficient must be positive")

    def moment(self, k: int, r: float) -> float:
        """integral of t^k exp(-r t) over the piece (k >= 1), or the D-weight for k=0."""
        if k == 0:
            # integral of (1 - exp(-r t)) coef t^p dt
            f = lambda t: self.coef * (1.0 - math.exp(-r * t)) * t ** self.p
        else:
            f = lambda t: self.coef * math.exp(-r * t) * t ** (self.p + k)
        val, _ = quad(f, self.a, self.b, epsabs=QUAD_ABS_TOL, epsrel=1e-11, limit=200)
        return val

    def moment_kernel(self, N: int, k: int, r: float) -> float:
        """Same moments against the finite-N kernel instead of exp(-rt)."""
        if k == 0:
            f = lambda t: self.coef * (1.0 - float(_phi(N, np.array(r * t)))) * t ** self.p
        else:
            f = lambda t: -self.coef * float(_phi_deriv(N, np.array(r * t), k)) * t ** (self.p + k)
        val, _ = quad(f, self.a, self.b, epsabs=QUAD_ABS_TOL, epsrel=1e-11, limit=200)
        return val


@dataclass(frozen=True)
class SpectralRep:
    """Atoms + density pieces + linear coefficient of the spectral measure."""

    atoms: tuple = ()
    linear_coeff: float = 0.0
    density_pieces: tuple = ()

    def __post_init__(self):
        atoms = tuple((float(t), float(w)) for t, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "density_pieces", tuple(self.density_pieces))
        if self.linear_coeff < 0:
            raise ValueError("linear coefficient must be nonnegative")
        for t, w in atoms:
            if t <= 0 or w <= 0:
                raise ValueError(f"atom locations and weights must be positive, got ({t}, {w})")
        # integrability: sum w t/(1+t) + integral t/(1+t) density < inf
        total = sum(w * t / (1.0 + t) for t, w in atoms)
        for pc in self.density_pieces:
            val, _ = quad(lambda t: pc.coef * t ** (pc.p + 1) / (1.0 + t), pc.a, pc.b,
                          epsabs=QUAD_ABS_TOL, limit=200)
            total += val
        if not math.isfinite(total):
            raise ValueError("spectral measure fails the t/(1+t) integrability condition")


# ---------------------------------------------------------------------------
# structure function
# ---------------------------------------------------------------------------

KIND_BERNSTEIN = "bernstein"
KIND_FINITE = "finite"
KIND_CLOSED = "closed"


@dataclass(frozen=True)
class StructureFunction:
    """A structure function with evaluators for D, D', D'', D''', D''''."""

    name: str
    kind: str
    spectral: Optional[SpectralRep] = None
    kernel_dim: Optional[int] = None           # N of the finite-N kernel
    derivs: Optional[tuple] = None             # closed-form (D, D', ...) callables
    deriv_order_available: int = 4
    is_bernstein: bool = False                 # known completely-monotone-derivative member
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind in (KIND_BERNSTEIN, KIND_FINITE) and self.spectral is None:
            raise ValueError(f"kind {self.kind!r} requires a spectral representation")
        if self.kind == KIND_FINITE and (self.kernel_dim is None or self.kernel_dim < 1):
            raise ValueError("finite kind requires a positive kernel dimension")
        if self.kind == KIND_CLOSED and self.derivs is None:
            raise ValueError("closed kind requires hand-coded derivative callables")

    # -- evaluation ---------------------------------------------------------

    def D(self, r, order: int = 0):
        return eval_D(self, r, order)

    def descriptor(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.spectral is not None:
            d["atoms"] = [[t, w] for t, w in self.spectral.atoms]
            d["A"] = self.spectral.linear_coeff
            d["density"] = [
                {"a": pc.a, "b": pc.b, "p": pc.p, "coef": pc.coef}
                for pc in self.spectral.density_pieces
            ]
        if self.kernel_dim is not None:
            d["N"] = self.kernel_dim
        d.update(self.meta)
        return d


def eval_D(f: StructureFunction, r, order: int = 0):
    """Evaluate D^(order)(r); r may be a scalar or array, order in 0..4."""
    if order < 0 or order > f.deriv_order_available:
        raise ValueError(f"derivative order {order} not available (max {f.deriv_order_available})")
    ra = np.asarray(r, dtype=float)
    if np.any(ra < 0):
        raise ValueError("structure functions are defined for r >= 0")
    scalar = np.isscalar(r) or ra.ndim == 0
    ra = np.atleast_1d(ra)

    if f.kind == KIND_CLOSED:
        out = np.asarray(f.derivs[order](ra), dtype=float)
    elif f.kind == KIND_BERNSTEIN:
        out = _eval_bernstein(f.spectral, ra, order)
    else:
        out = _eval_finite(f.spectral, f.kernel_dim, ra, order)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{f.name}: non-finite derivative of order {order}")
    return float(out[0]) if scalar else out


def _eval_bernstein(sp: SpectralRep, r: np.ndarray, order: int) -> np.ndarray:
    out = np.zeros_like(r)
    if order == 0:
        out += sp.linear_coeff * r
        for t, w in sp.atoms:
            out += w * (-np.expm1(-t * r))
        for pc in sp.density_pieces:
            out += np.array([pc.moment(0, ri) for ri in r])
        return out
    sign = 1.0 if order % 2 == 1 else -1.0
    for t, w in sp.atoms:
        out += sign * w * t ** order * np.exp(-t * r)
    for pc in sp.density_pieces:
        out += sign * np.array([pc.moment(order, ri) for ri in r])
    if order == 1:
        out += sp.linear_coeff
    return out


def _eval_finite(sp: SpectralRep, N: int, r: np.ndarray, order: int) -> np.ndarray:
    out = np.zeros_like(r)
    if order == 0:
        out += sp.linear_coeff * r
        for t, w in sp.atoms:
            out += w * (1.0 - _phi(N, t * r))
        for pc in sp.density_pieces:
            out += np.array([pc.moment_kernel(N, 0, ri) for ri in r])
        return out
    for t, w in sp.atoms:
        out += -w * t ** order * _phi_deriv(N, t * r, order)
    for pc in sp.density_pieces:
        out += np.array([pc.moment_kernel(N, order, ri) for ri in r])
    if order == 1:
        out += sp.linear_coeff
    return out


# ---------------------------------------------------------------------------
# local parameters of the radially conditioned Hessian
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalParams:
    """Scalar bundle at radius rho and critical value u.

    m1, m2 are linear in u (coefficients stored separately so the affine map
    (u, y) -> abar can be re-evaluated); alpha, beta, sigma_Y depend on rho
    only.  d1, d2, d3 parametrize the spiked matrix model of the conditioned
    Hessian, c the orthogonally invariant block of its corner-conditioned law.
    """

    rho: float
    u: float
    dp0: float        # D'(0)
    dpp0: float       # D''(0)
    sigma_Y: float
    m1_coeff: float
    m2_coeff: float
    alpha: float
    beta: float
    sigma1_sq: float
    sigma2_sq: float
    d1: float
    d2: float
    d3: float
    c: float
    b2: float

    @property
    def m1(self) -> float:
        return self.u * self.m1_coeff

    @property
    def m2(self) -> float:
        return self.u * self.m2_coeff

    @property
    def sigma1(self) -> float:
        return math.sqrt(self.sigma1_sq) if self.sigma1_sq >= 0 else float("nan")

    @property
    def sigma2(self) -> float:
        return math.sqrt(self.sigma2_sq) if self.sigma2_sq >= 0 else float("nan")

    def abar(self, u, y):
        """Conditional mean of the corner entry given the scalar-shift value y."""
        m1 = u * self.m1_coeff
        m2 = u * self.m2_coeff
        s2sq = self.sigma2_sq
        denom = s2sq + self.alpha * self.beta * self.rho ** 2  # = -2 D''(0) - beta^2
        return m1 - s2sq * (np.sqrt(-4.0 * self.dpp0) * np.asarray(y) + m2) / denom

    def m3(self, u, y):
        """Scalar shift of the conditioned eigenvalue block."""
        m2 = u * self.m2_coeff
        slope = (self.d1 + self.d2) / (1.0 + self.d1 + 2.0 * self.d2 + self.d3)
        return slope * np.asarray(y) + m2 / (2.0 * math.sqrt(-self.dpp0))

    @property
    def var_corner(self) -> float:
        """Variance of the distinguished corner entry of the spiked model."""
        return 1.0 + self.d1 + 2.0 * self.d2 + self.d3


def local_params(f: StructureFunction, rho: float, u: float) -> LocalParams:
    """Derive the full scalar bundle at (rho, u)."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    r = rho * rho
    d0 = eval_D(f, r, 0)
    d1r = eval_D(f, r, 1)
    d2r = eval_D(f, r, 2)
    dp0 = eval_D(f, 0.0, 1)
    dpp0 = eval_D(f, 0.0, 2)
    if dp0 <= 0:
        raise DegenerateFieldError(f"{f.name}: D'(0) = {dp0} must be positive")
    if dpp0 >= 0:
        raise DegenerateFieldError(f"{f.name}: D''(0) = {dpp0} must be negative")
    sy2 = d0 - d1r ** 2 * r / dp0
    if sy2 <= 0:
        raise DegenerateFieldError(
            f"{f.name}: degenerate radial conditioning at r={r!r}: sigma_Y^2 = {sy2!r} <= 0")
    sy = math.sqrt(sy2)
    m1_coeff = (2.0 * d2r * r + d1r - dp0) / sy2
    m2_coeff = (d1r - dp0) / sy2
    alpha = 2.0 * d2r / sy
    beta = (d1r - dp0) / sy
    ar = alpha * r
    sigma1_sq = -4.0 * dpp0 - (ar + beta) * ar
    sigma2_sq = -2.0 * dpp0 - (ar + beta) * beta
    d1 = 0.5 + beta ** 2 / (4.0 * dpp0)
    d2 = alpha * beta * r / (4.0 * dpp0)
    d3 = alpha ** 2 * r ** 2 / (4.0 * dpp0)
    c = (d1 + d1 * d3 - d2 ** 2) / (1.0 + d1 + 2.0 * d2 + d3)
    b2 = -4.0 * dpp0 + 2.0 * dpp0 * alpha ** 2 * r ** 2 / (-2.0 * dpp0 - beta ** 2)
    return LocalParams(
        rho=rho, u=u, dp0=dp0, dpp0=dpp0, sigma_Y=sy,
        m1_coeff=m1_coeff, m2_coeff=m2_coeff, alpha=alpha, beta=beta,
        sigma1_sq=sigma1_sq, sigma2_sq=sigma2_sq,
        d1=d1, d2=d2, d3=d3, c=c, b2=b2,
    )


# ---------------------------------------------------------------------------
# named catalog
# ---------------------------------------------------------------------------

_POWER_EXP = 11.0 / 12.0


def _f1_deriv(k: int) -> Callable:
    if k == 0:
        return lambda r: (r + 1.0) ** _POWER_EXP - 1.0
    coef = 1.0
    for j in range(k):
        coef *= _POWER_EXP - j
    return lambda r: coef * (r + 1.0) ** (_POWER_EXP - k)


# f2(r) = integral_0^r (1 - cos sqrt(t))/t dt.  Taylor coefficients follow
# from the cosine series: f2(r) = sum_{m>=1} (-1)^(m+1) r^m / (m (2m)!).
_F2_SERIES_CUT = 1.0
_F2_SERIES_M = 24


def _f2_series(r: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(r)
    for m in range(max(1, k), _F2_SERIES_M + 1):
        c = (-1.0) ** (m + 1) / (m * math.factorial(2 * m))
        # k-th derivative of r^m
        fall = 1.0
        for j in range(k):
            fall *= m - j
        out += c * fall * r ** (m - k)
    return out


def _f2_eval(r: np.ndarray, k: int) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    small = r < _F2_SERIES_CUT
    if np.any(small):
        out[small] = _f2_series(r[small], k)
    big = ~small
    if np.any(big):
        rb = r[big]
        s = np.sqrt(rb)
        if k == 0:
            # 2*Cin(sqrt r) = 2*gamma + log r - 2*Ci(sqrt r)
            _, ci = special.sici(s)
            out[big] = 2.0 * np.euler_gamma + np.log(rb) - 2.0 * ci
        elif k == 1:
            out[big] = (1.0 - np.cos(s)) / rb
        elif k == 2:
            out[big] = (s * np.sin(s) + 2.0 * np.cos(s) - 2.0) / (2.0 * rb ** 2)
        elif k == 3:
            out[big] = ((rb - 8.0) * np.cos(s) - 5.0 * s * np.sin(s) + 8.0) / (4.0 * rb ** 3)
        elif k == 4:
            out[big] = ((24.0 - 4.5 * rb) * np.cos(s)
                        + 0.5 * (33.0 - rb) * s * np.sin(s) - 24.0) / (4.0 * rb ** 4)
        else:
            raise ValueError("f2 derivatives available up to order 4")
    return out


def _f2_deriv(k: int) -> Callable:
    return lambda r: _f2_eval(np.asarray(r, dtype=float), k)


def _combo_deriv(parts: Sequence, k: int) -> Callable:
    # parts: list of (weight, deriv-factory)
    funcs = [(w, fac(k)) for w, fac in parts]
    return lambda r: sum(w * fn(r) for w, fn in funcs)


def _closed(name: str, parts, is_bernstein=False, meta=None) -> StructureFunction:
    derivs = tuple(_combo_deriv(parts, k) for k in range(5))
    return StructureFunction(name=name, kind=KIND_CLOSED, derivs=derivs,
                             is_bernstein=is_bernstein, meta=meta or {})


def make_ex2(eps: float) -> StructureFunction:
    """The mixed family f1 + eps*f2, valid in 1-d but not in every dimension."""
    if not (0.0 < eps <= 0.125):
        raise ValueError("ex2 requires eps in (0, 1/8]")
    return _closed(f"ex2({eps:g})", [(1.0, _f1_deriv), (eps, _f2_deriv)],
                   meta={"eps": eps, "family": "ex2"})


def catalog() -> list:
    """Named structure functions used throughout the test and CLI surfaces."""
    entries = [
        StructureFunction(
            name="exp1", kind=KIND_BERNSTEIN,
            spectral=SpectralRep(atoms=((1.0, 1.0),)), is_bernstein=True),
        StructureFunction(
            name="exp-mix", kind=KIND_BERNSTEIN,
            spectral=SpectralRep(atoms=((0.5, 0.6), (2.0, 0.3), (8.0, 0.1))),
            is_bernstein=True),
        StructureFunction(
            name="linear-plus-exp", kind=KIND_BERNSTEIN,
            spectral=SpectralRep(atoms=((1.0, 1.0),), linear_coeff=0.5),
            is_bernstein=True),
        _closed("power", [(1.0, _f1_deriv)], is_bernstein=True),
        make_ex2(0.125),
        _closed("f2", [(1.0, _f2_deriv)]),
        # f2 again through its spectral route: density 1/t on (0,1) against the
        # 1-d cosine kernel; exercises the finite-N evaluation path.
        StructureFunction(
            name="f2-bessel", kind=KIND_FINITE, kernel_dim=1,
            spectral=SpectralRep(density_pieces=(DensityPiece(a=0.0, b=1.0, p=-1.0),))),
    ]
    return entries


def by_name(name: str) -> StructureFunction:
    """Look up a catalog member; 'ex2(<eps>)' accepts any eps in (0, 1/8]."""
    for f in catalog():
        if f.name == name:
            return f
    if name.startswith("ex2(") and name.endswith(")"):
        return make_ex2(float(name[4:-1]))
    raise KeyError(f"unknown structure function {name!r}")


def from_descriptor(desc: dict) -> StructureFunction:
    """Build a structure function from its JSON descriptor."""
    if "kind" not in desc and "name" in desc:
        return by_name(desc["name"])
    kind = desc["kind"]
    if kind == KIND_CLOSED:
        return by_name(desc["name"])
    pieces = tuple(DensityPiece(a=p["a"], b=p["b"], p=p["p"], coef=p.get("coef", 1.0))
                   for p in desc.get("density", ()))
    sp = SpectralRep(atoms=tuple((t, w) for t, w in desc.get("atoms", ())),
                     linear_coeff=desc.get("A", 0.0), density_pieces=pieces)
    if kind == KIND_BERNSTEIN:
        return StructureFunction(name=desc.get("name", "custom"), kind=kind, spectral=sp,
                                 is_bernstein=desc.get("bernstein", True))
    if kind == KIND_FINITE:
        return StructureFunction(name=desc.get("name", "custom"), kind=kind, spectral=sp,
                                 kernel_dim=int(desc["N"]))
    raise ValueError(f"unknown structure function kind {kind!r}")
