"""Brute-force verification by direct field simulation.

Draws exact Gaussian field realizations on a lattice (dense covariance
factorization, desk scale N in {1, 2}), detects critical points by gradient
sign changes with spline-Newton polish, classifies them by Hessian index,
and averages counts over realizations for comparison against the integral
representations.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .structure import StructureFunction, eval_D
from .streams import stream

__all__ = [
    "FieldSample",
    "FieldSampler",
    "CriticalPointRecord",
    "sample_field",
    "count_critical",
    "mc_crt",
]

_MAX_DENSE_POINTS = 4200
_JITTER_BUDGET = 1e-10
_NEWTON_MAX_ITER = 25
_DEDUP_FACTOR = 0.5          # dedup radius = factor * h
_FLAT_EIG_FACTOR = 1e-8      # |eigenvalue| below this * scale -> unclassified


@dataclass
class FieldSample:
    """A gridded realization: lattice axes, values, and provenance."""

    N: int
    axes: tuple                      # per-axis lattice coordinates
    values: np.ndarray               # (n1,) or (n1, n2)
    h: float
    realization_seed: Optional[tuple] = None
    angle: float = 0.0               # physical rotation of the lattice frame

    @classmethod
    def from_function(cls, fn: Callable, N: int, half_width: float, h: float) -> "FieldSample":
        """Deterministic sample built from an analytic surface (for testing
        the detector against known critical sets)."""
        ax = _axis(half_width, h)
        if N == 1:
            vals = np.asarray([fn(np.array([x])) for x in ax], dtype=float)
            return cls(N=1, axes=(ax,), values=vals, h=h)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        vals = np.asarray(fn(np.stack([xx, yy], axis=-1)), dtype=float)
        return cls(N=2, axes=(ax, ax), values=vals, h=h)


@dataclass
class CriticalPointRecord:
    location: np.ndarray
    value: float
    index: int
    refinement_residual: float
    unclassified: bool = False


def _axis(half_width: float, h: float) -> np.ndarray:
    m = int(math.ceil(half_width / h))
    return h * (np.arange(2 * m + 1) - m)


class FieldSampler:
    """Exact lattice sampler for the pinned field with kernel
    C(x, y) = (D(|x|^2) + D(|y|^2) - D(|x-y|^2)) / 2.

    The covariance factor is computed once and reused across realizations.
    """

    def __init__(self, f: StructureFunction, N: int, half_width: float, h: float,
                 angle: float = 0.0):
        if N not in (1, 2):
            raise ValueError("dense simulation supports N in {1, 2}")
        self.f = f
        self.N = N
        self.h = float(h)
        self.angle = float(angle)
        ax = _axis(half_width, h)
        self.axes = (ax,) if N == 1 else (ax, ax)
        if N == 1:
            pts = ax[:, None]
        else:
            xx, yy = np.meshgrid(ax, ax, indexing="ij")
            pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
        if len(pts) > _MAX_DENSE_POINTS:
            raise ValueError(
                f"grid has {len(pts)} points; dense factorization is capped at "
                f"{_MAX_DENSE_POINTS} (increase h or shrink the box)")
        if angle != 0.0:
            if N != 2:
                raise ValueError("lattice rotation only meaningful for N = 2")
            ca, sa = math.cos(angle), math.sin(angle)
            rot = np.array([[ca, -sa], [sa, ca]])
            pts = pts @ rot.T
        self.points = pts

        sq = np.einsum("ij,ij->i", pts, pts)
        gram = pts @ pts.T
        pair_sq = np.clip(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0, None)
        dv = eval_D(self.f, sq)
        dpair = eval_D(self.f, pair_sq.ravel()).reshape(pair_sq.shape)
        kern = 0.5 * (dv[:, None] + dv[None, :] - dpair)

        w, q = np.linalg.eigh(kern)
        scale = max(float(np.trace(kern)) / len(pts), 1e-30)
        if w.min() < -_JITTER_BUDGET * scale * len(pts):
            raise ValueError(
                f"kernel matrix not positive semidefinite beyond jitter budget: "
                f"worst eigenvalue {w.min():.3e} at scale {scale:.3e}")
        self._factor = q * np.sqrt(np.clip(w, 0.0, None))
        self.grad_scale = math.sqrt(eval_D(self.f, 0.0, 1))

    def sample(self, rng: np.random.Generator, seed_tag=None) -> FieldSample:
        z = rng.standard_normal(self._factor.shape[1])
        vals = self._factor @ z
        shape = tuple(len(a) for a in self.axes)
        return FieldSample(N=self.N, axes=self.axes, values=vals.reshape(shape),
                           h=self.h, realization_seed=seed_tag, angle=self.angle)

    def sample_batch(self, rng: np.random.Generator, reps: int) -> np.ndarray:
        z = rng.standard_normal((self._factor.shape[1], reps))
        return (self._factor @ z).T


def sample_field(f: StructureFunction, N: int, half_width: float, h: float,
                 rng: np.random.Generator) -> FieldSample:
    """One exact realization on the lattice (factorizes the kernel each call;
    use FieldSampler directly to amortize over repetitions)."""
    return FieldSampler(f, N, half_width, h).sample(rng)


# ---------------------------------------------------------------------------
# critical point detection
# ---------------------------------------------------------------------------

def _detect_1d(sample: FieldSample, R1: float, R2: float) -> list:
    ax = sample.axes[0]
    sp = CubicSpline(ax, sample.values)
    dsp = sp.derivative()
    roots = dsp.roots(extrapolate=False)
    recs = []
    scale = max(float(np.abs(sample.values).max()), 1e-30)
    for x in np.atleast_1d(roots):
        if not (R1 < abs(x) < R2):
            continue
        h2 = float(sp(x, 2))
        flat = abs(h2) < _FLAT_EIG_FACTOR * scale
        recs.append(CriticalPointRecord(
            location=np.array([x]), value=float(sp(x)),
            index=(1 if h2 < 0 else 0), refinement_residual=abs(float(dsp(x))),
            unclassified=flat))
    return _dedup(recs, sample.h)


def _detect_2d(sample: FieldSample, R1: float, R2: float) -> list:
    ax, ay = sample.axes
    sp = RectBivariateSpline(ax, ay, sample.values, kx=3, ky=3, s=0)
    gx = sp(ax, ay, dx=1, dy=0)
    gy = sp(ax, ay, dx=0, dy=1)

    def corners(a):
        return a[:-1, :-1], a[1:, :-1], a[:-1, 1:], a[1:, 1:]

    cx = corners(gx)
    cy = corners(gy)
    sign_x = (np.minimum.reduce(cx) <= 0) & (np.maximum.reduce(cx) >= 0)
    sign_y = (np.minimum.reduce(cy) <= 0) & (np.maximum.reduce(cy) >= 0)
    cells = np.argwhere(sign_x & sign_y)

    gscale = max(float(np.sqrt(np.mean(gx ** 2 + gy ** 2))), 1e-30)
    vscale = max(float(np.abs(sample.values).max()), 1e-30)
    h = sample.h
    lo = np.array([ax[0], ay[0]])
    hi = np.array([ax[-1], ay[-1]])
    recs = []
    for i, j in cells:
        x = np.array([ax[i] + 0.5 * h, ay[j] + 0.5 * h])
        ok, x, res = _newton_polish(sp, x, lo, hi, 1e-9 * gscale)
        if not ok:
            continue
        r = float(np.hypot(x[0], x[1]))
        if not (R1 < r < R2):
            continue
        hxx = float(sp(x[0], x[1], dx=2, dy=0))
        hyy = float(sp(x[0], x[1], dx=0, dy=2))
        hxy = float(sp(x[0], x[1], dx=1, dy=1))
        eig = np.linalg.eigvalsh(np.array([[hxx, hxy], [hxy, hyy]]))
        flat = bool(np.min(np.abs(eig)) < _FLAT_EIG_FACTOR * vscale)
        recs.append(CriticalPointRecord(
            location=x, value=float(sp(x[0], x[1])),
            index=int(np.sum(eig < 0)), refinement_residual=res,
            unclassified=flat))
    return _dedup(recs, h)


def _newton_polish(sp, x, lo, hi, gtol):
    def grad(p):
        return np.array([float(sp(p[0], p[1], dx=1, dy=0)),
                         float(sp(p[0], p[1], dx=0, dy=1))])

    g = grad(x)
    gn = float(np.linalg.norm(g))
    for _ in range(_NEWTON_MAX_ITER):
        if gn <= gtol:
            return True, x, gn
        hxx = float(sp(x[0], x[1], dx=2, dy=0))
        hyy = float(sp(x[0], x[1], dx=0, dy=2))
        hxy = float(sp(x[0], x[1], dx=1, dy=1))
        hess = np.array([[hxx, hxy], [hxy, hyy]])
        try:
            step = np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            return False, x, gn
        # damp: halve the step while the residual grows
        t = 1.0
        for _ in range(5):
            xn = np.clip(x - t * step, lo, hi)
            g_new = grad(xn)
            gn_new = float(np.linalg.norm(g_new))
            if gn_new < gn:
                break
            t *= 0.5
        else:
            return gn <= 10 * gtol, x, gn
        x, g, gn = xn, g_new, gn_new
    return gn <= 10 * gtol, x, gn


def _dedup(recs: list, h: float) -> list:
    out = []
    for rec in sorted(recs, key=lambda r: r.refinement_residual):
        if all(np.linalg.norm(rec.location - o.location) > _DEDUP_FACTOR * h for o in out):
            out.append(rec)
    return out


def count_critical(sample: FieldSample, R1: float, R2: float) -> list:
    """Detect, polish, classify and deduplicate critical points whose polished
    location lies in the open shell R1 < |x| < R2."""
    if not (0 <= R1 < R2):
        raise ValueError("need 0 <= R1 < R2")
    if sample.N == 1:
        return _detect_1d(sample, R1, R2)
    return _detect_2d(sample, R1, R2)


# ---------------------------------------------------------------------------
# Monte Carlo comparison runs
# ---------------------------------------------------------------------------

def _value_in(value: float, E) -> bool:
    if E is None:
        return True
    return any(lo <= value <= hi for lo, hi in E)


def mc_crt(f: StructureFunction, N: int, R1: float, R2: float, E=None,
           reps: int = 400, h: Optional[float] = None, seed: int = 0,
           threads: int = 1, angle: float = 0.0) -> dict:
    """Average critical point counts per index over independent realizations.

    Returns {"mean": {...}, "stderr": {...}, "counts": per-rep table, ...}.
    """
    corr_len = math.sqrt(eval_D(f, 0.0, 1) / abs(eval_D(f, 0.0, 2)))
    if h is None:
        h = corr_len / 12.0
        # respect the dense-solver cap
        while (2 * math.ceil((R2 + 3 * h) / h) + 1) ** N > _MAX_DENSE_POINTS:
            h *= 1.25
    if corr_len < 6 * h:
        raise ValueError(
            f"grid too coarse: correlation length {corr_len:.3g} spans fewer than "
            f"6 cells at h={h:.3g}")
    sampler = FieldSampler(f, N, R2 + 3 * h, h, angle=angle)

    def one(rep: int):
        rng = stream(seed, 31, rep)
        smp = sampler.sample(rng, seed_tag=(seed, rep))
        recs = count_critical(smp, R1, R2)
        row = np.zeros(N + 2, dtype=int)   # per index + unclassified tail slot
        for rec in recs:
            if not _value_in(rec.value, E):
                continue
            if rec.unclassified:
                row[N + 1] += 1
            else:
                row[rec.index] += 1
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, range(reps)))
    else:
        rows = [one(rep) for rep in range(reps)]
    table = np.array(rows)
    totals = table.sum(axis=1)
    mean = {k: float(table[:, k].mean()) for k in range(N + 1)}
    stderr = {k: float(table[:, k].std(ddof=1)) / math.sqrt(reps) for k in range(N + 1)}
    mean["total"] = float(totals.mean())
    stderr["total"] = float(totals.std(ddof=1)) / math.sqrt(reps)
    return {
        "mean": mean,
        "stderr": stderr,
        "unclassified": int(table[:, N + 1].sum()),
        "reps": reps,
        "h": h,
        "seed": seed,
        "counts": table[:, : N + 1],
    }
