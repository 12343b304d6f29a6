"""Analytic conditions on structure functions and the joint field covariance.

Each check returns a :class:`ConditionReport` rather than raising: failures
are data.  Strict inequalities whose margin falls inside the indeterminate
band (|margin| < 1e-12) are reported as neither holding nor failing, since
boundary cases that are exact in closed form are float-fuzzy in practice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .structure import StructureFunction, eval_D, local_params, DegenerateFieldError

__all__ = [
    "ConditionReport",
    "INDETERMINATE_BAND",
    "check_smoothness",
    "nondeg_scalar",
    "nondeg_dimfree",
    "check_assumption3",
    "check_c_positive",
    "thm33_proof_margins",
    "sgoi_nondeg",
    "sgoi_nondeg_margins",
    "diag_covariance",
    "block_covariance",
    "d1pos_margin",
    "covariance_full",
    "default_r_grid",
    "scan_condition",
    "check_field",
]

INDETERMINATE_BAND = 1e-12


@dataclass
class ConditionReport:
    """Outcome of one condition: holds is None when inside the fuzzy band."""

    name: str
    holds: Optional[bool]
    margin: float
    witnesses: list = field(default_factory=list)  # (r, lhs, rhs) at probed radii

    @property
    def indeterminate(self) -> bool:
        return self.holds is None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "holds": self.holds,
            "margin": self.margin,
            "witnesses": [[float(a), float(b), float(c)] for a, b, c in self.witnesses],
        }


def _verdict(margin: float) -> Optional[bool]:
    if abs(margin) < INDETERMINATE_BAND:
        return None
    return bool(margin > 0)


# ---------------------------------------------------------------------------
# smoothness and nondegeneracy
# ---------------------------------------------------------------------------

def check_smoothness(f: StructureFunction) -> ConditionReport:
    """Fourth derivative at the origin exists, is finite and nonzero."""
    try:
        d4 = eval_D(f, 0.0, 4)
    except Exception:
        return ConditionReport("smoothness", False, -math.inf, [])
    if not math.isfinite(d4):
        return ConditionReport("smoothness", False, -math.inf, [(0.0, abs(d4), 0.0)])
    margin = abs(d4)
    return ConditionReport("smoothness", _verdict(margin), margin, [(0.0, abs(d4), 0.0)])


def nondeg_scalar(f: StructureFunction, N: int, r: float) -> float:
    """Determinant-ratio expression whose positivity is equivalent to the
    joint vector (field, gradient, Hessian) being nondegenerate at radius^2 = r."""
    if N < 1:
        raise ValueError("N must be a positive integer")
    d0 = eval_D(f, r, 0)
    d1 = eval_D(f, r, 1)
    d2 = eval_D(f, r, 2)
    dp0 = eval_D(f, 0.0, 1)
    dpp0 = eval_D(f, 0.0, 2)
    if dp0 <= 0:
        raise DegenerateFieldError(f"{f.name}: D'(0) = {dp0} must be positive")
    if dpp0 >= 0:
        raise DegenerateFieldError(f"{f.name}: D''(0) = {dpp0} must be negative")
    return (
        d0
        - d1 ** 2 * r / dp0
        + (N + 1) * d2 ** 2 * r ** 2 / ((N + 2) * dpp0)
        + 2.0 * r * d2 * (d1 - dp0) / ((N + 2) * dpp0)
        + N * (d1 - dp0) ** 2 / (2.0 * (N + 2) * dpp0)
    )


def nondeg_dimfree(f: StructureFunction, r: float) -> float:
    """Dimension-free lower bound; positivity implies nondeg_scalar > 0 for all N."""
    d0 = eval_D(f, r, 0)
    d1 = eval_D(f, r, 1)
    d2 = eval_D(f, r, 2)
    dp0 = eval_D(f, 0.0, 1)
    dpp0 = eval_D(f, 0.0, 2)
    if dp0 <= 0:
        raise DegenerateFieldError(f"{f.name}: D'(0) = {dp0} must be positive")
    if dpp0 >= 0:
        raise DegenerateFieldError(f"{f.name}: D''(0) = {dpp0} must be negative")
    return d0 - d1 ** 2 * r / dp0 + d2 ** 2 * r ** 2 / dpp0 + (d1 - dp0) ** 2 / (2.0 * dpp0)


# ---------------------------------------------------------------------------
# the three-inequality condition and its consequences
# ---------------------------------------------------------------------------

def check_assumption3(f: StructureFunction, r: float) -> ConditionReport:
    """All three inequalities -2D''(0) > (ar+b)b, -4D''(0) > (ar+b)ar, ab > 0."""
    p = local_params(f, math.sqrt(r), 0.0)
    dpp0 = p.dpp0
    a, b = p.alpha, p.beta
    m1 = -2.0 * dpp0 - (a * r + b) * b
    m2 = -4.0 * dpp0 - (a * r + b) * a * r
    m3 = a * b
    margin = min(m1, m2, m3)
    return ConditionReport(
        "assumption3", _verdict(margin), margin,
        [(r, -2.0 * dpp0, (a * r + b) * b),
         (r, -4.0 * dpp0, (a * r + b) * a * r),
         (r, a * b, 0.0)],
    )


def thm33_proof_margins(f: StructureFunction, r: float):
    """Margins (lhs - rhs) of the two inequalities that together give the
    first inequality of the three-inequality condition for the
    completely-monotone-derivative class."""
    d0 = eval_D(f, r, 0)
    d1 = eval_D(f, r, 1)
    d2 = eval_D(f, r, 2)
    dp0 = eval_D(f, 0.0, 1)
    dpp0 = eval_D(f, 0.0, 2)
    m1 = (-2.0 * dpp0 * (d0 + r * dp0 - 2.0 * r * d1)
          - (2.0 * r * dpp0 * (d1 - dp0) + (d1 - dp0) ** 2))
    m2 = (2.0 * r * dpp0 * (d1 - dp0) ** 2 / dp0
          - 2.0 * r * (d2 - dpp0) * (d1 - dp0))
    return m1, m2


def check_c_positive(f: StructureFunction, r: float) -> ConditionReport:
    """c > 0 and -4D''(0) > 2 beta^2 + alpha^2 r^2 (consequences of the
    three-inequality condition)."""
    p = local_params(f, math.sqrt(r), 0.0)
    m1 = p.c
    m2 = -4.0 * p.dpp0 - (2.0 * p.beta ** 2 + p.alpha ** 2 * r ** 2)
    margin = min(m1, m2)
    return ConditionReport(
        "c-positive", _verdict(margin), margin,
        [(r, p.c, 0.0),
         (r, -4.0 * p.dpp0, 2.0 * p.beta ** 2 + p.alpha ** 2 * r ** 2)],
    )


# ---------------------------------------------------------------------------
# spiked ensemble nondegeneracy
# ---------------------------------------------------------------------------

def sgoi_nondeg_margins(N: int, d1: float, d2: float, d3: float):
    """(lower-block margin, Schur-complement margin) of the diagonal covariance."""
    if N < 2:
        raise ValueError("the spiked ensemble needs N >= 2")
    m_block = d1 + 1.0 / (N - 1)
    if m_block <= 0:
        return m_block, -math.inf
    m_schur = 1.0 + d3 + (d1 + 2.0 * d2 - (N - 1) * d2 ** 2) / (1.0 + (N - 1) * d1)
    return m_block, m_schur


def sgoi_nondeg(N: int, d1: float, d2: float, d3: float) -> bool:
    """True iff the spiked ensemble SGOI(d1,d2,d3) of size N is nondegenerate."""
    m_block, m_schur = sgoi_nondeg_margins(N, d1, d2, d3)
    return bool(m_block > 0 and m_schur > 0)


def diag_covariance(N: int, d1: float, d2: float, d3: float) -> np.ndarray:
    """Covariance matrix of the diagonal entries (M_11, ..., M_NN)."""
    th = np.full((N, N), d1)
    th[0, 1:] = d1 + d2
    th[1:, 0] = d1 + d2
    np.fill_diagonal(th, 1.0 + d1)
    th[0, 0] = 1.0 + d1 + 2.0 * d2 + d3
    return th


def block_covariance(N: int, d1: float, d2: float, d3: float,
                     varsigma: float, vartheta: float) -> np.ndarray:
    """Covariance of (corner, scalar shift, inner diagonal entries) for the
    block construction of a spiked matrix; (N+1) x (N+1)."""
    m = N - 1
    xi = np.zeros((m + 2, m + 2))
    xi[0, 0] = 1.0 + d1 + 2.0 * d2 + d3
    xi[0, 1] = xi[1, 0] = varsigma
    xi[1, 1] = d1 - 2.0 * vartheta
    xi[0, 2:] = xi[2:, 0] = d1 + d2 - varsigma
    xi[1, 2:] = xi[2:, 1] = vartheta
    xi[2:, 2:] = np.eye(m)
    return xi


def d1pos_margin(N: int, d1: float, d2: float, d3: float, varsigma: float) -> float:
    """Sufficient-condition expression for the block construction with zero
    shift-to-diagonal coupling; positivity implies the block covariance is PD."""
    if d1 <= 0:
        raise ValueError("this sufficient condition applies for d1 > 0")
    return (1.0 + d1 + 2.0 * d2 + d3 - varsigma ** 2 / d1
            - (N - 1) * (d1 + d2 - varsigma) ** 2)


# ---------------------------------------------------------------------------
# full joint covariance of (H, grad H, Hess H)
# ---------------------------------------------------------------------------

def covariance_full(f: StructureFunction, N: int, x) -> np.ndarray:
    """Exact joint covariance of (H, dH_i, d2H_ij for i <= j) at the point x.

    Hessian entries are ordered diagonal-first: (11, 22, ..., NN, 12, 13, ...,
    (N-1)N), which keeps the Schur-complement structure of the nondegeneracy
    argument readable.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (N,):
        raise ValueError(f"x must be a point in R^{N}")
    r = float(x @ x)
    d0 = eval_D(f, r, 0)
    d1 = eval_D(f, r, 1)
    d2 = eval_D(f, r, 2)
    dp0 = eval_D(f, 0.0, 1)
    dpp0 = eval_D(f, 0.0, 2)

    pairs = [(i, i) for i in range(N)] + [(i, j) for i in range(N) for j in range(i + 1, N)]
    m = len(pairs)
    dim = 1 + N + m
    G = np.zeros((dim, dim))

    G[0, 0] = d0
    for i in range(N):
        G[0, 1 + i] = G[1 + i, 0] = d1 * x[i]
        G[1 + i, 1 + i] = dp0
    for a, (i, j) in enumerate(pairs):
        cov = 2.0 * d2 * x[i] * x[j] + (d1 - dp0) * (1.0 if i == j else 0.0)
        G[0, 1 + N + a] = G[1 + N + a, 0] = cov
    for a, (i, j) in enumerate(pairs):
        for bidx, (k, l) in enumerate(pairs):
            if bidx < a:
                continue
            val = -2.0 * dpp0 * (
                (1.0 if (j == l and i == k) else 0.0)
                + (1.0 if (i == l and k == j) else 0.0)
                + (1.0 if (k == l and i == j) else 0.0)
            )
            G[1 + N + a, 1 + N + bidx] = G[1 + N + bidx, 1 + N + a] = val
    return G


# ---------------------------------------------------------------------------
# grid scanning
# ---------------------------------------------------------------------------

def default_r_grid() -> np.ndarray:
    """60 log-spaced radii over [1e-6, 1e6] plus 40 uniform points in (0, 10]."""
    logs = np.logspace(-6, 6, 60)
    lins = np.linspace(0.25, 10.0, 40)
    return np.unique(np.concatenate([logs, lins]))


def scan_condition(f: StructureFunction, checker, grid=None, name=None) -> ConditionReport:
    """Apply a per-radius checker over a grid; the report keeps the minimum
    margin and the witnesses of the worst radius."""
    if grid is None:
        grid = default_r_grid()
    worst = None
    for r in grid:
        rep = checker(f, float(r))
        if worst is None or rep.margin < worst.margin:
            worst = rep
    verdict = _verdict(worst.margin)
    return ConditionReport(name or worst.name, verdict, worst.margin, worst.witnesses)


def check_field(f: StructureFunction, N: int, grid=None) -> list:
    """Full report set for a field: smoothness, nondegeneracy at every probed
    radius, the dimension-free bound, the three-inequality condition, and its
    c > 0 consequence."""
    if grid is None:
        grid = default_r_grid()
    reports = [check_smoothness(f)]

    def _nd(fl, r):
        v = nondeg_scalar(fl, N, r)
        return ConditionReport("nondegeneracy", _verdict(v), v, [(r, v, 0.0)])

    def _ndf(fl, r):
        v = nondeg_dimfree(fl, r)
        return ConditionReport("nondegeneracy-dimfree", _verdict(v), v, [(r, v, 0.0)])

    def _a3(fl, r):
        try:
            return check_assumption3(fl, r)
        except DegenerateFieldError:
            return ConditionReport("assumption3", False, -math.inf, [(r, 0.0, 0.0)])

    def _cp(fl, r):
        try:
            return check_c_positive(fl, r)
        except DegenerateFieldError:
            return ConditionReport("c-positive", False, -math.inf, [(r, 0.0, 0.0)])

    reports.append(scan_condition(f, _nd, grid))
    reports.append(scan_condition(f, _ndf, grid))
    reports.append(scan_condition(f, _a3, grid))
    reports.append(scan_condition(f, _cp, grid))
    return reports
