"""Piecewise-smooth systems and the pointwise algebra on the switching surface.

A :class:`PwsSystem` holds two smooth vector fields joined across the zero
set of a scalar switching function ``sigma``::

    dx/dt = f_plus(x)   if sigma(x) > 0
    dx/dt = f_minus(x)  if sigma(x) < 0

On ``sigma = 0`` the motion is closed by the convex combination
``lam * f_plus + (1 - lam) * f_minus``. Everything in this module is a pure
function of its inputs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateSlidingError, EvaluationError, OffSurfaceError

VectorField = Callable[[np.ndarray], np.ndarray]
ScalarField = Callable[[np.ndarray], float]

EPS_TAN = 1e-9
EPS_DEG = 1e-12
SURFACE_BAND = 1e-8


class Branch(str, enum.Enum):
    PLUS = "plus"
    MINUS = "minus"

    @property
    def sign(self) -> int:
        return 1 if self is Branch.PLUS else -1

    @property
    def other(self) -> "Branch":
        return Branch.MINUS if self is Branch.PLUS else Branch.PLUS

    @classmethod
    def coerce(cls, value) -> "Branch":
        if isinstance(value, Branch):
            return value
        text = str(value).strip().lower()
        if text in ("+", "plus", "up", "1"):
            return cls.PLUS
        if text in ("-", "minus", "down", "-1"):
            return cls.MINUS
        raise ValueError(f"unknown branch {value!r}")


class SurfaceRegime(str, enum.Enum):
    CROSSING = "crossing"
    ATTRACTING_SLIDING = "attracting_sliding"
    REPELLING_SLIDING = "repelling_sliding"
    TANGENCY_PLUS = "tangency_plus"
    TANGENCY_MINUS = "tangency_minus"
    DOUBLE_TANGENCY = "double_tangency"

    @property
    def is_sliding(self) -> bool:
        return self in (SurfaceRegime.ATTRACTING_SLIDING, SurfaceRegime.REPELLING_SLIDING)


@dataclass(frozen=True)
class NormalData:
    """Normal components of both fields at a point, with the sliding coefficient.

    ``lambda_s`` is ``None`` when ``h_minus - h_plus`` vanishes.
    """

    h_plus: float
    h_minus: float
    lambda_s: Optional[float]
    point: np.ndarray

    @property
    def scale(self) -> float:
        return abs(self.h_plus) + abs(self.h_minus)


def _norm(v) -> float:
    if not isinstance(v, np.ndarray) or v.ndim != 1:
        v = np.ravel(v)
    return math.sqrt(float(v @ v))


def _finite_vector(name: str, x: np.ndarray, value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    # the square sum is finite unless an entry is not (or it overflows)
    if not math.isfinite(float(arr.ravel() @ arr.ravel())) and not np.isfinite(arr).all():
        raise EvaluationError(name, x, value)
    return arr


@dataclass(frozen=True, eq=False)
class PwsSystem:
    """A Filippov system with a single switching surface.

    Parameters
    ----------
    dim : int
        State dimension, at least 2.
    f_plus, f_minus : callable
        Smooth fields used above and below the surface.
    sigma : callable
        Switching function; the surface is ``sigma(x) = 0``.
    grad_sigma : callable, optional
        Gradient of ``sigma``. Central differences are used when omitted.
    lie2_plus, lie2_minus : callable, optional
        Analytic second Lie derivatives ``(f.grad)^2 sigma``; finite
        differences are used when omitted.
    """

    dim: int
    f_plus: VectorField
    f_minus: VectorField
    sigma: ScalarField
    grad_sigma: Optional[VectorField] = None
    name: str = "custom"
    lie2_plus: Optional[ScalarField] = None
    lie2_minus: Optional[ScalarField] = None
    landmarks: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if int(self.dim) < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")

    def field(self, branch: Branch | str, x) -> np.ndarray:
        branch = Branch.coerce(branch)
        x = np.asarray(x, dtype=float)
        fn = self.f_plus if branch is Branch.PLUS else self.f_minus
        return _finite_vector(f"f_{branch.value}", x, fn(x))

    def sigma_value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        value = float(self.sigma(x))
        if not np.isfinite(value):
            raise EvaluationError("sigma", x, value)
        return value

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad_sigma is not None:
            return _finite_vector("grad_sigma", x, self.grad_sigma(x))
        return central_gradient(self.sigma, x)

    def normal(self, branch: Branch | str, x) -> float:
        """Normal component ``f.grad(sigma)`` of one branch."""
        return float(self.field(branch, x) @ self.gradient(x))

    def lie2(self, branch: Branch | str, x) -> Optional[float]:
        branch = Branch.coerce(branch)
        fn = self.lie2_plus if branch is Branch.PLUS else self.lie2_minus
        if fn is None:
            return None
        return float(fn(np.asarray(x, dtype=float)))

    def surface_band(self, x) -> float:
        return SURFACE_BAND * (1.0 + _norm(x))

    def tangency_tol(self, branch: Branch | str, x, eps_tan: float = EPS_TAN) -> float:
        """Band on ``|h|`` inside which a branch counts as tangent at ``x``."""
        f = self.field(branch, x)
        return eps_tan * _norm(f) * _norm(self.gradient(x))


def central_gradient(sigma: ScalarField, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    step = 1e-6 * (1.0 + _norm(x))
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (float(sigma(x + e)) - float(sigma(x - e))) / (2.0 * step)
    if not np.all(np.isfinite(grad)):
        raise EvaluationError("grad_sigma", x, grad)
    return grad


def sliding_coefficient(h_plus: float, h_minus: float, eps_deg: float = EPS_DEG) -> Optional[float]:
    denom = h_minus - h_plus
    if denom == 0.0 or abs(denom) <= eps_deg * (abs(h_plus) + abs(h_minus)):
        return None
    return h_minus / denom


def normal_components(sys: PwsSystem, x, eps_deg: float = EPS_DEG) -> NormalData:
    x = np.asarray(x, dtype=float)
    g = sys.gradient(x)
    h_plus = float(sys.field(Branch.PLUS, x) @ g)
    h_minus = float(sys.field(Branch.MINUS, x) @ g)
    return NormalData(h_plus, h_minus, sliding_coefficient(h_plus, h_minus, eps_deg), x)


def combined_field(sys: PwsSystem, x, lam: float) -> np.ndarray:
    """Element ``lam*f_plus + (1-lam)*f_minus`` of the inclusion for any real ``lam``.

    Values outside ``[0, 1]`` are exposed for diagnostics only; integration
    never selects them.
    """
    x = np.asarray(x, dtype=float)
    return lam * sys.field(Branch.PLUS, x) + (1.0 - lam) * sys.field(Branch.MINUS, x)


def sliding_field(sys: PwsSystem, x, eps_deg: float = EPS_DEG, lambda_s: float | None = None) -> np.ndarray:
    """Filippov sliding vector at ``x``.

    Evaluated as ``(h_minus*f_plus - h_plus*f_minus) / (h_minus - h_plus)``, which
    is algebraically the convex combination with weight ``lambda_s`` and keeps
    the normal component at roundoff level even when ``lambda_s`` is large.
    Passing ``lambda_s`` skips the normal computation and uses that weight.
    """
    x = np.asarray(x, dtype=float)
    fp = sys.field(Branch.PLUS, x)
    fm = sys.field(Branch.MINUS, x)
    if lambda_s is not None:
        return lambda_s * fp + (1.0 - lambda_s) * fm
    g = sys.gradient(x)
    h_plus = float(fp @ g)
    h_minus = float(fm @ g)
    if sliding_coefficient(h_plus, h_minus, eps_deg) is None:
        raise DegenerateSlidingError(
            f"sliding coefficient undefined at x={x!r} (h_plus={h_plus!r}, h_minus={h_minus!r})"
        )
    return (h_minus * fp - h_plus * fm) / (h_minus - h_plus)


def classify_normals(h_plus: float, h_minus: float, tol_plus: float, tol_minus: float) -> SurfaceRegime:
    plus_zero = abs(h_plus) <= tol_plus
    minus_zero = abs(h_minus) <= tol_minus
    if plus_zero and minus_zero:
        return SurfaceRegime.DOUBLE_TANGENCY
    if plus_zero:
        return SurfaceRegime.TANGENCY_PLUS
    if minus_zero:
        return SurfaceRegime.TANGENCY_MINUS
    if h_plus * h_minus > 0.0:
        return SurfaceRegime.CROSSING
    if h_plus < 0.0:
        return SurfaceRegime.ATTRACTING_SLIDING
    return SurfaceRegime.REPELLING_SLIDING


def classify_surface_point(
    sys: PwsSystem, x, eps_tan: float = EPS_TAN, band: float | None = None
) -> SurfaceRegime:
    x = np.asarray(x, dtype=float)
    band = sys.surface_band(x) if band is None else band
    s = sys.sigma_value(x)
    if abs(s) > band:
        raise OffSurfaceError(f"|sigma(x)|={abs(s):.3e} exceeds surface band {band:.3e} at x={x!r}")
    nd = normal_components(sys, x)
    return classify_normals(
        nd.h_plus,
        nd.h_minus,
        sys.tangency_tol(Branch.PLUS, x, eps_tan),
        sys.tangency_tol(Branch.MINUS, x, eps_tan),
    )


def quadratic_tangency_check(sys: PwsSystem, x, branch: Branch | str) -> float:
    """Second Lie derivative ``(f.grad)^2 sigma`` of one branch at ``x``.

    Uses the system's analytic expression when it has one, otherwise a
    central difference of the normal component along the field direction.
    Zero means the tangency is not quadratic; the caller decides what to do.
    """
    branch = Branch.coerce(branch)
    x = np.asarray(x, dtype=float)
    exact = sys.lie2(branch, x)
    if exact is not None:
        return exact
    f = sys.field(branch, x)
    speed = _norm(f)
    if speed == 0.0:
        return 0.0
    ds = 1e-5 * (1.0 + _norm(x)) / speed
    return (sys.normal(branch, x + ds * f) - sys.normal(branch, x - ds * f)) / (2.0 * ds)


def departs(sys: PwsSystem, x, branch: Branch | str, eps_tan: float = EPS_TAN) -> bool:
    """Whether releasing onto ``branch`` at surface point ``x`` leaves the surface.

    Requires the branch's normal component to carry the orbit into its own
    half-space, or, at a tangency, a curvature of that sign.
    """
    branch = Branch.coerce(branch)
    h = sys.normal(branch, x)
    if abs(h) > sys.tangency_tol(branch, x, eps_tan):
        return branch.sign * h > 0.0
    return branch.sign * quadratic_tangency_check(sys, x, branch) > 0.0
