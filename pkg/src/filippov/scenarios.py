"""Built-in systems: the superconducting resonator, the planar double fold and
the forced negatively damped oscillator, plus small fixtures and smoothed
variants."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .system import Branch, PwsSystem


def _unit(dim: int, axis: int) -> np.ndarray:
    e = np.zeros(dim)
    e[axis] = 1.0
    return e


# ---------------------------------------------------------------------------
# superconducting resonator


@dataclass(frozen=True)
class ResonatorParams:
    """Parameters of the resonator ``dB/dt = L(T) B - i``, ``eps dT/dt = s(T)|B|^2 - T``.

    ``eps`` multiplies ``dT/dt``. The default 0.01 makes the temperature
    100 times faster than the current amplitude; ``eps = 100`` slows it
    down instead, and then orbits from the usual initial point cannot reach
    ``T = 1`` within 50 time units.
    """

    eps: float = 0.01
    s_plus: float = 3.891
    s_minus: float = 1.297
    lambda_minus: complex = complex(-0.2, 1.0)
    lambda_plus_re: float = -0.5
    mu: float = 1.0

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def lambda_plus(self) -> complex:
        return complex(self.lambda_plus_re, self.mu)

    def fixed_point_above(self) -> np.ndarray:
        """Equilibrium of the ``T > 1`` field: ``B = i / L+``, ``T = s+ |B|^2``."""
        b = 1j / self.lambda_plus
        return np.array([b.real, b.imag, self.s_plus * abs(b) ** 2])


RESONATOR_IP = np.array([0.8, -0.4, 3.0])


def make_resonator(params: ResonatorParams | None = None, **overrides) -> PwsSystem:
    """Three real coordinates ``(Re B, Im B, T)``; switching function ``T - 1``.

    The ``+`` field, with ``(L+, s+)``, applies for ``T > 1``.
    """
    p = _with(params or ResonatorParams(), overrides)
    eps = p.eps

    def make_field(lam: complex, s: float):
        lr, li = lam.real, lam.imag

        def f(x):
            a, b, T = x
            return np.array([lr * a - li * b, lr * b + li * a - 1.0, (s * (a * a + b * b) - T) / eps])

        def lie2(x):
            a, b, T = x
            da, db = lr * a - li * b, lr * b + li * a - 1.0
            dT = (s * (a * a + b * b) - T) / eps
            return (2.0 * s * (a * da + b * db) - dT) / eps

        return f, lie2

    fp, lp = make_field(p.lambda_plus, p.s_plus)
    fm, lm = make_field(p.lambda_minus, p.s_minus)
    grad = _unit(3, 2)
    return PwsSystem(
        dim=3,
        f_plus=fp,
        f_minus=fm,
        sigma=lambda x: x[2] - 1.0,
        grad_sigma=lambda x: grad,
        name="resonator",
        lie2_plus=lp,
        lie2_minus=lm,
        landmarks={
            "fixed_point_above": p.fixed_point_above(),
            "initial_point": RESONATOR_IP.copy(),
            "tangency_radius_sq_plus": 1.0 / p.s_plus,
            "tangency_radius_sq_minus": 1.0 / p.s_minus,
        },
        params=_as_dict(p),
    )


# ---------------------------------------------------------------------------
# planar double fold


def make_dbfold() -> PwsSystem:
    """Planar system symmetric about ``x2 = 0`` with a double tangency at the origin."""

    def fp(x):
        return np.array([-1.0 + x[1], x[1] - x[0]])

    def fm(x):
        return np.array([-1.0 - x[1], x[1] + x[0]])

    grad = _unit(2, 1)
    return PwsSystem(
        dim=2,
        f_plus=fp,
        f_minus=fm,
        sigma=lambda x: x[1],
        grad_sigma=lambda x: grad,
        name="dbfold",
        lie2_plus=lambda x: 1.0 - x[0],
        lie2_minus=lambda x: x[0] - 1.0,
        landmarks={
            "focus_plus": np.array([1.0, 1.0]),
            "focus_minus": np.array([1.0, -1.0]),
            "double_tangency": np.zeros(2),
            "lambda_limit": 0.5,
        },
    )


# ---------------------------------------------------------------------------
# forced oscillator with direction-dependent forcing


@dataclass(frozen=True)
class MechParams:
    a: float = -1.3
    b: float = 0.1
    c: float = 0.2
    v: float = -1.0
    r1: float = 12.0
    r2: float = -1.0


def mech_sliding_rays(p: MechParams) -> list[tuple[float, float, bool]]:
    """Invariant rays ``x = xi z`` of the sliding flow on ``u = 0``.

    Returns ``(xi, lambda_s, attracting)`` for each real root, where
    ``attracting`` marks rays that draw in nearby sliding orbits for
    ``z > 0``.
    """
    k = p.a - 1.0
    d = p.r1 - p.r2
    # xi * (1 + k (r1 - xi) / d) = v  <=>  -k xi^2 + (d + k r1) xi - v d = 0
    roots = np.roots([-k, d + k * p.r1, -p.v * d])
    out = []
    for xi in sorted(r.real for r in roots if abs(r.imag) < 1e-12):
        lam = (p.r1 - xi) / d
        # Q(xi) = v - xi (1 + k (r1 - xi) / d);  d(xi)/dt = Q / z
        dq = -(1.0 + k * (p.r1 - xi) / d) + xi * k / d
        out.append((float(xi), float(lam), dq < 0))
    return out


def make_mech(params: MechParams | None = None, **overrides) -> PwsSystem:
    """State ``(x, u, z)`` with ``u`` the velocity relative to ``v``; switching on ``u``.

    The ``+`` field has the step ``H(u) = 1``, the ``-`` field ``H(u) = 0``.
    """
    p = _with(params or MechParams(), overrides)
    a, b, c, v, r1, r2 = p.a, p.b, p.c, p.v, p.r1, p.r2

    def fp(s):
        x, u, z = s
        return np.array([u + v, -x + b * u + r2 * z, a + c * u])

    def fm(s):
        x, u, z = s
        return np.array([u + v, -x + b * u + r1 * z, 1.0])

    def lp(s):
        x, u, z = s
        return -(u + v) + b * (-x + b * u + r2 * z) + r2 * (a + c * u)

    def lm(s):
        x, u, z = s
        return -(u + v) + b * (-x + b * u + r1 * z) + r1

    grad = _unit(3, 1)
    rays = mech_sliding_rays(p)
    incoming = [lam for xi, lam, attracting in rays if attracting and r2 < xi < r1]
    return PwsSystem(
        dim=3,
        f_plus=fp,
        f_minus=fm,
        sigma=lambda s: s[1],
        grad_sigma=lambda s: grad,
        name="mech",
        lie2_plus=lp,
        lie2_minus=lm,
        landmarks={
            "double_tangency": np.zeros(3),
            "sliding_rays": rays,
            "lambda_limit": incoming[0] if incoming else None,
        },
        params=_as_dict(p),
    )


# ---------------------------------------------------------------------------
# small fixtures


def make_linear_drop(dim: int = 3) -> PwsSystem:
    """Constant fields pointing down the last axis; ``sigma = x_n``."""
    down = -_unit(dim, dim - 1)
    grad = _unit(dim, dim - 1)
    return PwsSystem(
        dim=dim,
        f_plus=lambda x: down.copy(),
        f_minus=lambda x: down.copy(),
        sigma=lambda x: x[-1],
        grad_sigma=lambda x: grad,
        name="linear_drop",
        lie2_plus=lambda x: 0.0,
        lie2_minus=lambda x: 0.0,
    )


def make_graze_fixture(lift: float = 0.0) -> PwsSystem:
    """Parabolic approach to ``x2 = lift``: ``f+ = (1, x1)``, ``f- = (1, -1)``.

    From ``(-1, 0.75)`` the ``+`` orbit has its lowest point ``x2 = 0.25``
    at ``x1 = 0``, so it grazes exactly when ``lift = 0.25``.
    """
    grad = _unit(2, 1)
    return PwsSystem(
        dim=2,
        f_plus=lambda x: np.array([1.0, x[0]]),
        f_minus=lambda x: np.array([1.0, -1.0]),
        sigma=lambda x: x[1] - lift,
        grad_sigma=lambda x: grad,
        name="graze_fixture",
        lie2_plus=lambda x: 1.0,
        lie2_minus=lambda x: 0.0,
        landmarks={"initial_point": np.array([-1.0, 0.75]), "grazing_lift": 0.25},
        params={"lift": lift},
    )


def make_rotor(ratio: float = 2.0) -> PwsSystem:
    """Rotation whose speed jumps across ``x2 = 0``; every surface hit is a crossing."""
    grad = _unit(2, 1)
    return PwsSystem(
        dim=2,
        f_plus=lambda x: np.array([-x[1], x[0]]),
        f_minus=lambda x: ratio * np.array([-x[1], x[0]]),
        sigma=lambda x: x[1],
        grad_sigma=lambda x: grad,
        name="rotor",
        params={"ratio": ratio},
    )


# ---------------------------------------------------------------------------
# smoothing


class SigmoidKind(str, enum.Enum):
    TANH = "tanh"
    ALGEBRAIC = "algebraic"


@dataclass(frozen=True)
class SmoothingParams:
    steepness: float = 50.0
    kind: SigmoidKind = SigmoidKind.TANH

    def __post_init__(self) -> None:
        if not self.steepness > 0:
            raise ValueError("steepness must be positive")
        object.__setattr__(self, "kind", SigmoidKind(self.kind))

    def sigmoid(self, s: float) -> float:
        ks = self.steepness * s
        if self.kind is SigmoidKind.TANH:
            return 0.5 * (1.0 + math.tanh(ks))
        return 0.5 * (1.0 + ks / math.sqrt(1.0 + ks * ks))


@dataclass(frozen=True)
class SmoothedSystem:
    """Single smooth field ``S(k sigma) f+ + (1 - S(k sigma)) f-``."""

    base: PwsSystem
    smoothing: SmoothingParams

    @property
    def dim(self) -> int:
        return self.base.dim

    def weight(self, x) -> float:
        return self.smoothing.sigmoid(float(self.base.sigma(x)))

    def field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        w = self.weight(x)
        return w * self.base.field(Branch.PLUS, x) + (1.0 - w) * self.base.field(Branch.MINUS, x)


def make_smoothed(base: PwsSystem, params: SmoothingParams | None = None) -> SmoothedSystem:
    return SmoothedSystem(base, params or SmoothingParams())


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    build: Callable[..., PwsSystem]
    defaults: dict
    initial: tuple
    description: str


def _resonator_builder(**kw) -> PwsSystem:
    lam = kw.get("lambda_minus")
    if isinstance(lam, (list, tuple)):
        kw["lambda_minus"] = complex(*lam)
    elif isinstance(lam, str):
        kw["lambda_minus"] = complex(lam.replace(" ", "").replace("i", "j"))
    return make_resonator(ResonatorParams(**kw))


def _mech_builder(**kw) -> PwsSystem:
    return make_mech(MechParams(**kw))


SCENARIOS: dict[str, ScenarioSpec] = {
    "resonator": ScenarioSpec(
        "resonator", _resonator_builder, {f.name: f.default for f in fields(ResonatorParams)},
        tuple(RESONATOR_IP), "superconducting stripline resonator (Re B, Im B, T), switching at T = 1"),
    "dbfold": ScenarioSpec(
        "dbfold", lambda **kw: make_dbfold(), {}, (1.0, 0.5),
        "planar symmetric double fold, switching at x2 = 0"),
    "mech": ScenarioSpec(
        "mech", _mech_builder, {f.name: f.default for f in fields(MechParams)}, (0.5, 0.0, 0.1),
        "forced oscillator with direction-dependent forcing (x, u, z), switching at u = 0"),
    "graze_fixture": ScenarioSpec(
        "graze_fixture", lambda lift=0.0: make_graze_fixture(lift), {"lift": 0.0}, (-1.0, 0.75),
        "parabolic orbit that grazes x2 = lift exactly at lift = 0.25"),
    "rotor": ScenarioSpec(
        "rotor", lambda ratio=2.0: make_rotor(ratio), {"ratio": 2.0}, (1.0, 0.0),
        "rotation with a speed jump across x2 = 0 (crossing only)"),
    "linear_drop": ScenarioSpec(
        "linear_drop", lambda dim=3: make_linear_drop(int(dim)), {"dim": 3}, (0.0, 0.0, 1.0),
        "constant downward field, hits x_n = 0 at t = x_n(0)"),
}


def build_scenario(name: str, **params) -> PwsSystem:
    try:
        spec = SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    unknown = set(params) - set(spec.defaults)
    if unknown:
        raise KeyError(f"unknown parameter(s) {sorted(unknown)} for scenario {name!r}")
    return spec.build(**params)


def _with(params, overrides: dict):
    if not overrides:
        return params
    values = {f.name: getattr(params, f.name) for f in fields(params)}
    values.update(overrides)
    return type(params)(**values)


def _as_dict(params) -> dict:
    out = {}
    for k, v in asdict(params).items():
        out[k] = [v.real, v.imag] if isinstance(v, complex) else v
    return out
