"""Event-located integration of single orbits of a Filippov system.

An orbit is assembled from three kinds of segments: free flight under
``f_plus`` or ``f_minus`` off the surface, sliding under the Filippov field
on it, and the transitions between them located as events. Points where the
forward continuation is not unique (double tangencies, grazes on the edge of
repelling sliding) are resolved by a :class:`~filippov.policy.BranchPolicy`.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from . import _dopri
from .errors import (
    DegeneracyError,
    DegenerateSlidingError,
    EvaluationError,
    EventMissError,
    GrazingNotFoundError,
    IntegrationError,
    NoBracketError,
)
from .policy import BranchPolicy, Choice
from .system import (
    Branch,
    PwsSystem,
    SurfaceRegime,
    classify_normals,
    departs,
    normal_components,
    quadratic_tangency_check,
    sliding_coefficient,
)
from .system import _norm

logger = logging.getLogger(__name__)

# Two normals located at the same event count as a double tangency when the
# other one is this small (normalised by |f| |grad sigma|).
DT_TOL = 1e-6
# consecutive zero-length segments tolerated before an orbit is declared stuck
_MAX_STALLS = 8


class Region(str, enum.Enum):
    ABOVE = "above"
    BELOW = "below"
    SLIDING = "sliding"

    @property
    def branch(self) -> Branch:
        if self is Region.SLIDING:
            raise ValueError("sliding region has no single branch")
        return Branch.PLUS if self is Region.ABOVE else Branch.MINUS

    @classmethod
    def of(cls, branch: Branch) -> "Region":
        return cls.ABOVE if branch is Branch.PLUS else cls.BELOW


class EventKind(str, enum.Enum):
    SURFACE_HIT = "surface_hit"
    CROSS = "cross"
    SLIDE_ENTER = "slide_enter"
    SLIDE_EXIT = "slide_exit"
    GRAZE = "graze"
    DOUBLE_TANGENCY = "double_tangency"
    TERMINATE = "terminate"


@dataclass(frozen=True)
class FlowState:
    t: float
    x: np.ndarray
    region: Region

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.array(self.x, dtype=float))
        object.__setattr__(self, "region", Region(self.region))


@dataclass
class Event:
    kind: EventKind
    t: float
    x: np.ndarray
    regime: Optional[SurfaceRegime] = None
    h_plus: float = math.nan
    h_minus: float = math.nan
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "t": self.t,
            "x": [float(v) for v in self.x],
            "regime": None if self.regime is None else self.regime.value,
            "h_plus": None if math.isnan(self.h_plus) else self.h_plus,
            "h_minus": None if math.isnan(self.h_minus) else self.h_minus,
            "info": self.info,
        }


@dataclass
class IntegratorConfig:
    """Step control and event tolerances.

    ``surface_band`` is relative: a point is on the surface when
    ``|sigma| <= surface_band * (1 + |x|)``.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    surface_band: float = 1e-8
    event_root_tol: float = 1e-10
    max_step: float = 0.1
    t_end: float = 10.0
    sliding_projection_tol: float = 1e-12
    eps_tan: float = 1e-9
    sample_dt: Optional[float] = None
    domain_radius: Optional[float] = None
    max_steps: int = 2_000_000

    def __post_init__(self) -> None:
        for name in ("rel_tol", "abs_tol", "surface_band", "event_root_tol", "max_step",
                     "sliding_projection_tol", "eps_tan"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if not self.event_root_tol < self.max_step:
            raise ValueError("event_root_tol must be smaller than max_step")
        if self.sample_dt is not None and not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")

    def replace(self, **changes) -> "IntegratorConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return IntegratorConfig(**values)

    def band(self, x) -> float:
        return self.surface_band * (1.0 + _norm(x))


class Trajectory:
    """Time-ordered samples plus the event log of one orbit."""

    def __init__(self) -> None:
        self._t: list[float] = []
        self._x: list[np.ndarray] = []
        self._r: list[Region] = []
        self.events: list[Event] = []
        self.meta: dict = {}

    def __len__(self) -> int:
        return len(self._t)

    def add(self, t: float, x, region: Region) -> None:
        if self._t and t <= self._t[-1]:
            return
        self._t.append(float(t))
        self._x.append(np.array(x, dtype=float))
        self._r.append(Region(region))

    def add_state(self, state: FlowState) -> None:
        self.add(state.t, state.x, state.region)

    def log(self, event: Event) -> None:
        self.events.append(event)

    def extend(self, other: "Trajectory") -> None:
        for t, x, r in zip(other._t, other._x, other._r):
            self.add(t, x, r)
        self.events.extend(other.events)

    @property
    def t(self) -> np.ndarray:
        return np.array(self._t)

    @property
    def x(self) -> np.ndarray:
        return np.array(self._x)

    @property
    def regions(self) -> list[Region]:
        return list(self._r)

    @property
    def samples(self) -> list[FlowState]:
        return [FlowState(t, x, r) for t, x, r in zip(self._t, self._x, self._r)]

    @property
    def final(self) -> FlowState:
        return FlowState(self._t[-1], self._x[-1], self._r[-1])

    def count(self, kind: EventKind) -> int:
        return sum(1 for e in self.events if e.kind is kind)

    def events_of(self, kind: EventKind) -> list[Event]:
        return [e for e in self.events if e.kind is kind]

    def event_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.events:
            out[e.kind.value] = out.get(e.kind.value, 0) + 1
        return out


# ---------------------------------------------------------------------------
# generic event-located stepping


class _Watch:
    """Scalar function that must keep sign ``sign``; fires when it stops doing so.

    A watch starts disarmed when its value is inside ``tol`` and arms once
    it exceeds ``2 * tol`` on the required side; while disarmed it fires
    only on a clear violation.
    """

    __slots__ = ("fn", "sign", "tol", "name", "armed", "last")

    def __init__(self, fn, sign: int, tol: float, name: str):
        self.fn, self.sign, self.tol, self.name = fn, sign, tol, name
        self.armed = False
        self.last = None  # signed value at the current state

    def signed(self, y) -> float:
        return self.sign * self.fn(y)

    def fires(self, v: float) -> bool:
        if self.armed:
            return v <= 0.0
        return v < -self.tol

    def update(self, v: float) -> None:
        self.last = v
        if not self.armed and v > 2.0 * self.tol:
            self.armed = True


@dataclass
class _Segment:
    t: float
    y: np.ndarray
    samples: list
    reason: str  # "stop", "event", "escape"
    watch: Optional[_Watch] = None


_THETAS = (0.25, 0.5, 0.75)


def _advance(fun, label: str, t0: float, y0: np.ndarray, t_stop: float, cfg: IntegratorConfig,
             watches: list[_Watch], post=None, verify=None) -> _Segment:
    t = float(t0)
    y = np.array(y0, dtype=float)
    samples = [(t, y.copy())]
    for w in watches:
        v = w.signed(y)
        if not w.armed and v < -w.tol:
            return _Segment(t, y, samples, "event", w)
        w.update(v)
    if t_stop <= t:
        return _Segment(t, y, samples, "stop")
    f = fun(y)
    h = _dopri.initial_step(fun, y, f, cfg.rel_tol, cfg.abs_tol, min(cfg.max_step, t_stop - t))
    next_sample = None
    if cfg.sample_dt is not None:
        next_sample = (math.floor(t / cfg.sample_dt) + 1) * cfg.sample_dt
    n_steps = 0
    while t < t_stop:
        n_steps += 1
        if n_steps > cfg.max_steps:
            raise IntegrationError(f"step budget exhausted while integrating {label}", t, y)
        h = min(h, cfg.max_step)
        last = t_stop - t <= h
        if last:
            h = t_stop - t
        step = _dopri.rk_step(fun, t, y, f, h, cfg.rel_tol, cfg.abs_tol)
        if not np.isfinite(step.error) or not np.isfinite(step.y1).all():
            if h <= 1e-14 * max(1.0, abs(t)):
                raise EvaluationError(label, y, step.y1)
            h *= _dopri.MIN_FACTOR
            continue
        if step.error > 1.0:
            h *= _dopri.step_factor(step.error)
            if h < 1e-14 * max(1.0, abs(t)):
                raise IntegrationError(f"step size underflow integrating {label}", t, y)
            continue
        t1 = t_stop if last else t + step.h

        hit, ends = _scan_step(step, watches)
        if hit is not None:
            t_ev, w = hit
            if t_ev >= step.t1:
                t_ev, y_ev = t1, step.y1
            elif t_ev > t:
                # a fresh step is more accurate than the interpolant
                y_ev = _dopri.rk_step(fun, t, y, f, t_ev - t, cfg.rel_tol, cfg.abs_tol).y1
            else:
                y_ev = y
            if post is not None:
                y_ev = post(y_ev)
            _sample_between(samples, step, t, t_ev, next_sample, cfg)
            samples.append((t_ev, y_ev))
            return _Segment(t_ev, y_ev, samples, "event", w)

        y1 = step.y1
        f1 = step.f1
        if post is not None:
            y_new = post(y1)
            if y_new is not y1:
                y1 = y_new
                f1 = fun(y1)
        if verify is not None:
            verify(t1, y1)
        next_sample = _sample_between(samples, step, t, t1, next_sample, cfg)
        samples.append((t1, y1))
        t, y, f = t1, y1, f1
        for w, v in zip(watches, ends):
            w.update(w.signed(y) if post is not None else v)
        if cfg.domain_radius is not None and _norm(y) > cfg.domain_radius:
            return _Segment(t, y, samples, "escape")
        h = step.h * _dopri.step_factor(step.error)
    return _Segment(t, y, samples, "stop")


def _sample_between(samples, step, t_a, t_b, next_sample, cfg):
    if next_sample is None:
        return None
    while next_sample < t_b:
        if next_sample > t_a:
            samples.append((next_sample, step.dense(next_sample)))
        next_sample += cfg.sample_dt
    return next_sample


def _scan_step(step: _dopri.Step, watches: list[_Watch]):
    """Earliest watch violation inside an accepted step, located in time.

    Also returns each watch's value at the end of the step.
    """
    if not watches:
        return None, ()
    ts = [step.t] + [step.t + th * step.h for th in _THETAS] + [step.t1]
    ys = [step.y0] + [step.dense(t) for t in ts[1:-1]] + [step.y1]
    best = None
    ends = []
    for w in watches:
        armed = w.armed
        prev = w.signed(ys[0]) if w.last is None else w.last
        v = prev
        for i in range(1, len(ts)):
            v = w.signed(ys[i])
            fired = (v <= 0.0) if armed else (v < -w.tol)
            if fired:
                offset = 0.0 if (armed or prev > 0.0) else w.tol
                t_ev = _locate(step, w, ts[i - 1], ts[i], prev + offset, v + offset, offset)
                if best is None or t_ev < best[0]:
                    best = (t_ev, w)
                break
            if not armed and v > 2.0 * w.tol:
                armed = True
            prev = v
        ends.append(v)
    return best, ends


def _locate(step, w: _Watch, ta: float, tb: float, va: float, vb: float, offset: float) -> float:
    if vb == 0.0:
        return tb
    if va <= 0.0:
        return ta
    g = lambda s: w.signed(step.dense(s)) + offset
    return brentq(g, ta, tb, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


# ---------------------------------------------------------------------------
# free flight


def _project(sys: PwsSystem, x: np.ndarray, tol: float = 0.0, iters: int = 4) -> np.ndarray:
    """Newton projection of ``x`` onto ``sigma = 0`` along the gradient."""
    for _ in range(iters):
        s = sys.sigma_value(x)
        if abs(s) <= tol:
            break
        g = sys.gradient(x)
        gg = float(g @ g)
        if gg == 0.0:
            break
        x = x - (s / gg) * g
    return x


def _surface_event(sys: PwsSystem, kind: EventKind, t: float, x, cfg: IntegratorConfig, **info) -> Event:
    nd = normal_components(sys, x)
    regime = classify_normals(
        nd.h_plus, nd.h_minus,
        sys.tangency_tol(Branch.PLUS, x, cfg.eps_tan),
        sys.tangency_tol(Branch.MINUS, x, cfg.eps_tan),
    )
    if nd.lambda_s is not None:
        info.setdefault("lambda_s", nd.lambda_s)
    return Event(kind, t, np.array(x, dtype=float), regime, nd.h_plus, nd.h_minus, info)


def _field_fun(sys: PwsSystem, branch: Branch):
    raw = sys.f_plus if branch is Branch.PLUS else sys.f_minus
    return lambda y: np.asarray(raw(y), dtype=float)


def _sigma_watch(sys: PwsSystem, branch: Branch, band: float) -> _Watch:
    def value(y):
        g = sys.gradient(y)
        return sys.sigma_value(y) / _norm(g)
    return _Watch(value, branch.sign, band, "sigma")


def flow_free(sys: PwsSystem, state: FlowState, branch: Branch | str, cfg: IntegratorConfig):
    """Integrate one smooth field until the orbit reaches the surface or ``cfg.t_end``.

    Returns ``(trajectory, event)`` where the event is a located
    ``SURFACE_HIT`` (state projected onto the surface) or ``TERMINATE``.
    """
    branch = Branch.coerce(branch)
    region = Region.of(branch)
    watch = _sigma_watch(sys, branch, cfg.band(state.x))
    seg = _advance(_field_fun(sys, branch), f"f_{branch.value}", state.t, state.x, cfg.t_end, cfg, [watch])
    traj = Trajectory()
    for t, y in seg.samples[:-1]:
        traj.add(t, y, region)
    if seg.reason == "event":
        x_hit = _project(sys, seg.y)
        traj.add(seg.t, x_hit, region)
        ev = _surface_event(sys, EventKind.SURFACE_HIT, seg.t, x_hit, cfg, branch=branch.value)
        return traj, ev
    traj.add(seg.t, seg.y, region)
    reason = "escape" if seg.reason == "escape" else "t_end"
    return traj, Event(EventKind.TERMINATE, seg.t, seg.y, info={"reason": reason, "branch": branch.value})


def flow_smooth(field: Callable, x0, cfg: IntegratorConfig, t0: float = 0.0,
                region: Optional[Callable] = None) -> Trajectory:
    """Integrate a single smooth field with no event handling.

    ``region`` maps a state to the :class:`Region` tag stored with each
    sample (default: ``ABOVE``).
    """
    tag = (lambda y: Region.ABOVE) if region is None else region
    seg = _advance(lambda y: np.asarray(field(y), dtype=float), "smooth field", t0,
                   np.array(x0, dtype=float), cfg.t_end, cfg, [])
    traj = Trajectory()
    for t, y in seg.samples:
        traj.add(t, y, tag(y))
    reason = "escape" if seg.reason == "escape" else "t_end"
    traj.log(Event(EventKind.TERMINATE, seg.t, seg.y, info={"reason": reason}))
    return traj


# ---------------------------------------------------------------------------
# sliding


def _normalised_normal(sys: PwsSystem, branch: Branch, y) -> float:
    # hot path of the sliding watches: the stepper has already checked y
    f = np.asarray((sys.f_plus if branch is Branch.PLUS else sys.f_minus)(y), dtype=float)
    g = sys.gradient(y)
    scale = math.sqrt(float(f @ f) * float(g @ g))
    return float(f @ g) / scale if scale > 0.0 else 0.0


def _sliding_fun(sys: PwsSystem, cfg: IntegratorConfig, lambda_hint: Optional[float],
                 freeze: bool = False):
    """Sliding field whose coefficient is frozen next to a double tangency.

    There both normals are roundoff-sized and their ratio is meaningless, so
    the coefficient falls back to ``lambda_hint`` or, failing that, to the
    last well-conditioned value seen along the segment.
    """
    fp_raw, fm_raw = sys.f_plus, sys.f_minus
    last = [lambda_hint]

    if freeze:
        if lambda_hint is None:
            raise DegenerateSlidingError("a frozen sliding coefficient needs a value")
        lam = float(lambda_hint)
        return lambda y: lam * np.asarray(fp_raw(y), dtype=float) + (1.0 - lam) * np.asarray(fm_raw(y), dtype=float)

    def fun(y):
        fp = np.asarray(fp_raw(y), dtype=float)
        fm = np.asarray(fm_raw(y), dtype=float)
        g = sys.gradient(y)
        hp = float(fp @ g)
        hm = float(fm @ g)
        gn = _norm(g)
        near_dt = (abs(hp) <= 1e3 * cfg.eps_tan * _norm(fp) * gn
                   and abs(hm) <= 1e3 * cfg.eps_tan * _norm(fm) * gn)
        lam = None if near_dt else sliding_coefficient(hp, hm)
        if lam is None:
            lam = lambda_hint if lambda_hint is not None else last[0]
            if lam is None:
                raise DegenerateSlidingError(f"sliding coefficient undefined at x={y!r}")
            return lam * fp + (1.0 - lam) * fm
        if lambda_hint is None:
            last[0] = lam
        return (hm * fp - hp * fm) / (hm - hp)

    return fun


def _sliding_signs(sys: PwsSystem, x, cfg: IntegratorConfig, fun) -> tuple[int, int, SurfaceRegime]:
    """Signs the two normals keep along the sliding segment starting at ``x``.

    At tangencies the regime is read a short distance ahead along the
    sliding direction.
    """
    nd = normal_components(sys, x)
    regime = classify_normals(nd.h_plus, nd.h_minus,
                              sys.tangency_tol(Branch.PLUS, x, cfg.eps_tan),
                              sys.tangency_tol(Branch.MINUS, x, cfg.eps_tan))
    if not regime.is_sliding:
        v = fun(x)
        speed = _norm(v)
        if speed > 0.0:
            ahead = _project(sys, x + (1e-6 * (1.0 + _norm(x)) / speed) * v)
            nd = normal_components(sys, ahead)
            regime = classify_normals(nd.h_plus, nd.h_minus, 0.0, 0.0)
    if regime is SurfaceRegime.ATTRACTING_SLIDING:
        return -1, 1, regime
    if regime is SurfaceRegime.REPELLING_SLIDING:
        return 1, -1, regime
    raise DegeneracyError(f"point x={x!r} is not in a sliding region (regime {regime.value})")


def _lambda_limit(sys: PwsSystem, samples, t_ev: float) -> Optional[float]:
    """One-sided limit of the sliding coefficient at the end of a sliding segment."""
    pts = []
    for t, y in reversed(samples[:-1]):
        nd = normal_components(sys, y)
        if nd.lambda_s is None:
            continue
        tol_p = DT_TOL * 10 * _norm(sys.field(Branch.PLUS, y))
        if abs(nd.h_plus) < tol_p and abs(nd.h_minus) < tol_p:
            continue
        pts.append((t, nd.lambda_s))
        if len(pts) == 2:
            break
    if not pts:
        return None
    if len(pts) == 1 or pts[0][0] == pts[1][0]:
        lam = pts[0][1]
    else:
        (t1, l1), (t0, l0) = pts
        lam = l1 + (l1 - l0) * (t_ev - t1) / (t1 - t0)
    return float(min(1.0, max(0.0, lam)))


def flow_sliding(sys: PwsSystem, state: FlowState, cfg: IntegratorConfig,
                 lambda_hint: Optional[float] = None, t_stop: Optional[float] = None,
                 freeze: bool = False):
    """Integrate the sliding field along the surface.

    Ends with ``SLIDE_EXIT`` when a normal component vanishes (the
    coefficient reaches 0 or 1), ``DOUBLE_TANGENCY`` when both vanish,
    ``SLIDE_EXIT`` with ``cause="release"`` at ``t_stop``, or ``TERMINATE``
    at ``cfg.t_end``. ``lambda_hint`` supplies the coefficient where it is
    0/0 (at and next to a double tangency). With ``freeze`` the coefficient
    stays at ``lambda_hint`` for the whole segment; this is how a stick is
    continued through a double tangency along the limiting direction, and
    the normal residual of the frozen combination is reported on exit.
    """
    x0 = _project(sys, np.array(state.x, dtype=float))
    fun = _sliding_fun(sys, cfg, lambda_hint, freeze)
    s_plus, s_minus, regime = _sliding_signs(sys, x0, cfg, fun)
    # a frozen segment starts at a double tangency located only to DT_TOL
    wtol = 10.0 * DT_TOL if freeze else cfg.eps_tan
    watches = [
        _Watch(lambda y: _normalised_normal(sys, Branch.PLUS, y), s_plus, wtol, "h_plus"),
        _Watch(lambda y: _normalised_normal(sys, Branch.MINUS, y), s_minus, wtol, "h_minus"),
    ]
    proj_tol = cfg.sliding_projection_tol

    def post(y):
        if abs(sys.sigma_value(y)) > proj_tol:
            return _project(sys, y, proj_tol)
        return y

    def verify(t, y):
        nd = normal_components(sys, y)
        if nd.lambda_s is None or -1e-6 <= nd.lambda_s <= 1.0 + 1e-6:
            return
        if max(abs(_normalised_normal(sys, b, y)) for b in Branch) <= DT_TOL:
            return
        raise EventMissError("sliding coefficient left [0, 1] without a located exit", t, y)

    end = cfg.t_end if t_stop is None else min(cfg.t_end, t_stop)
    seg = _advance(fun, "sliding field", state.t, x0, end, cfg, watches, post=post, verify=verify)
    traj = Trajectory()
    for t, y in seg.samples:
        traj.add(t, y, Region.SLIDING)
    if seg.reason == "event":
        w = seg.watch
        other = Branch.MINUS if w.name == "h_plus" else Branch.PLUS
        other_val = abs(_normalised_normal(sys, other, seg.y))
        if other_val <= DT_TOL:
            lam = _lambda_limit(sys, seg.samples, seg.t)
            if lam is None:
                lam = lambda_hint
            ev = _surface_event(sys, EventKind.DOUBLE_TANGENCY, seg.t, seg.y, cfg,
                                lambda_limit=lam, via="sliding", from_regime=regime.value)
            return traj, ev
        exit_branch = Branch.PLUS if w.name == "h_plus" else Branch.MINUS
        ev = _surface_event(sys, EventKind.SLIDE_EXIT, seg.t, seg.y, cfg, cause="boundary",
                            vanishing=exit_branch.value, from_regime=regime.value)
        return traj, ev
    if seg.reason == "escape":
        return traj, Event(EventKind.TERMINATE, seg.t, seg.y, info={"reason": "escape"})
    if t_stop is not None and seg.t >= t_stop and t_stop < cfg.t_end:
        extra = {}
        if freeze:
            v = fun(seg.y)
            extra["frozen_residual"] = float(abs(v @ sys.gradient(seg.y)))
        ev = _surface_event(sys, EventKind.SLIDE_EXIT, seg.t, seg.y, cfg, cause="release",
                            from_regime=regime.value, **extra)
        return traj, ev
    return traj, Event(EventKind.TERMINATE, seg.t, seg.y, info={"reason": "t_end"})


# ---------------------------------------------------------------------------
# surface transitions


@dataclass
class SurfaceTransition:
    """Outcome of resolving a surface hit.

    ``state`` is where integration resumes. When ``release`` is set the
    orbit sticks until ``stick_until`` and then leaves along ``release``.
    ``terminal`` stops the orbit.
    """

    state: FlowState
    events: list = field(default_factory=list)
    terminal: bool = False
    stick_until: Optional[float] = None
    release: Optional[Branch] = None
    lambda_hint: Optional[float] = None


def _release_branch(sys: PwsSystem, x, preferred: Branch, cfg: IntegratorConfig) -> Optional[Branch]:
    for b in (preferred, preferred.other):
        if departs(sys, x, b, cfg.eps_tan):
            return b
    return None


def resolve_nondeterministic(sys: PwsSystem, event: Event, cfg: IntegratorConfig,
                             policy: BranchPolicy, lambda_hint: Optional[float] = None) -> SurfaceTransition:
    """Apply the policy at a point where the forward flow splits."""
    choice: Optional[Choice] = policy.choose()
    event.info["policy"] = policy.mode.value
    if choice is None:
        event.info["terminal"] = True
        return SurfaceTransition(FlowState(event.t, event.x, Region.SLIDING), [event], terminal=True)
    event.info["choice"] = choice.as_dict()
    x = event.x
    if choice.tau <= 0.0:
        branch = _release_branch(sys, x, choice.branch, cfg)
        if branch is None:
            event.info["terminal"] = True
            event.info["reason"] = "no admissible release"
            return SurfaceTransition(FlowState(event.t, x, Region.SLIDING), [event], terminal=True)
        rel = _surface_event(sys, EventKind.SLIDE_EXIT, event.t, x, cfg, cause="release",
                             branch=branch.value, tau=0.0)
        return SurfaceTransition(FlowState(event.t, x, Region.of(branch)), [event, rel])
    return SurfaceTransition(FlowState(event.t, x, Region.SLIDING), [event],
                             stick_until=event.t + choice.tau, release=choice.branch,
                             lambda_hint=lambda_hint)


def step_surface(sys: PwsSystem, event: Event, cfg: IntegratorConfig,
                 policy: Optional[BranchPolicy] = None) -> SurfaceTransition:
    """Decide what happens after a located surface hit.

    Crossing flips the region, attracting sliding starts a sliding segment,
    and a graze on the edge of attracting sliding continues deterministically.
    Repelling sliding, grazes on the edge of repelling sliding and double
    tangencies are handed to ``policy`` (default: stop there).
    """
    if event.kind is not EventKind.SURFACE_HIT:
        raise ValueError("step_surface expects a SURFACE_HIT event")
    policy = BranchPolicy.refuse() if policy is None else policy
    incoming = Branch.coerce(event.info.get("branch", "plus"))
    x, t = event.x, event.t
    h_in = event.h_plus if incoming is Branch.PLUS else event.h_minus
    h_out = event.h_minus if incoming is Branch.PLUS else event.h_plus
    regime = event.regime

    def ev(kind, **info):
        return Event(kind, t, x, regime, event.h_plus, event.h_minus, dict(info))

    if regime is SurfaceRegime.CROSSING:
        if incoming.sign * h_in < 0:
            out = incoming.other
            return SurfaceTransition(FlowState(t, x, Region.of(out)),
                                     [ev(EventKind.CROSS, **{"from": incoming.value, "to": out.value})])
        # spurious touch: both fields point back into the incoming side
        return SurfaceTransition(FlowState(t, x, Region.of(incoming)), [])
    if regime is SurfaceRegime.ATTRACTING_SLIDING:
        return SurfaceTransition(FlowState(t, x, Region.SLIDING), [ev(EventKind.SLIDE_ENTER)])
    if regime is SurfaceRegime.REPELLING_SLIDING:
        return resolve_nondeterministic(sys, ev(EventKind.GRAZE, repelling=True), cfg, policy)
    if regime is SurfaceRegime.DOUBLE_TANGENCY:
        return resolve_nondeterministic(sys, ev(EventKind.DOUBLE_TANGENCY, via="flight"), cfg, policy)

    tangent = Branch.PLUS if regime is SurfaceRegime.TANGENCY_PLUS else Branch.MINUS
    if tangent is incoming:
        curvature = quadratic_tangency_check(sys, x, incoming)
        if incoming.other.sign * h_out < 0:
            # edge of attracting sliding
            g = ev(EventKind.GRAZE, curvature=curvature, edge="attracting")
            if incoming.sign * curvature > 0:
                return SurfaceTransition(FlowState(t, x, Region.of(incoming)), [g])
            return SurfaceTransition(FlowState(t, x, Region.SLIDING), [g, ev(EventKind.SLIDE_ENTER)])
        if h_out == 0.0:
            raise DegeneracyError(f"unclassifiable surface point x={x!r}")
        return resolve_nondeterministic(sys, ev(EventKind.GRAZE, curvature=curvature, edge="repelling"),
                                        cfg, policy)
    # the far-side field is tangent while the incoming one is transversal
    if departs(sys, x, incoming.other, cfg.eps_tan):
        out = incoming.other
        return SurfaceTransition(FlowState(t, x, Region.of(out)),
                                 [ev(EventKind.CROSS, **{"from": incoming.value, "to": out.value})])
    return SurfaceTransition(FlowState(t, x, Region.SLIDING), [ev(EventKind.SLIDE_ENTER)])


def infer_region(sys: PwsSystem, x, cfg: IntegratorConfig) -> Optional[Region]:
    """Region of a point; ``None`` when it sits on the surface where the flow splits."""
    s = sys.sigma_value(x)
    band = cfg.band(x)
    if s > band:
        return Region.ABOVE
    if s < -band:
        return Region.BELOW
    nd = normal_components(sys, x)
    regime = classify_normals(nd.h_plus, nd.h_minus,
                              sys.tangency_tol(Branch.PLUS, x, cfg.eps_tan),
                              sys.tangency_tol(Branch.MINUS, x, cfg.eps_tan))
    if regime is SurfaceRegime.ATTRACTING_SLIDING:
        return Region.SLIDING
    if regime is SurfaceRegime.CROSSING:
        return Region.ABOVE if nd.h_plus > 0 else Region.BELOW
    if regime is SurfaceRegime.TANGENCY_PLUS and nd.h_minus > 0:
        return Region.SLIDING if quadratic_tangency_check(sys, x, Branch.PLUS) < 0 else Region.ABOVE
    if regime is SurfaceRegime.TANGENCY_MINUS and nd.h_plus < 0:
        return Region.SLIDING if quadratic_tangency_check(sys, x, Branch.MINUS) > 0 else Region.BELOW
    return None


def integrate_orbit(sys: PwsSystem, initial: FlowState | np.ndarray, cfg: IntegratorConfig,
                    policy: Optional[BranchPolicy] = None,
                    lambda_hint: Optional[float] = None) -> Trajectory:
    """Full concatenated orbit from ``initial`` up to ``cfg.t_end`` or a terminal event.

    ``initial`` may be a bare state vector (start time 0, region inferred).
    """
    policy = BranchPolicy.refuse() if policy is None else policy
    if not isinstance(initial, FlowState):
        x0 = np.array(initial, dtype=float)
        region = infer_region(sys, x0, cfg)
        initial = FlowState(0.0, x0, Region.SLIDING if region is None else region)
        split_at_start = region is None
    else:
        split_at_start = False
    traj = Trajectory()
    traj.add_state(initial)
    state = initial
    stick_until: Optional[float] = None
    release: Optional[Branch] = None
    hint = lambda_hint
    freeze = False

    if split_at_start:
        x = _project(sys, state.x)
        nd = normal_components(sys, x)
        regime = classify_normals(nd.h_plus, nd.h_minus,
                                  sys.tangency_tol(Branch.PLUS, x, cfg.eps_tan),
                                  sys.tangency_tol(Branch.MINUS, x, cfg.eps_tan))
        kind = EventKind.DOUBLE_TANGENCY if regime is SurfaceRegime.DOUBLE_TANGENCY else EventKind.GRAZE
        start_ev = _surface_event(sys, kind, state.t, x, cfg, via="initial")
        tr = resolve_nondeterministic(sys, start_ev, cfg, policy, hint)
        for e in tr.events:
            traj.log(e)
        if tr.terminal:
            return traj
        state, stick_until, release = tr.state, tr.stick_until, tr.release
        hint = tr.lambda_hint if tr.lambda_hint is not None else hint
        freeze = stick_until is not None and kind is EventKind.DOUBLE_TANGENCY and hint is not None

    stalled, t_prev = 0, None
    while state.t < cfg.t_end:
        stalled = stalled + 1 if state.t == t_prev else 0
        if stalled > _MAX_STALLS:
            raise EventMissError("repeated surface events without progress in time", state.t, state.x)
        t_prev = state.t
        if state.region is Region.SLIDING:
            seg, ev = flow_sliding(sys, state, cfg, lambda_hint=hint, t_stop=stick_until,
                                   freeze=freeze)
            traj.extend(seg)
            if ev.kind is EventKind.TERMINATE:
                traj.log(ev)
                break
            if ev.kind is EventKind.DOUBLE_TANGENCY:
                if stick_until is not None and ev.t < stick_until:
                    # still sticking: pass straight through with the limiting coefficient
                    traj.log(ev)
                    hint = ev.info.get("lambda_limit", hint)
                    freeze = hint is not None
                    state = FlowState(ev.t, ev.x, Region.SLIDING)
                    continue
                hint = ev.info.get("lambda_limit", hint)
                tr = resolve_nondeterministic(sys, ev, cfg, policy, hint)
                for e in tr.events:
                    traj.log(e)
                if tr.terminal:
                    break
                state, stick_until, release = tr.state, tr.stick_until, tr.release
                freeze = stick_until is not None and hint is not None
                continue
            # slide exit: deadline release or boundary of the sliding region
            if ev.info.get("cause") == "release" and release is not None:
                preferred = release
            else:
                preferred = Branch.coerce(ev.info.get("vanishing", "plus"))
                if stick_until is not None:
                    ev.info["truncated_stick"] = True
            branch = _release_branch(sys, ev.x, preferred, cfg)
            if branch is None:
                ev.info["terminal"] = True
                ev.info["reason"] = "no admissible release"
                traj.log(ev)
                break
            ev.info["branch"] = branch.value
            traj.log(ev)
            state = FlowState(ev.t, ev.x, Region.of(branch))
            stick_until = release = None
            hint = None
            freeze = False
            continue

        seg, ev = flow_free(sys, state, state.region.branch, cfg)
        traj.extend(seg)
        if ev.kind is EventKind.TERMINATE:
            traj.log(ev)
            break
        traj.log(ev)
        tr = step_surface(sys, ev, cfg, policy)
        for e in tr.events:
            traj.log(e)
        if tr.terminal:
            break
        state, stick_until, release = tr.state, tr.stick_until, tr.release
        hint = tr.lambda_hint
        freeze = False
        if state.region is Region.SLIDING and stick_until is None:
            hint = None
    return traj


# ---------------------------------------------------------------------------
# grazing


@dataclass
class SigmaMinimum:
    """First local minimum of the signed distance to the surface along a smooth flow."""

    t: float
    x: np.ndarray
    value: float


def iter_sigma_minima(sys: PwsSystem, p, branch: Branch | str, cfg: IntegratorConfig,
                      t0: float = 0.0):
    """Successive local minima of ``sign * sigma`` along the flow of one branch.

    The surface is ignored, so values are negative where the orbit has
    crossed. Values are distances (``sigma / |grad sigma|``).
    """
    branch = Branch.coerce(branch)
    fun = _field_fun(sys, branch)
    x = np.array(p, dtype=float)

    # not normalised by |f|: at an equilibrium that ratio is pure roundoff
    def rate(y):
        g = sys.gradient(y)
        return branch.sign * float(sys.field(branch, y) @ g) / _norm(g)

    def value(y):
        return branch.sign * sys.sigma_value(y) / _norm(sys.gradient(y))

    def watch(sign, y):
        # after the first phase the start is an extremum, where the rate is
        # only zero to within root-finding accuracy
        tol = 1e-12 if t == t0 else max(1e-12, 4.0 * abs(rate(y)))
        return _Watch(rate, sign, tol, "rate")

    t = t0
    climbing = rate(x) >= 0.0
    while t < cfg.t_end:
        if climbing:
            # moving away: pass the local maximum first
            seg = _advance(fun, f"f_{branch.value}", t, x, cfg.t_end, cfg, [watch(1, x)])
            if seg.reason != "event":
                return
            t, x = seg.t, seg.y
        seg = _advance(fun, f"f_{branch.value}", t, x, cfg.t_end, cfg, [watch(-1, x)])
        if seg.reason != "event":
            return
        if seg.t <= t:
            raise EventMissError("no progress between successive minima of sigma", t, x)
        t, x = seg.t, seg.y
        climbing = True
        yield SigmaMinimum(t, x, value(x))


def sigma_minimum(sys: PwsSystem, p, branch: Branch | str, cfg: IntegratorConfig,
                  t0: float = 0.0, lowest: bool = False) -> Optional[SigmaMinimum]:
    """First (or with ``lowest``, the smallest) local minimum of the distance to the surface.

    Returns ``None`` when there is no minimum before ``cfg.t_end``.
    """
    best = None
    for m in iter_sigma_minima(sys, p, branch, cfg, t0):
        if not lowest:
            return m
        if best is None or m.value < best.value:
            best = m
    return best


def detect_grazing(sys: PwsSystem, p, branch: Branch | str, cfg: IntegratorConfig,
                   tol: Optional[float] = None):
    """Grazing time and point of the orbit from ``p``, or ``None`` if it does not graze.

    Local minima of the distance to the surface are visited in order; the
    orbit grazes at the first one that is zero within ``tol`` (default: the
    surface band). An earlier minimum below ``-tol`` means the orbit has
    already crossed, and ``None`` is returned.
    """
    for m in iter_sigma_minima(sys, p, branch, cfg):
        band = cfg.band(m.x) if tol is None else tol
        if abs(m.value) <= band:
            return m.t, _project(sys, m.x)
        if m.value < -band:
            return None
    return None


@dataclass
class BisectionResult:
    value: float
    history: list  # (lo, hi, f_lo, f_hi) per iteration


def bisect_indicator(indicator: Callable[[float], float], lo: float, hi: float, tol: float,
                     max_iter: int = 200) -> BisectionResult:
    """Bisection on a scalar indicator that changes sign on ``[lo, hi]``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if lo == hi:
        raise NoBracketError(f"degenerate interval lo == hi == {lo!r}", lo, hi)
    if lo > hi:
        lo, hi = hi, lo
    f_lo, f_hi = indicator(lo), indicator(hi)
    if f_lo is None or f_hi is None or not (np.isfinite(f_lo) and np.isfinite(f_hi)):
        raise NoBracketError(f"indicator undefined at an endpoint: f({lo})={f_lo}, f({hi})={f_hi}",
                             lo, hi, f_lo, f_hi)
    if f_lo == 0.0:
        return BisectionResult(lo, [(lo, hi, f_lo, f_hi)])
    if f_hi == 0.0:
        return BisectionResult(hi, [(lo, hi, f_lo, f_hi)])
    if np.sign(f_lo) == np.sign(f_hi):
        raise NoBracketError(f"no sign change: indicator({lo})={f_lo!r}, indicator({hi})={f_hi!r}",
                             lo, hi, f_lo, f_hi)
    history = [(lo, hi, f_lo, f_hi)]
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = indicator(mid)
        if f_mid is None or not np.isfinite(f_mid):
            raise NoBracketError(f"indicator undefined at {mid!r}", lo, hi, f_lo, f_hi)
        if f_mid == 0.0:
            lo = hi = mid
            f_lo = f_hi = f_mid
            history.append((lo, hi, f_lo, f_hi))
            break
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        history.append((lo, hi, f_lo, f_hi))
    return BisectionResult(0.5 * (lo + hi), history)


def grazing_indicator(make_system: Callable[[float], PwsSystem], p, branch: Branch | str,
                      cfg: IntegratorConfig) -> Callable[[float], float]:
    """Signed lowest-minimum distance to the surface as a function of a parameter.

    Zero exactly when the orbit grazes; negative when it crosses.
    """
    def indicator(value: float) -> float:
        m = sigma_minimum(make_system(value), p, branch, cfg, lowest=True)
        if m is None:
            raise GrazingNotFoundError(f"no approach to the surface for parameter {value!r}")
        return m.value
    return indicator
