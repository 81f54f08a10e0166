"""Set-valued continuations after a graze or a double tangency.

When an orbit touches the boundary of a repelling sliding region, or
reaches a double tangency by sliding, the forward flow may stick to the
surface for any time ``tau`` and then leave along either field. An
:class:`ExplosionBundle` holds that family of orbits on a grid of ``tau``
values for both exit branches. :func:`run_nondeterministic_ensemble` instead
draws one outcome at random every time the flow splits.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .errors import DegeneracyError, GrazingNotFoundError, IntegrationError
from .integrator import (
    Event,
    EventKind,
    FlowState,
    IntegratorConfig,
    Region,
    Trajectory,
    _project,
    _surface_event,
    detect_grazing,
    flow_sliding,
    infer_region,
    integrate_orbit,
)
from .policy import BranchPolicy
from .system import Branch, PwsSystem, departs, normal_components, quadratic_tangency_check

__all__ = [
    "BranchPolicy",
    "BundleMember",
    "ExplosionBundle",
    "Exclusion",
    "build_grazing_explosion",
    "build_double_tangency_explosion",
    "run_nondeterministic_ensemble",
    "endpoint_hausdorff",
    "refinement_ratio",
    "first_return_time",
    "split_return_time",
    "event_log_digest",
]


@dataclass
class BundleMember:
    tau: float
    branch: Branch
    trajectory: Trajectory

    @property
    def endpoint(self) -> np.ndarray:
        return self.trajectory.final.x


@dataclass
class Exclusion:
    """A grid point with no member, and why."""

    tau: float
    branch: Branch
    reason: str  # "not_departing" or "slide_exit"
    t_exit: Optional[float] = None


@dataclass
class ExplosionBundle:
    """Orbits through a non-deterministic point, indexed by sticking time and exit branch.

    ``members`` are sorted by branch then ``tau``. Grid points without an
    orbit are listed in ``excluded``; when sliding ends before the largest
    ``tau`` the bundle is truncated there and ``slide_exit`` records the
    exit event.
    """

    kind: str
    t1: float
    x1: np.ndarray
    t_end: float
    taus: np.ndarray
    members: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    incoming: Optional[Branch] = None
    approach: Optional[Trajectory] = None
    slide_exit: Optional[Event] = None
    lambda_limit: Optional[float] = None

    def __len__(self) -> int:
        return len(self.members)

    def branch_members(self, branch: Branch | str) -> list:
        branch = Branch.coerce(branch)
        return [m for m in self.members if m.branch is branch]

    def member(self, tau: float, branch: Branch | str) -> BundleMember:
        branch = Branch.coerce(branch)
        for m in self.members:
            if m.branch is branch and m.tau == tau:
                return m
        raise KeyError((tau, branch.value))

    def endpoints(self, branch: Branch | str) -> np.ndarray:
        """Member states at ``t_end`` for one branch, ordered by ``tau``."""
        ms = self.branch_members(branch)
        if not ms:
            return np.empty((0, self.x1.size))
        return np.array([m.endpoint for m in ms])

    def manifest(self, seed_lineage=None) -> dict:
        out = {
            "kind": self.kind,
            "t1": self.t1,
            "x1": [float(v) for v in self.x1],
            "t_end": self.t_end,
            "incoming": None if self.incoming is None else self.incoming.value,
            "lambda_limit": self.lambda_limit,
            "members": [
                {"tau": m.tau, "branch": m.branch.value, "seed_lineage": seed_lineage,
                 "n_samples": len(m.trajectory), "events": m.trajectory.event_counts(),
                 "event_log_digest": event_log_digest(m.trajectory)}
                for m in self.members
            ],
            "excluded": [
                {"tau": e.tau, "branch": e.branch.value, "reason": e.reason, "t_exit": e.t_exit}
                for e in self.excluded
            ],
        }
        if self.slide_exit is not None:
            out["slide_exit"] = self.slide_exit.to_dict()
        return out


def event_log_digest(traj: Trajectory) -> str:
    """SHA-256 of the event log; floats are written with ``repr`` so equal logs hash equally."""
    payload = json.dumps([e.to_dict() for e in traj.events], sort_keys=True, default=_jsonable)
    return hashlib.sha256(payload.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"not serialisable: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# bundles


def _member(sys, t1, x1, tau, branch, cfg, lambda_hint, freeze, continuation):
    """Stick for ``tau`` from ``x1`` then leave along ``branch``.

    Returns ``(trajectory, None)`` or ``(None, exclusion)``.
    """
    traj = Trajectory()
    if tau > 0.0:
        seg, ev = flow_sliding(sys, FlowState(t1, x1, Region.SLIDING), cfg, lambda_hint=lambda_hint,
                               t_stop=t1 + tau, freeze=freeze)
        traj.extend(seg)
        if ev.kind is EventKind.TERMINATE:
            traj.log(ev)
            return traj, None
        if ev.info.get("cause") != "release":
            return None, Exclusion(tau, branch, "slide_exit", ev.t)
        t_rel, x_rel = ev.t, ev.x
    else:
        t_rel, x_rel = t1, np.array(x1, dtype=float)
        ev = _surface_event(sys, EventKind.SLIDE_EXIT, t1, x_rel, cfg, cause="release")
    if not departs(sys, x_rel, branch, cfg.eps_tan):
        return None, Exclusion(tau, branch, "not_departing", t_rel)
    ev.info.update(branch=branch.value, tau=tau)
    traj.log(ev)
    rest = integrate_orbit(sys, FlowState(t_rel, x_rel, Region.of(branch)), cfg, continuation)
    traj.extend(rest)
    return traj, None


def _fill(bundle, sys, cfg, lambda_hint, freeze, continuation, branches):
    span = bundle.taus[-1]
    for branch in branches:
        for tau in bundle.taus:
            tau = float(tau)
            if tau == span and span > 0.0 and branch is not branches[0]:
                # sticking for the whole window: the same orbit for both branches
                continue
            traj, excl = _member(sys, bundle.t1, bundle.x1, tau, branch, cfg, lambda_hint,
                                 freeze, continuation)
            if excl is not None:
                bundle.excluded.append(excl)
                if excl.reason == "slide_exit":
                    if bundle.slide_exit is None:
                        _, bundle.slide_exit = flow_sliding(
                            sys, FlowState(bundle.t1, bundle.x1, Region.SLIDING), cfg,
                            lambda_hint=lambda_hint, t_stop=bundle.t1 + tau, freeze=freeze)
                    bundle.excluded.extend(Exclusion(float(t), branch, "slide_exit", excl.t_exit)
                                           for t in bundle.taus if t > tau)
                    break
                continue
            bundle.members.append(BundleMember(tau, branch, traj))
    return bundle


def _grid(n_tau: int, span: float) -> np.ndarray:
    if n_tau < 1:
        raise ValueError("n_tau must be >= 1")
    return np.linspace(0.0, max(span, 0.0), n_tau + 1)


def build_grazing_explosion(sys: PwsSystem, p, cfg: IntegratorConfig, n_tau: int = 64,
                            t_end: Optional[float] = None, branch: Branch | str | None = None,
                            continuation: Optional[BranchPolicy] = None) -> ExplosionBundle:
    """Explosion through the first graze of the orbit from ``p``.

    The orbit from ``p`` (under the field of its own side, or ``branch``)
    must touch the surface quadratically on the edge of repelling sliding.
    Members slide from the grazing point for ``tau`` on a uniform grid over
    ``[0, t_end - t1]`` and then leave along either field when that field
    departs. The orbit that sticks for the whole window is shared by both
    branches, so a full bundle has ``2 * n_tau + 1`` members.

    ``continuation`` resolves later non-deterministic points on each member
    (default: stop there).
    """
    t_end = cfg.t_end if t_end is None else float(t_end)
    cfg = cfg.replace(t_end=t_end)
    p = np.array(p, dtype=float)
    if branch is None:
        region = infer_region(sys, p, cfg)
        if region is None or region is Region.SLIDING:
            raise ValueError("p lies on the surface; pass branch explicitly")
        branch = region.branch
    incoming = Branch.coerce(branch)
    hit = detect_grazing(sys, p, incoming, cfg)
    if hit is None:
        raise GrazingNotFoundError(f"orbit from {p!r} along f_{incoming.value} does not graze before t={t_end}")
    t1, x1 = hit
    curvature = quadratic_tangency_check(sys, x1, incoming)
    if curvature == 0.0 or incoming.sign * curvature < 0:
        raise DegeneracyError(f"tangency at {x1!r} is not a quadratic fold (curvature {curvature!r})")
    nd = normal_components(sys, x1)
    h_out = nd.h_minus if incoming is Branch.PLUS else nd.h_plus
    if incoming.other.sign * h_out <= 0:
        raise DegeneracyError("the graze is not on the edge of repelling sliding; the continuation is unique")
    approach = integrate_orbit(sys, p, cfg.replace(t_end=t1))
    bundle = ExplosionBundle("grazing", t1, x1, t_end, _grid(n_tau, t_end - t1), incoming=incoming,
                             approach=approach)
    continuation = BranchPolicy.refuse() if continuation is None else continuation
    return _fill(bundle, sys, cfg, None, False, continuation, (incoming, incoming.other))


def _dt_lambda(sys: PwsSystem, event: Event) -> Optional[float]:
    lam = event.info.get("lambda_limit")
    if lam is None:
        lam = sys.landmarks.get("lambda_limit")
    return None if lam is None else float(lam)


def build_double_tangency_explosion(sys: PwsSystem, p, cfg: IntegratorConfig, n_tau: int = 64,
                                    t_end: Optional[float] = None,
                                    continuation: Optional[BranchPolicy] = None) -> ExplosionBundle:
    """Explosion through the double tangency reached by the orbit from ``p``.

    Sticking continues through the double tangency along the limiting
    sliding direction (the one-sided limit of the sliding coefficient along
    the incoming orbit, or the system's ``lambda_limit`` landmark when ``p``
    is the double tangency itself) and releases onto either field.
    """
    t_end = cfg.t_end if t_end is None else float(t_end)
    cfg = cfg.replace(t_end=t_end)
    approach = integrate_orbit(sys, p, cfg)
    dts = approach.events_of(EventKind.DOUBLE_TANGENCY)
    if not dts:
        raise GrazingNotFoundError(f"orbit from {p!r} reaches no double tangency before t={t_end}")
    ev = dts[0]
    lam = _dt_lambda(sys, ev)
    if lam is None:
        raise DegeneracyError("no limiting sliding coefficient at the double tangency")
    x1 = _project(sys, ev.x)
    bundle = ExplosionBundle("double_tangency", ev.t, x1, t_end, _grid(n_tau, t_end - ev.t),
                             approach=approach, lambda_limit=lam)
    continuation = BranchPolicy.refuse() if continuation is None else continuation
    return _fill(bundle, sys, cfg, lam, True, continuation, (Branch.PLUS, Branch.MINUS))


# ---------------------------------------------------------------------------
# convergence diagnostics


def endpoint_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two finite point sets."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty endpoint set")
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


def refinement_ratio(coarse: ExplosionBundle, mid: ExplosionBundle, fine: ExplosionBundle,
                     branch: Branch | str) -> float:
    """``d(coarse, mid) / d(mid, fine)`` for the endpoint sets of three nested grids."""
    d1 = endpoint_hausdorff(coarse.endpoints(branch), mid.endpoints(branch))
    d2 = endpoint_hausdorff(mid.endpoints(branch), fine.endpoints(branch))
    return d1 / d2 if d2 > 0 else math.inf


# ---------------------------------------------------------------------------
# random ensembles


def run_nondeterministic_ensemble(sys: PwsSystem, initial, cfg: IntegratorConfig, seed: int,
                                  n_orbits: int, t_end: Optional[float] = None,
                                  tau_cap: float = 10.0) -> list:
    """Orbits that draw a sticking time and exit branch at every split point.

    Each orbit owns a generator spawned from ``seed``, so results do not
    depend on the order in which orbits are run. The draws are recorded in
    the ``choice`` entry of the corresponding events. Leaving
    ``cfg.domain_radius`` ends an orbit with a ``TERMINATE`` event whose
    reason is ``"escape"``.
    """
    if n_orbits < 1:
        raise ValueError("n_orbits must be >= 1")
    if t_end is not None:
        cfg = cfg.replace(t_end=float(t_end))
    master = BranchPolicy.uniform_random(seed, tau_cap)
    out = []
    for i in range(n_orbits):
        policy = master.for_orbit(i, n_orbits)
        try:
            traj = integrate_orbit(sys, initial, cfg, policy)
        except IntegrationError as exc:
            raise IntegrationError(f"orbit {i}: {exc}", getattr(exc, "t", None),
                                   getattr(exc, "x", None)) from exc
        traj.meta = {"orbit": i, "seed": int(seed), "spawn_key": [i], "draws": [c.as_dict() for c in policy.draws]}
        out.append(traj)
    return out


def first_return_time(traj: Trajectory, center=None, radius: float = 0.1,
                      t_start: Optional[float] = None) -> Optional[float]:
    """Time from the first entry into the ball to the first re-entry after leaving it.

    Only samples at or after ``t_start`` count; an orbit already inside the
    ball at ``t_start`` enters it then. Crossing times are interpolated
    linearly between samples. ``None`` when the orbit does not return.
    """
    x = traj.x
    t = traj.t
    if t_start is not None:
        keep = t >= t_start
        x, t = x[keep], t[keep]
    if t.size == 0:
        return None
    c = np.zeros(x.shape[1]) if center is None else np.asarray(center, dtype=float)
    d = np.linalg.norm(x - c, axis=1) - radius
    inside = d < 0

    def crossing(i):
        # boundary time between samples i-1 and i
        if i == 0:
            return t[0]
        return t[i - 1] + (t[i] - t[i - 1]) * d[i - 1] / (d[i - 1] - d[i])

    idx = np.flatnonzero(inside)
    if idx.size == 0:
        return None
    first = idx[0]
    t_in = crossing(first)
    out = np.flatnonzero(~inside[first:])
    if out.size == 0:
        return None
    k = first + out[0]
    back = np.flatnonzero(inside[k:])
    if back.size == 0:
        return None
    return float(crossing(k + back[0]) - t_in)


def split_return_time(traj: Trajectory, center=None, radius: float = 0.1) -> Optional[float]:
    """First return to the ball counted from the orbit's first split point.

    The split point is the first double tangency or graze where a branch
    was chosen; before it the orbit is deterministic. Falls back to the
    start of the orbit when there is none.
    """
    t_split = None
    for e in traj.events:
        if "choice" in e.info:
            t_split = e.t
            break
    return first_return_time(traj, center, radius, t_split)
