"""Command-line front end: configuration, run dispatch and file output.

A run is described by a :class:`ScenarioConfig`, read from a JSON file and
then patched with ``--set key=value`` flags (dotted keys reach nested
sections, e.g. ``--set integrator.t_end=50`` or ``--set params.mu=1.2``).
``--seed`` and ``--out`` override everything else. Every run writes a
``manifest.json`` holding the resolved configuration and a SHA-256 digest of
each file produced.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigError, FilippovError
from .explosion import (
    ExplosionBundle,
    build_double_tangency_explosion,
    build_grazing_explosion,
    event_log_digest,
    run_nondeterministic_ensemble,
    split_return_time,
)
from .integrator import (
    EventKind,
    IntegratorConfig,
    Region,
    Trajectory,
    bisect_indicator,
    flow_smooth,
    grazing_indicator,
    infer_region,
    integrate_orbit,
)
from .policy import BranchPolicy
from .scenarios import SCENARIOS, SmoothingParams, build_scenario, make_smoothed
from .system import Branch

logger = logging.getLogger(__name__)

RUN_KINDS = ("orbit", "bundle-grazing", "bundle-double-tangency", "ensemble", "scan", "smoothed-orbit")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

_POLICY_KEYS = {"mode", "branch", "tau", "tau_cap", "seed"}
_SCAN_KEYS = {"parameter", "lo", "hi", "tol"}
_SMOOTHING_KEYS = {"steepness", "kind"}


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one run.

    ``initial`` defaults to the scenario's standard initial condition.
    ``branch`` selects the field followed into a graze (bundle-grazing,
    scan); by default it is the side of the surface ``initial`` lies on.
    Ensemble return times are measured to the ball of ``return_radius``
    about ``return_center`` (default: the double tangency, else ``initial``).
    """

    scenario: str = "dbfold"
    kind: str = "orbit"
    params: dict = field(default_factory=dict)
    initial: Optional[list] = None
    integrator: dict = field(default_factory=dict)
    policy: dict = field(default_factory=lambda: {"mode": "refuse"})
    n_tau: int = 64
    n_orbits: int = 100
    tau_cap: float = 10.0
    branch: Optional[str] = None
    scan: dict = field(default_factory=dict)
    smoothing: dict = field(default_factory=dict)
    return_radius: float = 0.1
    return_center: Optional[list] = None
    seed: int = 0
    out: str = "out"

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: unknown name {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        if self.kind not in RUN_KINDS:
            raise ConfigError(f"kind: expected one of {RUN_KINDS}, got {self.kind!r}")
        for name, allowed in (("integrator", {f.name for f in fields(IntegratorConfig)}),
                              ("policy", _POLICY_KEYS), ("scan", _SCAN_KEYS),
                              ("smoothing", _SMOOTHING_KEYS),
                              ("params", set(SCENARIOS[self.scenario].defaults))):
            section = getattr(self, name)
            if not isinstance(section, dict):
                raise ConfigError(f"{name}: expected an object")
            bad = sorted(set(section) - allowed)
            if bad:
                raise ConfigError(f"{name}: unknown key(s) {', '.join(bad)}")
        if self.initial is not None:
            try:
                arr = np.asarray(self.initial, dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"initial: not a numeric vector ({exc})") from None
            if arr.ndim != 1:
                raise ConfigError("initial: expected a flat list of numbers")
        if int(self.n_tau) < 1 or int(self.n_orbits) < 1:
            raise ConfigError("n_tau and n_orbits must be positive")
        if self.tau_cap < 0 or self.return_radius <= 0:
            raise ConfigError("tau_cap must be >= 0 and return_radius > 0")
        if self.branch is not None:
            try:
                Branch.coerce(self.branch)
            except ValueError as exc:
                raise ConfigError(f"branch: {exc}") from None
        if self.kind == "scan" and not {"parameter", "lo", "hi", "tol"} <= set(self.scan):
            raise ConfigError("scan: needs parameter, lo, hi and tol")

    def to_dict(self) -> dict:
        return asdict(self)

    # resolved objects -------------------------------------------------

    def integrator_config(self) -> IntegratorConfig:
        try:
            return IntegratorConfig(**self.integrator)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"integrator: {exc}") from None

    def system(self, **extra):
        try:
            return build_scenario(self.scenario, **{**self.params, **extra})
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"params: {exc}") from None

    def initial_state(self, dim: int) -> np.ndarray:
        x0 = np.asarray(SCENARIOS[self.scenario].initial if self.initial is None else self.initial,
                        dtype=float)
        if x0.size != dim:
            raise ConfigError(f"initial: expected {dim} components, got {x0.size}")
        return x0

    def branch_policy(self) -> BranchPolicy:
        p = dict(self.policy)
        mode = p.pop("mode", "refuse")
        try:
            if mode == "refuse":
                return BranchPolicy.refuse()
            if mode == "deterministic":
                return BranchPolicy.deterministic(p.get("branch", "plus"), float(p.get("tau", 0.0)))
            if mode == "uniform_random":
                return BranchPolicy.uniform_random(int(p.get("seed", self.seed)),
                                                   float(p.get("tau_cap", self.tau_cap)))
        except ValueError as exc:
            raise ConfigError(f"policy: {exc}") from None
        raise ConfigError(f"policy.mode: expected refuse, deterministic or uniform_random, got {mode!r}")


@dataclass
class RunManifest:
    config: dict
    version: str
    kind: str
    event_counts: dict
    wall_time: float
    files: dict
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# config loading


def load_config(path: Optional[str] = None, overrides: Optional[list] = None,
                seed: Optional[int] = None, out: Optional[str] = None) -> ScenarioConfig:
    """Merge file, ``--set`` overrides and explicit flags, in that order of precedence."""
    data: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    for item in overrides or []:
        _apply_override(data, item)
    if seed is not None:
        data["seed"] = int(seed)
    if out is not None:
        data["out"] = str(out)
    try:
        return ScenarioConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _apply_override(data: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part} is not a section")
    node[parts[-1]] = value


# ---------------------------------------------------------------------------
# file formats


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    x = traj.x
    dim = x.shape[1] if x.ndim == 2 else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(dim)] + ["region"])
        for t, row, r in zip(traj.t, x, traj.regions):
            w.writerow([format(t, ".17g")] + [format(v, ".17g") for v in row] + [r.value])


def read_trajectory_csv(path) -> Trajectory:
    traj = Trajectory()
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for row in rows:
            traj.add(float(row[0]), [float(v) for v in row[1:-1]], Region(row[-1]))
    return traj


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_events_json(path: Path, traj: Trajectory) -> None:
    write_json(path, [e.to_dict() for e in traj.events])


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# runs


def scan_grazing(config: ScenarioConfig, parameter: str, lo: float, hi: float, tol: float):
    """Bisect the scenario parameter at which the orbit from ``initial`` grazes the surface.

    The indicator is the signed distance of the first local minimum of
    ``sigma`` along the field of the starting side (negative once the orbit
    crosses). Returns ``(critical value, bracket history)`` where each
    history entry is ``(lo, hi, f_lo, f_hi)``.
    """
    if parameter not in SCENARIOS[config.scenario].defaults:
        raise ConfigError(f"scan.parameter: {parameter!r} is not a parameter of {config.scenario}")
    cfg = config.integrator_config()
    probe = config.system(**{parameter: lo})
    x0 = config.initial_state(probe.dim)
    if config.branch is not None:
        branch = Branch.coerce(config.branch)
    else:
        region = infer_region(probe, x0, cfg)
        if region is None or region is Region.SLIDING:
            raise ConfigError("initial point lies on the surface; set branch for the scan")
        branch = region.branch
    indicator = grazing_indicator(lambda v: config.system(**{parameter: v}), x0, branch, cfg)
    result = bisect_indicator(indicator, float(lo), float(hi), float(tol))
    return result.value, result.history


def _member_name(i: int, m) -> str:
    return f"member_{i:03d}_{m.branch.value}.csv"


def _write_bundle(out: Path, bundle: ExplosionBundle, files: list) -> dict:
    mdir = out / "members"
    mdir.mkdir(parents=True, exist_ok=True)
    man = bundle.manifest(seed_lineage=None)
    for i, (m, entry) in enumerate(zip(bundle.members, man["members"])):
        name = _member_name(i, m)
        write_trajectory_csv(mdir / name, m.trajectory)
        entry["file"] = f"members/{name}"
        files.append(mdir / name)
    if bundle.approach is not None:
        write_trajectory_csv(out / "approach.csv", bundle.approach)
        files.append(out / "approach.csv")
    write_json(out / "bundle.json", man)
    files.append(out / "bundle.json")
    return {"t1": bundle.t1, "x1": bundle.x1.tolist(), "n_members": len(bundle),
            "n_excluded": len(bundle.excluded), "lambda_limit": bundle.lambda_limit}


def run(config: ScenarioConfig) -> RunManifest:
    """Execute one configured run and write its outputs under ``config.out``."""
    config.validate()
    start = time.perf_counter()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = config.integrator_config()
    files: list[Path] = []
    counts: dict[str, int] = {}
    summary: dict = {}

    def tally(traj):
        for k, v in traj.event_counts().items():
            counts[k] = counts.get(k, 0) + v

    if config.kind == "scan":
        s = config.scan
        value, history = scan_grazing(config, s["parameter"], s["lo"], s["hi"], s["tol"])
        summary = {"parameter": s["parameter"], "critical_value": value,
                   "history": [list(h) for h in history]}
        write_json(out / "scan.json", summary)
        files.append(out / "scan.json")
    elif config.kind == "smoothed-orbit":
        base = config.system()
        try:
            smoothing = SmoothingParams(**config.smoothing)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"smoothing: {exc}") from None
        sm = make_smoothed(base, smoothing)
        x0 = config.initial_state(base.dim)
        traj = flow_smooth(sm.field, x0, cfg,
                           region=lambda y: Region.ABOVE if base.sigma(y) >= 0 else Region.BELOW)
        tally(traj)
        write_trajectory_csv(out / "trajectory.csv", traj)
        files.append(out / "trajectory.csv")
        summary = {"final": traj.final.x.tolist(), "bounding_box": np.abs(traj.x).max(axis=0).tolist()}
    else:
        sys_ = config.system()
        x0 = config.initial_state(sys_.dim)
        if config.kind == "orbit":
            policy = config.branch_policy()
            traj = integrate_orbit(sys_, x0, cfg, policy)
            tally(traj)
            write_trajectory_csv(out / "trajectory.csv", traj)
            write_events_json(out / "events.json", traj)
            files += [out / "trajectory.csv", out / "events.json"]
            summary = {"final": traj.final.x.tolist(), "final_time": traj.final.t,
                       "policy": policy.describe(), "event_log_digest": event_log_digest(traj)}
        elif config.kind in ("bundle-grazing", "bundle-double-tangency"):
            if config.kind == "bundle-grazing":
                bundle = build_grazing_explosion(sys_, x0, cfg, config.n_tau, branch=config.branch)
            else:
                bundle = build_double_tangency_explosion(sys_, x0, cfg, config.n_tau)
            for m in bundle.members:
                tally(m.trajectory)
            summary = _write_bundle(out, bundle, files)
        elif config.kind == "ensemble":
            orbits = run_nondeterministic_ensemble(sys_, x0, cfg, config.seed, config.n_orbits,
                                                   tau_cap=config.tau_cap)
            odir = out / "orbits"
            odir.mkdir(parents=True, exist_ok=True)
            entries = []
            center = sys_.landmarks.get("double_tangency")
            if config.return_center is not None:
                center = np.asarray(config.return_center, dtype=float)
            elif center is None:
                center = x0
            returns = []
            for i, traj in enumerate(orbits):
                tally(traj)
                name = f"orbit_{i:03d}"
                write_trajectory_csv(odir / f"{name}.csv", traj)
                write_events_json(odir / f"{name}_events.json", traj)
                files += [odir / f"{name}.csv", odir / f"{name}_events.json"]
                rt = split_return_time(traj, center, config.return_radius)
                returns.append(rt)
                entries.append({"file": f"orbits/{name}.csv", "seed_lineage": traj.meta,
                                "double_tangencies": traj.count(EventKind.DOUBLE_TANGENCY),
                                "first_return_time": rt, "event_log_digest": event_log_digest(traj),
                                "escaped": traj.events[-1].info.get("reason") == "escape"})
            valid = [r for r in returns if r is not None]
            summary = {"n_orbits": len(orbits), "seed": config.seed,
                       "policy": BranchPolicy.uniform_random(config.seed, config.tau_cap).describe(),
                       "return_time_variance": float(np.var(valid)) if len(valid) > 1 else None,
                       "returns_found": len(valid)}
            write_json(out / "ensemble.json", {"summary": summary, "orbits": entries})
            files.append(out / "ensemble.json")
        else:  # pragma: no cover - validate() rejects this
            raise ConfigError(f"unknown run kind {config.kind!r}")

    manifest = RunManifest(
        config=config.to_dict(),
        version=__version__,
        kind=config.kind,
        event_counts=counts,
        wall_time=time.perf_counter() - start,
        files={str(p.relative_to(out)): file_digest(p) for p in files},
        summary=summary,
    )
    write_json(out / "manifest.json", manifest.to_dict())
    return manifest


# ---------------------------------------------------------------------------
# CLI


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="filippov", description="Piecewise-smooth (Filippov) simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted for nested sections); repeatable")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed for random branch policies")

    common(sub.add_parser("run", help="run the configured simulation"))
    p_scan = sub.add_parser("scan", help="bisect a parameter for the grazing value")
    common(p_scan)
    p_scan.add_argument("--parameter")
    p_scan.add_argument("--lo", type=float)
    p_scan.add_argument("--hi", type=float)
    p_scan.add_argument("--tol", type=float)
    sub.add_parser("list-scenarios", help="show built-in scenarios and their parameters")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-scenarios":
        for name, spec in SCENARIOS.items():
            defaults = {k: (str(v) if isinstance(v, complex) else v) for k, v in spec.defaults.items()}
            print(f"{name}: {spec.description}")
            print(f"    initial={[float(v) for v in spec.initial]} params={json.dumps(defaults)}")
        return EXIT_OK
    try:
        overrides = list(args.set)
        if args.command == "scan":
            overrides.append('kind="scan"')
            for key in ("parameter", "lo", "hi", "tol"):
                value = getattr(args, key)
                if value is not None:
                    overrides.append(f"scan.{key}={json.dumps(value)}")
        config = load_config(args.config, overrides, args.seed, args.out)
        manifest = run(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FilippovError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps({"out": config.out, "kind": manifest.kind, "events": manifest.event_counts,
                      "summary": {k: v for k, v in manifest.summary.items() if k != "history"}},
                     default=_json_default))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
