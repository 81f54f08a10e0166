"""Selection rules for points where the forward flow is not unique.

At a double tangency, or when an orbit grazes the edge of a repelling
sliding region, the flow may stick to the surface for any duration and then
leave along either field. A :class:`BranchPolicy` picks one such outcome so
that a single orbit can be integrated; the explosion builders enumerate all
of them instead.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .system import Branch


class PolicyMode(str, enum.Enum):
    REFUSE = "refuse"
    DETERMINISTIC = "deterministic"
    UNIFORM_RANDOM = "uniform_random"
    ENUMERATE_GRID = "enumerate_grid"


@dataclass(frozen=True)
class Choice:
    """Stick for ``tau`` then release along ``branch``."""

    tau: float
    branch: Branch

    def as_dict(self) -> dict:
        return {"tau": self.tau, "branch": self.branch.value}


@dataclass
class BranchPolicy:
    """How an orbit continues through a non-deterministic point.

    Use the constructors :meth:`refuse`, :meth:`deterministic`,
    :meth:`uniform_random` and :meth:`enumerate_grid` rather than the raw
    fields. Random policies own a generator and are therefore stateful;
    build a fresh one (or call :meth:`for_orbit`) per orbit.
    """

    mode: PolicyMode = PolicyMode.REFUSE
    branch: Branch = Branch.PLUS
    tau: float = 0.0
    seed: Optional[int] = None
    tau_cap: float = 10.0
    n_tau: int = 64
    _rng: Optional[np.random.Generator] = field(default=None, repr=False, compare=False)
    _ss: Optional[np.random.SeedSequence] = field(default=None, repr=False, compare=False)
    draws: list = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def refuse(cls) -> "BranchPolicy":
        return cls(PolicyMode.REFUSE)

    @classmethod
    def deterministic(cls, branch: Branch | str, tau: float = 0.0) -> "BranchPolicy":
        if tau < 0:
            raise ValueError("tau must be non-negative")
        return cls(PolicyMode.DETERMINISTIC, branch=Branch.coerce(branch), tau=float(tau))

    @classmethod
    def uniform_random(cls, seed: int | np.random.SeedSequence, tau_cap: float = 10.0) -> "BranchPolicy":
        if tau_cap < 0:
            raise ValueError("tau_cap must be non-negative")
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
        pol = cls(PolicyMode.UNIFORM_RANDOM, seed=ss.entropy, tau_cap=float(tau_cap))
        pol._ss = ss
        pol._rng = np.random.default_rng(ss)
        return pol

    @classmethod
    def enumerate_grid(cls, n_tau: int = 64) -> "BranchPolicy":
        if n_tau < 1:
            raise ValueError("n_tau must be >= 1")
        return cls(PolicyMode.ENUMERATE_GRID, n_tau=int(n_tau))

    def for_orbit(self, index: int, n_orbits: int) -> "BranchPolicy":
        """Independent per-orbit copy; random streams are spawned from the master seed."""
        if self.mode is not PolicyMode.UNIFORM_RANDOM:
            return BranchPolicy(self.mode, self.branch, self.tau, self.seed, self.tau_cap, self.n_tau)
        children = np.random.SeedSequence(self._ss.entropy, spawn_key=self._ss.spawn_key).spawn(n_orbits)
        return BranchPolicy.uniform_random(children[index], self.tau_cap)

    def tau_grid(self, span: float) -> np.ndarray:
        return np.linspace(0.0, max(span, 0.0), self.n_tau + 1)

    def choose(self) -> Optional[Choice]:
        """Outcome for the next non-deterministic point, or ``None`` to stop there."""
        if self.mode is PolicyMode.REFUSE:
            return None
        if self.mode is PolicyMode.DETERMINISTIC:
            return Choice(self.tau, self.branch)
        if self.mode is PolicyMode.UNIFORM_RANDOM:
            tau = float(self._rng.uniform(0.0, self.tau_cap))
            branch = Branch.PLUS if self._rng.integers(2) == 1 else Branch.MINUS
            choice = Choice(tau, branch)
            self.draws.append(choice)
            return choice
        raise ValueError("an enumerate_grid policy is set-valued; build an explosion bundle instead")

    def describe(self) -> dict:
        out = {"mode": self.mode.value}
        if self.mode is PolicyMode.DETERMINISTIC:
            out.update(branch=self.branch.value, tau=self.tau)
        elif self.mode is PolicyMode.UNIFORM_RANDOM:
            out.update(seed=str(self.seed), tau_cap=self.tau_cap, tau_distribution="uniform",
                       branch_distribution="uniform")
        elif self.mode is PolicyMode.ENUMERATE_GRID:
            out.update(n_tau=self.n_tau)
        return out
