"""Synthetic population with static group memberships per location type."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from ..ad.rng import RngStream

# Fraction of a day spent in effective contact at each location. With one
# day per step this sets how fast the ground-truth epidemic grows.
DEFAULT_DURATION = 0.03

LOCATION_TYPES = (
    "household", "care_home", "school", "company", "university",
    "pub", "shop", "gym", "cinema", "visit",
)


@dataclass(frozen=True)
class GroupSpec:
    """How agents are grouped at one location type.

    ``participation`` is the probability an agent attends this location type at
    all; ``mean_size`` is the mean group size (truncated geometric on
    ``1..max_size``); ``duration`` is the daily interaction time in days.
    """

    mean_size: float
    participation: float = 1.0
    max_size: int = 50
    duration: float = DEFAULT_DURATION

    def __post_init__(self):
        if self.mean_size < 1 or self.max_size < 1 or self.mean_size > self.max_size:
            raise ValueError("need 1 <= mean_size <= max_size")
        if not 0.0 <= self.participation <= 1.0:
            raise ValueError("participation must lie in [0, 1]")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")


DEFAULT_GROUPS = {
    "household": GroupSpec(2.4, 1.0, 8),
    "care_home": GroupSpec(10.0, 0.01, 20),
    "school": GroupSpec(15.0, 0.18, 30),
    "company": GroupSpec(6.0, 0.45, 20),
    "university": GroupSpec(15.0, 0.04, 30),
    "pub": GroupSpec(4.0, 0.25, 10),
    "shop": GroupSpec(4.0, 0.35, 10),
    "gym": GroupSpec(4.0, 0.10, 10),
    "cinema": GroupSpec(4.0, 0.10, 10),
    "visit": GroupSpec(3.0, 0.20, 8),
}


def _geometric_p(mean: float, max_size: int) -> float:
    """Success probability of a geometric on 1..max_size with the given mean."""
    if mean <= 1.0:
        return 1.0
    if mean >= (max_size + 1) / 2.0 - 1e-12:
        return 1e-9

    def truncated_mean(p):
        k = np.arange(1, max_size + 1)
        w = p * (1 - p) ** (k - 1)
        return float((k * w).sum() / w.sum()) - mean

    return brentq(truncated_mean, 1e-9, 1.0 - 1e-12)


def _draw_sizes(total: int, spec: GroupSpec, rng: RngStream) -> np.ndarray:
    p = _geometric_p(spec.mean_size, spec.max_size)
    k = np.arange(1, spec.max_size + 1)
    w = p * (1 - p) ** (k - 1)
    cdf = np.cumsum(w / w.sum())
    sizes = []
    filled = 0
    while filled < total:
        batch = k[np.searchsorted(cdf, rng.uniform(max(16, total // 2)), side="right").clip(0, len(k) - 1)]
        for s in batch:
            s = min(int(s), total - filled)
            sizes.append(s)
            filled += s
            if filled >= total:
                break
    return np.asarray(sizes, dtype=int)


@dataclass
class Population:
    n_agents: int
    groups: dict  # location type -> group id per agent (-1 = not attending)
    susceptibility: np.ndarray = None
    _contacts: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.susceptibility is None:
            self.susceptibility = np.ones(self.n_agents)
        self.susceptibility = np.asarray(self.susceptibility, dtype=float)
        hh = self.groups.get("household")
        if hh is None or np.any(hh < 0):
            raise ValueError("every agent must belong to exactly one household")

    def n_groups(self, location: str) -> int:
        ids = self.groups[location]
        return int(ids.max()) + 1 if ids.size and ids.max() >= 0 else 0

    def group_sizes(self, location: str) -> np.ndarray:
        ids = self.groups[location]
        return np.bincount(ids[ids >= 0], minlength=self.n_groups(location))

    def membership(self, location: str) -> sp.csr_matrix:
        """Sparse (groups x agents) indicator matrix."""
        ids = self.groups[location]
        agents = np.nonzero(ids >= 0)[0]
        return sp.csr_matrix((np.ones(agents.size), (ids[agents], agents)),
                             shape=(self.n_groups(location), self.n_agents))

    def contacts(self, location: str) -> sp.csr_matrix:
        """(agents x agents) matrix of shared-group contacts, self excluded."""
        if location not in self._contacts:
            m = self.membership(location)
            a = (m.T @ m).tocsr()
            a.setdiag(0.0)
            a.eliminate_zeros()
            self._contacts[location] = a
        return self._contacts[location]

    def stacked_contacts(self, locations=LOCATION_TYPES) -> sp.csr_matrix:
        key = ("stack",) + tuple(locations)
        if key not in self._contacts:
            self._contacts[key] = sp.vstack([self.contacts(loc) for loc in locations]).tocsr()
        return self._contacts[key]

    def group_structure(self, locations=LOCATION_TYPES):
        """Stacked memberships of all groups of ``locations``.

        Returns ``(groups, group_location, attends)``: a sparse (total groups x
        agents) indicator, the location index of every group row, and a dense
        (agents x locations) attendance indicator.
        """
        key = ("groups",) + tuple(locations)
        if key not in self._contacts:
            mats, owner = [], []
            attends = np.zeros((self.n_agents, len(locations)))
            for j, loc in enumerate(locations):
                if loc not in self.groups:
                    continue
                m = self.membership(loc)
                mats.append(m)
                owner.append(np.full(m.shape[0], j))
                attends[:, j] = self.groups[loc] >= 0
            groups = sp.vstack(mats).tocsr()
            self._contacts[key] = (groups, np.concatenate(owner), attends, groups.T.tocsr())
        return self._contacts[key]

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "groups": {k: v.tolist() for k, v in self.groups.items()},
            "susceptibility": self.susceptibility.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Population":
        groups = {k: np.asarray(v, dtype=int) for k, v in data["groups"].items()}
        return cls(int(data["n_agents"]), groups, np.asarray(data.get("susceptibility"), dtype=float)
                   if data.get("susceptibility") is not None else None)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Population":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def synth_population(n_agents: int, config: dict | None = None, rng: RngStream | None = None) -> Population:
    """Build a population of ``n_agents``.

    Households partition all agents. For every other location type each agent
    attends independently with the type's participation probability and the
    attendees are shuffled into groups.
    """
    if n_agents < 1:
        raise ValueError("population needs at least one agent")
    config = dict(DEFAULT_GROUPS if config is None else config)
    if "household" not in config:
        raise ValueError("config must define households")
    rng = rng or RngStream(0)
    groups = {}
    for loc, spec in config.items():
        if not isinstance(spec, GroupSpec):
            spec = GroupSpec(**spec)
        stream = rng.spawn("population", loc)
        ids = np.full(n_agents, -1, dtype=int)
        if loc == "household":
            attendees = stream.permutation(n_agents)
        else:
            attendees = np.nonzero(stream.uniform(n_agents) < spec.participation)[0]
            attendees = attendees[stream.permutation(attendees.size)]
        if attendees.size:
            sizes = _draw_sizes(attendees.size, spec, stream)
            ids[attendees] = np.repeat(np.arange(sizes.size), sizes)
        groups[loc] = ids
    return Population(n_agents, groups)


def durations(config: dict | None = None, locations=LOCATION_TYPES) -> np.ndarray:
    config = DEFAULT_GROUPS if config is None else config
    out = []
    for loc in locations:
        spec = config.get(loc)
        if spec is None:
            out.append(0.0)
        else:
            out.append(spec.duration if isinstance(spec, GroupSpec) else spec.get("duration", DEFAULT_DURATION))
    return np.asarray(out, dtype=float)
