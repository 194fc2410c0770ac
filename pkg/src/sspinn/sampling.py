"""Collocation points: two-density interior sampling and constraint loci."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field_model import ConfigurationError
from .problems import Box, ConstraintSpec, ProblemSpec


@dataclass
class CollocationSet:
    interior: np.ndarray
    boundary: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def n_interior(self):
        return len(self.interior)

    def counts(self):
        return {"interior": self.n_interior, **{k: len(v) for k, v in self.boundary.items()}}

    def to_rows(self):
        """``(set, y...)`` rows for dumping the realized point set."""
        rows = [("interior", *p) for p in self.interior]
        for k, pts in self.boundary.items():
            rows.extend((k, *p) for p in pts)
        return rows


def sample_interior(domain: Box, n_near: int, n_far: int, r_split: float, seed: int) -> np.ndarray:
    """Uniform points in the near-origin sub-box ``domain & [-r, r]^d`` and in its complement."""
    if n_near < 0 or n_far < 0 or n_near + n_far == 0:
        raise ConfigurationError("collocation counts must be non-negative and not both zero")
    lo, hi = np.array(domain.lo), np.array(domain.hi)
    nlo, nhi = np.maximum(lo, -r_split), np.minimum(hi, r_split)
    if not (r_split > 0 and np.all(nlo < nhi) and (np.any(nlo > lo) or np.any(nhi < hi))):
        raise ConfigurationError(f"r_split={r_split} must lie strictly inside the domain")
    near = Box(tuple(nlo), tuple(nhi))
    rng = np.random.default_rng(seed)
    pts_near = nlo + (nhi - nlo) * rng.random((n_near, domain.dim))
    far = np.empty((0, domain.dim))
    batch = max(64, 2 * n_far)
    while len(far) < n_far:
        cand = lo + (hi - lo) * rng.random((batch, domain.dim))
        keep = ~near.contains(cand)
        far = np.concatenate([far, cand[keep]])
    return np.concatenate([pts_near, far[:n_far]])


def sample_boundary(constraint: ConstraintSpec, domain: Box, n: int, seed: int) -> np.ndarray:
    """``n`` points uniformly on the constraint locus (a point locus yields one row)."""
    locus = constraint.locus
    if locus.kind == "point":
        return np.array([locus.point], dtype=float)
    if not locus.faces:
        raise ConfigurationError(f"constraint {constraint.id} has an empty locus")
    rng = np.random.default_rng(seed)
    lo, hi = np.array(domain.lo), np.array(domain.hi)
    d = domain.dim
    lengths = np.array([np.prod(np.delete(hi - lo, axis)) if d > 1 else 1.0 for axis, _ in locus.faces])
    which = rng.choice(len(locus.faces), size=n, p=lengths / lengths.sum())
    pts = lo + (hi - lo) * rng.random((n, d))
    for k, (axis, value) in enumerate(locus.faces):
        pts[which == k, axis] = value
    return pts


def build_collocation(problem: ProblemSpec, n_near: int, n_far: int, r_split: float,
                      n_boundary: int, seed: int) -> CollocationSet:
    """Interior plus per-constraint points, each stream seeded from ``seed``."""
    ss = np.random.SeedSequence(seed)
    seeds = ss.generate_state(1 + len(problem.constraints))
    interior = sample_interior(problem.domain, n_near, n_far, r_split, int(seeds[0]))
    boundary = {}
    for c, s in zip(problem.constraints, seeds[1:]):
        boundary[c.id] = sample_boundary(c, problem.domain, n_boundary, int(s))
    return CollocationSet(interior, boundary, seed)
