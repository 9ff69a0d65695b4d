"""Inequality constraints for the trajectory game.

Every family evaluates one scalar constraint per time step along the joint
trajectory, with the convention value <= 0 feasible. Families expose
vectorized values and gradients with respect to the step's joint state, plus
the set of players whose Lagrangians the constraint enters (a pairwise
collision constraint is shared by both involved players with a common
multiplier).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import STATE_DIM


class CollisionAvoidance:
    """Keep two vehicles' collision disks apart: value = min_dist - distance."""

    def __init__(self, vehicle_a: int, vehicle_b: int, min_dist: float):
        if vehicle_a == vehicle_b:
            raise ValueError("collision constraint needs two distinct vehicles")
        self.vehicle_a = vehicle_a
        self.vehicle_b = vehicle_b
        self.min_dist = float(min_dist)
        self.players = (vehicle_a, vehicle_b)

    def values(self, X: np.ndarray) -> np.ndarray:
        pa = X[:, STATE_DIM * self.vehicle_a:STATE_DIM * self.vehicle_a + 2]
        pb = X[:, STATE_DIM * self.vehicle_b:STATE_DIM * self.vehicle_b + 2]
        return self.min_dist - np.linalg.norm(pa - pb, axis=1)

    def grads(self, X: np.ndarray) -> np.ndarray:
        ia, ib = STATE_DIM * self.vehicle_a, STATE_DIM * self.vehicle_b
        diff = X[:, ia:ia + 2] - X[:, ib:ib + 2]
        dist = np.maximum(np.linalg.norm(diff, axis=1), 1e-9)
        unit = diff / dist[:, None]
        G = np.zeros_like(X)
        G[:, ia:ia + 2] = -unit
        G[:, ib:ib + 2] = unit
        return G


class LaneBoundary:
    """Half-plane road edge for one vehicle, inflated by its disk radius.

    side=+1 is the upper edge (py <= limit - margin), side=-1 the lower edge
    (py >= limit + margin).
    """

    def __init__(self, vehicle: int, limit: float, side: int, margin: float):
        if side not in (1, -1):
            raise ValueError("side must be +1 (upper) or -1 (lower)")
        self.vehicle = vehicle
        self.limit = float(limit)
        self.side = side
        self.margin = float(margin)
        self.players = (vehicle,)

    def values(self, X: np.ndarray) -> np.ndarray:
        py = X[:, STATE_DIM * self.vehicle + 1]
        if self.side == 1:
            return py - (self.limit - self.margin)
        return (self.limit + self.margin) - py

    def grads(self, X: np.ndarray) -> np.ndarray:
        G = np.zeros_like(X)
        G[:, STATE_DIM * self.vehicle + 1] = float(self.side)
        return G


class ObstacleAvoidance:
    """Static disk obstacle for one vehicle: value = min_dist - distance."""

    def __init__(self, vehicle: int, center, min_dist: float):
        self.vehicle = vehicle
        self.center = np.asarray(center, dtype=float)
        self.min_dist = float(min_dist)
        self.players = (vehicle,)

    def values(self, X: np.ndarray) -> np.ndarray:
        p = X[:, STATE_DIM * self.vehicle:STATE_DIM * self.vehicle + 2]
        return self.min_dist - np.linalg.norm(p - self.center, axis=1)

    def grads(self, X: np.ndarray) -> np.ndarray:
        i = STATE_DIM * self.vehicle
        diff = X[:, i:i + 2] - self.center
        dist = np.maximum(np.linalg.norm(diff, axis=1), 1e-9)
        G = np.zeros_like(X)
        G[:, i:i + 2] = -diff / dist[:, None]
        return G


class EllipseKeepOut:
    """Per-step elliptical keep-out zones imposed on one vehicle (the robot).

    `ellipses` maps a horizon step to a (center, inverse shape matrix) pair;
    steps without an entry are unconstrained. value = 1 - (p-c)^T E^-1 (p-c),
    so being outside the ellipse is feasible.
    """

    def __init__(self, vehicle: int, ellipses: dict[int, tuple[np.ndarray, np.ndarray]]):
        self.vehicle = vehicle
        self.ellipses = {int(k): (np.asarray(c, float), np.asarray(E, float))
                         for k, (c, E) in ellipses.items()}
        self.players = (vehicle,)

    def values(self, X: np.ndarray) -> np.ndarray:
        vals = np.full(X.shape[0], -1.0)
        i = STATE_DIM * self.vehicle
        for k, (c, Einv) in self.ellipses.items():
            if k < X.shape[0]:
                d = X[k, i:i + 2] - c
                vals[k] = 1.0 - d @ Einv @ d
        return vals

    def grads(self, X: np.ndarray) -> np.ndarray:
        G = np.zeros_like(X)
        i = STATE_DIM * self.vehicle
        for k, (c, Einv) in self.ellipses.items():
            if k < X.shape[0]:
                d = X[k, i:i + 2] - c
                G[k, i:i + 2] = -2.0 * Einv @ d
        return G


class ConstraintSet:
    """Collection of constraint families evaluated along a trajectory."""

    def __init__(self, families=()):
        self.families = list(families)

    def __len__(self) -> int:
        return len(self.families)

    def add(self, family) -> None:
        self.families.append(family)

    def extended(self, extra_families) -> "ConstraintSet":
        return ConstraintSet(self.families + list(extra_families))


@dataclass(frozen=True)
class ConstraintEval:
    family_index: int
    step: int
    value: float
    grad_x: np.ndarray
    players: tuple[int, ...]


def evaluate_constraints(X: np.ndarray, U: np.ndarray, constraints: ConstraintSet):
    """Per-constraint signed values (<= 0 feasible) and state gradients.

    Returns one record per (family, step). Constraints here are functions of
    the state trajectory only; U is accepted for interface uniformity.
    """
    X = np.asarray(X, dtype=float)
    records = []
    for fi, fam in enumerate(constraints.families):
        vals = fam.values(X)
        grads = fam.grads(X)
        for k in range(X.shape[0]):
            records.append(ConstraintEval(fi, k, float(vals[k]), grads[k], tuple(fam.players)))
    return records


def max_violation(X: np.ndarray, constraints: ConstraintSet, skip_initial: bool = True) -> float:
    """Largest positive constraint value along the trajectory (0 if feasible)."""
    worst = 0.0
    lo = 1 if skip_initial else 0
    for fam in constraints.families:
        vals = fam.values(X)
        if vals[lo:].size:
            worst = max(worst, float(vals[lo:].max()))
    return worst
