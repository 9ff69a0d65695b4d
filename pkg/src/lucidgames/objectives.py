"""Per-player driving objectives and their parameterization.

A player's cost is quadratic tracking toward a desired state plus a quadratic
control effort term and a hinged proximity penalty that activates when two
vehicles come closer than an activation distance. The three estimated
parameters per agent are (desired_speed, desired_lane_y, aggressiveness);
aggressiveness scales the proximity penalty, so larger values produce more
cautious driving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import CONTROL_DIM, STATE_DIM

PARAMS_PER_AGENT = 3


@dataclass(frozen=True)
class ObjectiveParams:
    desired_speed: float
    desired_lane_y: float
    aggressiveness: float

    def to_array(self) -> np.ndarray:
        return np.array([self.desired_speed, self.desired_lane_y, self.aggressiveness], dtype=float)

    @staticmethod
    def from_array(arr) -> "ObjectiveParams":
        v, y, g = (float(x) for x in arr)
        return ObjectiveParams(v, y, g)


@dataclass(frozen=True)
class CostWeights:
    """Weight matrices and proximity-penalty shape for one player.

    Q and Qf act on the joint state (n x n, PSD), R_ctrl on this player's own
    controls (PD). `radii` holds the collision-disk radius of every vehicle so
    pairwise activation distances eta * (r_i + r_j) can be formed locally.
    """

    Q: np.ndarray
    R_ctrl: np.ndarray
    Qf: np.ndarray
    eta: float
    radii: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R_ctrl", np.asarray(self.R_ctrl, dtype=float))
        object.__setattr__(self, "Qf", np.asarray(self.Qf, dtype=float))
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=float))
        if self.eta <= 1.0:
            raise ValueError("activation scale eta must exceed 1")


def pack_theta(params: list[ObjectiveParams]) -> np.ndarray:
    """Concatenate per-agent parameters into the flat estimated vector.

    Ordering: agents in joint-state order with the robot excluded, each
    contributing (desired_speed, desired_lane_y, aggressiveness).
    """
    if len(params) == 0:
        raise ValueError("need at least one agent's parameters")
    return np.concatenate([p.to_array() for p in params])


def unpack_theta(theta: np.ndarray) -> list[ObjectiveParams]:
    theta = np.asarray(theta, dtype=float)
    if theta.size % PARAMS_PER_AGENT != 0:
        raise ValueError(f"theta length {theta.size} is not a multiple of {PARAMS_PER_AGENT}")
    return [
        ObjectiveParams.from_array(theta[i:i + PARAMS_PER_AGENT])
        for i in range(0, theta.size, PARAMS_PER_AGENT)
    ]


def goal_state(params: ObjectiveParams, player: int, num_vehicles: int) -> np.ndarray:
    """Joint desired state for one player.

    Only the player's own block is meaningful: desired lateral position and
    desired speed, heading 0. Longitudinal position is left at zero and must
    carry zero weight in Q, otherwise tracking on an open road is ill-posed.
    """
    xf = np.zeros(STATE_DIM * num_vehicles)
    base = STATE_DIM * player
    xf[base + 1] = params.desired_lane_y
    xf[base + 3] = params.desired_speed
    return xf


def _positions(X: np.ndarray, num_vehicles: int) -> np.ndarray:
    """(N, M, 2) view of the vehicle positions along a trajectory."""
    return X.reshape(X.shape[0], num_vehicles, STATE_DIM)[:, :, :2]


def _pair_hinges(X: np.ndarray, player: int, weights: CostWeights, num_vehicles: int):
    """Hinge terms max(0, eta*(r_v+r_u) - dist) against every other vehicle.

    Returns (hinge (N, M), diff (N, M, 2), dist (N, M)); the player's own
    column is zeroed. The hinge is positive only when the pair is closer than
    the activation distance.
    """
    pos = _positions(X, num_vehicles)
    diff = pos[:, player, None, :] - pos
    dist = np.linalg.norm(diff, axis=2)
    activation = weights.eta * (weights.radii[player] + weights.radii)
    hinge = np.maximum(0.0, activation - dist)
    hinge[:, player] = 0.0
    return hinge, diff, dist


def evaluate_cost(X: np.ndarray, U: np.ndarray, params: ObjectiveParams,
                  weights: CostWeights, player: int) -> float:
    """Total cost of a joint trajectory for one player.

    X is (N, n) and U is (N-1, control dim of this player). Stage tracking and
    control costs run over steps 0..N-2, the terminal cost weighs the final
    state, and the proximity penalty is summed over every step and every other
    vehicle. Aggressiveness is clamped at zero here; the belief over it stays
    unconstrained elsewhere.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    num_vehicles = X.shape[1] // STATE_DIM
    xf = goal_state(params, player, num_vehicles)
    dx = X - xf

    stage = 0.5 * np.einsum("ki,ij,kj->", dx[:-1], weights.Q, dx[:-1])
    ctrl = 0.5 * np.einsum("ki,ij,kj->", U, weights.R_ctrl, U)
    terminal = 0.5 * dx[-1] @ weights.Qf @ dx[-1]

    gamma = max(0.0, params.aggressiveness)
    hinge, _, _ = _pair_hinges(X, player, weights, num_vehicles)
    proximity = gamma * np.sum(hinge ** 2)
    return float(stage + ctrl + terminal + proximity)


def feature_expansion(X: np.ndarray, U: np.ndarray, weights: CostWeights, player: int):
    """Split the cost into features and lifted weights so cost = phi @ theta_lift.

    The tracking terms are quadratic in the desired state and the proximity
    penalty is linear in aggressiveness, so with the square expanded the whole
    cost is linear in the lifted weight vector. Returns (phi, lift) where
    `lift(params)` builds the matching lifted weights.

    Feature layout: [quadratic state cost, linear state features (n),
    constant, quadratic control cost, per-pair summed squared hinges (M-1)].
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    num_vehicles = X.shape[1] // STATE_DIM
    n = X.shape[1]
    n_stage = X.shape[0] - 1

    quad_state = 0.5 * np.einsum("ki,ij,kj->", X[:-1], weights.Q, X[:-1]) \
        + 0.5 * X[-1] @ weights.Qf @ X[-1]
    lin_state = weights.Q @ X[:-1].sum(axis=0) + weights.Qf @ X[-1]
    quad_ctrl = 0.5 * np.einsum("ki,ij,kj->", U, weights.R_ctrl, U)
    hinge, _, _ = _pair_hinges(X, player, weights, num_vehicles)
    pair_cols = [mu for mu in range(num_vehicles) if mu != player]
    pair_features = np.sum(hinge[:, pair_cols] ** 2, axis=0)

    phi = np.concatenate([[quad_state], lin_state, [1.0], [quad_ctrl], pair_features])

    def lift(params: ObjectiveParams) -> np.ndarray:
        xf = goal_state(params, player, num_vehicles)
        const = 0.5 * n_stage * xf @ weights.Q @ xf + 0.5 * xf @ weights.Qf @ xf
        gamma = max(0.0, params.aggressiveness)
        return np.concatenate([[1.0], -xf, [const], [1.0], np.full(len(pair_cols), gamma)])

    return phi, lift


def cost_derivatives(X: np.ndarray, U: np.ndarray, params: ObjectiveParams,
                     weights: CostWeights, player: int):
    """Gradient and Gauss-Newton Hessian blocks of the cost.

    Returns (gx (N, n), gu (N-1, m), Hxx (N, n, n), Huu (N-1, m, m)). The
    proximity Hessian keeps only the PSD outer-product term of the hinge
    residual, dropping its curvature (Gauss-Newton), which also sidesteps the
    kink at the activation boundary.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    N, n = X.shape
    num_vehicles = n // STATE_DIM
    xf = goal_state(params, player, num_vehicles)
    dx = X - xf

    gx = dx @ weights.Q
    gx[-1] = weights.Qf @ dx[-1]
    gu = U @ weights.R_ctrl

    Hxx = np.broadcast_to(weights.Q, (N, n, n)).copy()
    Hxx[-1] = weights.Qf
    Huu = np.broadcast_to(weights.R_ctrl, (N - 1,) + weights.R_ctrl.shape).copy()

    gamma = max(0.0, params.aggressiveness)
    if gamma > 0.0:
        hinge, diff, dist = _pair_hinges(X, player, weights, num_vehicles)
        ks, mus = np.nonzero(hinge > 0.0)
        for k, mu in zip(ks, mus):
            d = diff[k, mu]
            r = dist[k, mu]
            if r < 1e-12:
                continue  # coincident centers: no usable direction
            unit = d / r
            # d/dp of gamma*(act - |p_v - p_mu|)^2 along the separating direction
            g2 = -2.0 * gamma * hinge[k, mu] * unit
            pv = STATE_DIM * player
            pm = STATE_DIM * mu
            gx[k, pv:pv + 2] += g2
            gx[k, pm:pm + 2] -= g2
            gn = 2.0 * gamma * np.outer(unit, unit)
            Hxx[k, pv:pv + 2, pv:pv + 2] += gn
            Hxx[k, pm:pm + 2, pm:pm + 2] += gn
            Hxx[k, pv:pv + 2, pm:pm + 2] -= gn
            Hxx[k, pm:pm + 2, pv:pv + 2] -= gn
    return gx, gu, Hxx, Huu


class ParameterizedCost:
    """Player cost object consumed by the game solver."""

    def __init__(self, params: ObjectiveParams, weights: CostWeights, player: int):
        self.params = params
        self.weights = weights
        self.player = player
        self.control_dim = weights.R_ctrl.shape[0]

    def value(self, X: np.ndarray, U: np.ndarray) -> float:
        return evaluate_cost(X, U, self.params, self.weights, self.player)

    def derivatives(self, X: np.ndarray, U: np.ndarray):
        return cost_derivatives(X, U, self.params, self.weights, self.player)
