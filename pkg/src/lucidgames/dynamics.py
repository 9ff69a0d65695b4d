"""Unicycle vehicle dynamics, joint-system propagation and analytic Jacobians.

Each vehicle carries a 4d state (px, py, heading, speed) and a 2d control
(yaw_rate, accel). The joint system stacks M vehicles; the dynamics are
decoupled per vehicle, coupling enters only through costs and constraints.
Headings are kept unwrapped so trajectories stay continuous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STATE_DIM = 4
CONTROL_DIM = 2


@dataclass(frozen=True)
class VehicleState:
    px: float
    py: float
    heading: float
    speed: float

    def to_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.heading, self.speed], dtype=float)

    @staticmethod
    def from_array(arr) -> "VehicleState":
        px, py, heading, speed = (float(v) for v in arr)
        return VehicleState(px, py, heading, speed)


@dataclass(frozen=True)
class VehicleControl:
    yaw_rate: float
    accel: float

    def to_array(self) -> np.ndarray:
        return np.array([self.yaw_rate, self.accel], dtype=float)

    @staticmethod
    def from_array(arr) -> "VehicleControl":
        yaw_rate, accel = (float(v) for v in arr)
        return VehicleControl(yaw_rate, accel)


@dataclass(frozen=True)
class JointState:
    """Ordered states of all M vehicles; the ordering is fixed for a run."""

    vehicles: tuple[VehicleState, ...]

    def __post_init__(self):
        if len(self.vehicles) < 1:
            raise ValueError("JointState needs at least one vehicle")

    @property
    def num_vehicles(self) -> int:
        return len(self.vehicles)

    def to_array(self) -> np.ndarray:
        return np.concatenate([v.to_array() for v in self.vehicles])

    @staticmethod
    def from_array(arr, num_vehicles: int) -> "JointState":
        arr = np.asarray(arr, dtype=float)
        if arr.size != STATE_DIM * num_vehicles:
            raise ValueError(f"expected {STATE_DIM * num_vehicles} entries, got {arr.size}")
        return JointState(tuple(
            VehicleState.from_array(arr[STATE_DIM * i:STATE_DIM * (i + 1)])
            for i in range(num_vehicles)
        ))


@dataclass(frozen=True)
class JointControl:
    controls: tuple[VehicleControl, ...]

    def to_array(self) -> np.ndarray:
        return np.concatenate([c.to_array() for c in self.controls])

    @staticmethod
    def from_array(arr, num_vehicles: int) -> "JointControl":
        arr = np.asarray(arr, dtype=float)
        if arr.size != CONTROL_DIM * num_vehicles:
            raise ValueError(f"expected {CONTROL_DIM * num_vehicles} entries, got {arr.size}")
        return JointControl(tuple(
            VehicleControl.from_array(arr[CONTROL_DIM * i:CONTROL_DIM * (i + 1)])
            for i in range(num_vehicles)
        ))


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite value in dynamics input")


def unicycle_step(state, control, h: float):
    """Advance one vehicle by `h` seconds with the explicit midpoint (RK2) rule.

    Continuous model: px' = v cos(psi), py' = v sin(psi), psi' = omega, v' = a,
    with the control held constant over the step. Accepts either VehicleState /
    VehicleControl or plain 4- and 2-vectors; returns the same kind as given.
    """
    if h <= 0:
        raise ValueError("time step must be positive")
    as_objects = isinstance(state, VehicleState)
    s = state.to_array() if as_objects else np.asarray(state, dtype=float)
    c = control.to_array() if isinstance(control, VehicleControl) else np.asarray(control, dtype=float)
    _check_finite(s, c)
    out = _unicycle_step_arrays(s, c, h)
    return VehicleState.from_array(out) if as_objects else out


def _unicycle_step_arrays(s: np.ndarray, c: np.ndarray, h: float) -> np.ndarray:
    px, py, psi, v = s
    omega, a = c
    psi_mid = psi + 0.5 * h * omega
    v_mid = v + 0.5 * h * a
    return np.array([
        px + h * v_mid * np.cos(psi_mid),
        py + h * v_mid * np.sin(psi_mid),
        psi + h * omega,
        v + h * a,
    ])


def step_jacobians(state, control, h: float):
    """Analytic Jacobians of unicycle_step: d(next)/d(state) 4x4, d(next)/d(control) 4x2."""
    s = state.to_array() if isinstance(state, VehicleState) else np.asarray(state, dtype=float)
    c = control.to_array() if isinstance(control, VehicleControl) else np.asarray(control, dtype=float)
    _check_finite(s, c)
    _, _, psi, v = s
    omega, a = c
    psi_mid = psi + 0.5 * h * omega
    v_mid = v + 0.5 * h * a
    cp, sp = np.cos(psi_mid), np.sin(psi_mid)

    A = np.eye(STATE_DIM)
    A[0, 2] = -h * v_mid * sp
    A[0, 3] = h * cp
    A[1, 2] = h * v_mid * cp
    A[1, 3] = h * sp

    B = np.zeros((STATE_DIM, CONTROL_DIM))
    B[0, 0] = -0.5 * h * h * v_mid * sp
    B[0, 1] = 0.5 * h * h * cp
    B[1, 0] = 0.5 * h * h * v_mid * cp
    B[1, 1] = 0.5 * h * h * sp
    B[2, 0] = h
    B[3, 1] = h
    return A, B


def joint_step(x, u, h: float):
    """Propagate all vehicles one step; dynamics are decoupled per vehicle."""
    as_objects = isinstance(x, JointState)
    xa = x.to_array() if as_objects else np.asarray(x, dtype=float)
    ua = u.to_array() if isinstance(u, JointControl) else np.asarray(u, dtype=float)
    if xa.size % STATE_DIM != 0 or ua.size % CONTROL_DIM != 0:
        raise ValueError("bad joint state/control length")
    m = xa.size // STATE_DIM
    if ua.size // CONTROL_DIM != m:
        raise ValueError(f"state has {m} vehicles but control has {ua.size // CONTROL_DIM}")
    out = _joint_step_arrays(xa, ua, h, m)
    return JointState.from_array(out, m) if as_objects else out


def _joint_step_arrays(xa: np.ndarray, ua: np.ndarray, h: float, m: int) -> np.ndarray:
    _check_finite(xa, ua)
    # Vectorized midpoint step over all vehicles at once.
    s = xa.reshape(m, STATE_DIM)
    c = ua.reshape(m, CONTROL_DIM)
    psi_mid = s[:, 2] + 0.5 * h * c[:, 0]
    v_mid = s[:, 3] + 0.5 * h * c[:, 1]
    out = np.empty_like(s)
    out[:, 0] = s[:, 0] + h * v_mid * np.cos(psi_mid)
    out[:, 1] = s[:, 1] + h * v_mid * np.sin(psi_mid)
    out[:, 2] = s[:, 2] + h * c[:, 0]
    out[:, 3] = s[:, 3] + h * c[:, 1]
    return out.reshape(-1)


def rollout(x0, controls, h: float) -> np.ndarray:
    """Simulate the joint system under per-step joint controls.

    `controls` is an (N-1, m_total) array (or list of JointControl). Returns the
    (N, n) state trajectory with row 0 equal to the initial state.
    """
    xa = x0.to_array() if isinstance(x0, JointState) else np.asarray(x0, dtype=float)
    if len(controls) > 0 and isinstance(controls[0], JointControl):
        controls = np.stack([u.to_array() for u in controls])
    else:
        controls = np.asarray(controls, dtype=float)
    m = xa.size // STATE_DIM
    X = np.empty((len(controls) + 1, xa.size))
    X[0] = xa
    for k in range(len(controls)):
        X[k + 1] = _joint_step_arrays(X[k], controls[k], h, m)
    return X


class UnicycleJointDynamics:
    """Joint dynamics interface used by the game solver.

    Exposes step(x, u) and jacobians(x, u) on flat arrays, with the time step
    baked in. The control vector stacks all players' controls in player order.
    """

    def __init__(self, num_vehicles: int, h: float):
        if h <= 0:
            raise ValueError("time step must be positive")
        self.num_vehicles = num_vehicles
        self.h = h
        self.state_dim = STATE_DIM * num_vehicles
        self.control_dims = [CONTROL_DIM] * num_vehicles

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return _joint_step_arrays(np.asarray(x, float), np.asarray(u, float), self.h, self.num_vehicles)

    def jacobians(self, x: np.ndarray, u: np.ndarray):
        n, m = self.state_dim, self.num_vehicles
        A = np.zeros((n, n))
        B = np.zeros((n, CONTROL_DIM * m))
        for i in range(m):
            si = slice(STATE_DIM * i, STATE_DIM * (i + 1))
            ci = slice(CONTROL_DIM * i, CONTROL_DIM * (i + 1))
            Ai, Bi = step_jacobians(x[si], u[ci], self.h)
            A[si, si] = Ai
            B[si, ci] = Bi
        return A, B
