"""Open-loop Nash equilibrium solver for constrained trajectory games.

Each of the M players minimizes its own cost over the shared state trajectory
and its own control sequence, subject to shared inequality constraints. The
solver runs an augmented-Lagrangian outer loop over the inequalities and, in
the inner loop, a Newton-type method on the concatenated per-player
stationarity conditions. States and dynamics multipliers are eliminated by
parameterizing the trajectory through the dynamics (single shooting), so the
dynamics hold exactly at every iterate and the per-player residual is the
reduced gradient of that player's augmented Lagrangian, computed by an
adjoint sweep. Hessians are Gauss-Newton: exact for linear-quadratic games,
positive-semidefinite approximations of the proximity and constraint terms
otherwise.

All operations are deterministic: identical problems and warm starts produce
bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import ConstraintSet


class SolverNumericalError(RuntimeError):
    """Raised when solver iterates become non-finite."""


@dataclass(frozen=True)
class SolverOptions:
    tol_stationarity: float = 1e-6
    tol_feasibility: float = 1e-6
    max_outer: int = 10
    max_inner: int = 30
    penalty_init: float = 1.0
    penalty_scale: float = 10.0
    penalty_max: float = 1e8
    reg_init: float = 1e-6
    reg_scale: float = 10.0
    reg_max: float = 1e10
    armijo: float = 1e-4
    max_backtracks: int = 10


# Tolerances relaxed for the receding-horizon loop, where warm starts keep
# iterates near the solution and millisecond budgets matter.
MPC_OPTIONS = SolverOptions(tol_stationarity=1e-3, tol_feasibility=1e-3,
                            max_outer=6, max_inner=20)


@dataclass
class GameProblem:
    """One constrained dynamic game instance.

    `dynamics` exposes step(x, u) / jacobians(x, u) on flat arrays with the
    time step baked in; `costs` is one object per player with a control_dim
    attribute and value / derivatives methods. The robot index is metadata
    used by callers that treat one player specially.
    """

    x0: np.ndarray
    dynamics: object
    costs: list
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    horizon: int = 21
    robot_index: int = 0

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if not self.costs:
            raise ValueError("need at least one player")

    @property
    def num_players(self) -> int:
        return len(self.costs)

    @property
    def control_dims(self) -> list[int]:
        return [c.control_dim for c in self.costs]

    @property
    def control_offsets(self) -> list[int]:
        offs = [0]
        for d in self.control_dims[:-1]:
            offs.append(offs[-1] + d)
        return offs


@dataclass
class OpenLoopSolution:
    X: np.ndarray                      # (N, n) state trajectory
    U: np.ndarray                      # (N-1, m_total) stacked controls
    multipliers: list[np.ndarray]      # per constraint family, (N,)
    stationarity: float
    violation: float
    iterations: int
    outer_iterations: int
    converged: bool
    player_slices: list[slice] = field(default_factory=list)

    def player_controls(self, player: int) -> np.ndarray:
        return self.U[:, self.player_slices[player]]

    def first_control(self) -> np.ndarray:
        return self.U[0].copy()


def _rollout(problem: GameProblem, U: np.ndarray) -> np.ndarray:
    N = problem.horizon
    X = np.empty((N, problem.x0.size))
    X[0] = problem.x0
    for k in range(N - 1):
        X[k + 1] = problem.dynamics.step(X[k], U[k])
    return X


class _IterState:
    """Everything evaluated at one control iterate."""

    __slots__ = ("U", "X", "A", "B", "qx", "gu", "Hxx", "Huu",
                 "residual", "res_flat", "violation", "finite")

    def __init__(self):
        self.finite = True


def _eval_state(problem: GameProblem, U: np.ndarray, lam: list[np.ndarray],
                rho: float, need_hessian: bool) -> _IterState:
    """Rollout, derivatives and per-player reduced AL gradients at U."""
    st = _IterState()
    st.U = U
    N = problem.horizon
    M = problem.num_players
    offsets = problem.control_offsets
    dims = problem.control_dims

    X = _rollout(problem, U)
    st.X = X
    if not np.all(np.isfinite(X)):
        st.finite = False
        return st

    st.A = [None] * (N - 1)
    st.B = [None] * (N - 1)
    for k in range(N - 1):
        st.A[k], st.B[k] = problem.dynamics.jacobians(X[k], U[k])

    # Per-player cost derivatives; qx accumulates the AL constraint gradients.
    st.qx = []
    st.gu = []
    st.Hxx = [] if need_hessian else None
    st.Huu = [] if need_hessian else None
    for nu in range(M):
        Uv = U[:, offsets[nu]:offsets[nu] + dims[nu]]
        gx, gu, Hxx, Huu = problem.costs[nu].derivatives(X, Uv)
        st.qx.append(np.array(gx, dtype=float))
        st.gu.append(np.array(gu, dtype=float))
        if need_hessian:
            st.Hxx.append(np.array(Hxx, dtype=float))
            st.Huu.append(Huu)

    # Augmented-Lagrangian contributions from the inequality constraints.
    # The step-0 state is fixed, so constraints there are excluded.
    violation = 0.0
    for fi, fam in enumerate(problem.constraints.families):
        vals = fam.values(X)
        grads = fam.grads(X)
        w = np.maximum(0.0, lam[fi] + rho * vals)
        w[0] = 0.0
        if vals[1:].size:
            violation = max(violation, float(np.maximum(0.0, vals[1:]).max()))
        active = np.nonzero(w > 0.0)[0]
        if active.size == 0:
            continue
        contrib = w[:, None] * grads
        for nu in fam.players:
            st.qx[nu] += contrib
            if need_hessian:
                ga = grads[active]
                st.Hxx[nu][active] += rho * np.einsum("ki,kj->kij", ga, ga)
    st.violation = violation

    # Reduced gradient per player via an adjoint sweep.
    st.residual = np.zeros_like(U)
    for nu in range(M):
        sl = slice(offsets[nu], offsets[nu] + dims[nu])
        p = st.qx[nu][N - 1]
        for k in range(N - 2, -1, -1):
            st.residual[k, sl] = st.gu[nu][k] + st.B[k][:, sl].T @ p
            if k > 0:
                p = st.qx[nu][k] + st.A[k].T @ p
    st.res_flat = st.residual.reshape(-1)
    if not np.all(np.isfinite(st.res_flat)):
        st.finite = False
    return st


def _stationarity(st: _IterState, problem: GameProblem) -> float:
    """Max over players of the 2-norm of that player's reduced gradient."""
    worst = 0.0
    offsets = problem.control_offsets
    dims = problem.control_dims
    for nu in range(problem.num_players):
        sl = slice(offsets[nu], offsets[nu] + dims[nu])
        worst = max(worst, float(np.linalg.norm(st.residual[:, sl])))
    return worst


def _newton_matrix(problem: GameProblem, st: _IterState) -> np.ndarray:
    """Gauss-Newton Jacobian of the concatenated stationarity conditions."""
    N = problem.horizon
    n = problem.x0.size
    m_tot = sum(problem.control_dims)
    D = (N - 1) * m_tot
    offsets = problem.control_offsets
    dims = problem.control_dims

    # Sensitivities of every state w.r.t. the flattened controls (time-major).
    S = np.zeros((N, n, D))
    for k in range(N - 1):
        if k > 0:
            S[k + 1] = st.A[k] @ S[k]
        S[k + 1][:, k * m_tot:(k + 1) * m_tot] += st.B[k]

    H = np.zeros((D, D))
    for nu in range(problem.num_players):
        sl = slice(offsets[nu], offsets[nu] + dims[nu])
        # P[k] = d(costate_k)/dU under Gauss-Newton linearization.
        P = st.Hxx[nu][N - 1] @ S[N - 1]
        for k in range(N - 2, -1, -1):
            rows = slice(k * m_tot + offsets[nu], k * m_tot + offsets[nu] + dims[nu])
            H[rows] = st.B[k][:, sl].T @ P
            H[rows, k * m_tot + offsets[nu]:k * m_tot + offsets[nu] + dims[nu]] += st.Huu[nu][k]
            if k > 0:
                P = st.Hxx[nu][k] @ S[k] + st.A[k].T @ P
    return H


def solve(problem: GameProblem, warm_start: OpenLoopSolution | None = None,
          options: SolverOptions = SolverOptions()) -> OpenLoopSolution:
    """Solve for an open-loop Nash equilibrium of the constrained game.

    Returns the best iterate with converged=False when the iteration budget
    runs out; raises SolverNumericalError only if accepted iterates become
    non-finite.
    """
    N = problem.horizon
    m_tot = sum(problem.control_dims)
    n_fam = len(problem.constraints.families)

    U = np.zeros((N - 1, m_tot))
    lam = [np.zeros(N) for _ in range(n_fam)]
    if warm_start is not None and warm_start.U.shape == U.shape:
        U = warm_start.U.copy()
        if len(warm_start.multipliers) == n_fam:
            lam = [m.copy() for m in warm_start.multipliers]

    if not np.all(np.isfinite(U)) or not np.all(np.isfinite(problem.x0)):
        raise SolverNumericalError("non-finite warm start or initial state")

    rho = options.penalty_init
    total_newton = 0
    best = None
    best_score = np.inf
    converged = False
    stationarity = np.inf
    st = None
    outer_done = 0

    for outer in range(options.max_outer):
        outer_done = outer + 1
        reg = options.reg_init
        st = _eval_state(problem, U, lam, rho, need_hessian=True)
        if not st.finite:
            raise SolverNumericalError("NaN in solver iterates")
        res_norm = np.linalg.norm(st.res_flat)

        for _ in range(options.max_inner):
            stationarity = _stationarity(st, problem)
            if stationarity <= options.tol_stationarity:
                break
            total_newton += 1
            H = _newton_matrix(problem, st)
            step = None
            while reg <= options.reg_max:
                try:
                    step = np.linalg.solve(H + reg * np.eye(H.shape[0]), -st.res_flat)
                except np.linalg.LinAlgError:
                    reg *= options.reg_scale
                    continue
                if np.all(np.isfinite(step)):
                    break
                reg *= options.reg_scale
            if step is None or not np.all(np.isfinite(step)):
                break
            dU = step.reshape(N - 1, m_tot)

            # Backtracking line search on the residual norm.
            alpha = 1.0
            accepted = None
            fallback = None
            fallback_norm = res_norm
            for _ in range(options.max_backtracks):
                trial = _eval_state(problem, U + alpha * dU, lam, rho,
                                    need_hessian=True)
                if trial.finite:
                    trial_norm = np.linalg.norm(trial.res_flat)
                    if trial_norm <= (1.0 - options.armijo * alpha) * res_norm:
                        accepted = (trial, trial_norm)
                        break
                    if trial_norm < fallback_norm:
                        fallback = (trial, trial_norm)
                        fallback_norm = trial_norm
                alpha *= 0.5
            if accepted is None and fallback is not None:
                accepted = fallback
            if accepted is None:
                # No progress along this direction; stiffen the system.
                reg = min(reg * options.reg_scale, options.reg_max)
                if reg >= options.reg_max:
                    break
                continue
            st, res_norm = accepted
            U = st.U
            reg = max(options.reg_init, reg / options.reg_scale)

        stationarity = _stationarity(st, problem)

        # First-order multiplier update. The updated multipliers equal the AL
        # weights used in the residual above, so the plain-Lagrangian residual
        # at these multipliers coincides with the reported stationarity.
        for fi, fam in enumerate(problem.constraints.families):
            vals = fam.values(st.X)
            lam[fi] = np.maximum(0.0, lam[fi] + rho * vals)
            lam[fi][0] = 0.0

        score = st.violation + stationarity
        if score < best_score:
            best_score = score
            best = (U.copy(), [m.copy() for m in lam], stationarity, st.violation, st.X.copy())
        if stationarity <= options.tol_stationarity and st.violation <= options.tol_feasibility:
            converged = True
            best = (U.copy(), [m.copy() for m in lam], stationarity, st.violation, st.X.copy())
            break
        if n_fam == 0:
            break
        rho = min(rho * options.penalty_scale, options.penalty_max)

    U_out, lam_out, stat_out, viol_out, X_out = best
    offsets = problem.control_offsets
    dims = problem.control_dims
    return OpenLoopSolution(
        X=X_out, U=U_out, multipliers=lam_out,
        stationarity=stat_out, violation=viol_out,
        iterations=total_newton, outer_iterations=outer_done,
        converged=converged,
        player_slices=[slice(offsets[nu], offsets[nu] + dims[nu])
                       for nu in range(problem.num_players)],
    )


def nash_residual(sol: OpenLoopSolution, problem: GameProblem) -> float:
    """First-order Nash stationarity of a candidate solution.

    Re-rolls the dynamics from the stored controls (dynamics-feasible
    parameterization) and measures, per player, the norm of the reduced
    gradient of cost plus multiplier-weighted constraints; returns the max
    over players.
    """
    lam = sol.multipliers if len(sol.multipliers) == len(problem.constraints.families) \
        else [np.zeros(problem.horizon) for _ in problem.constraints.families]
    st = _eval_state(problem, sol.U, lam, rho=0.0, need_hessian=False)
    if not st.finite:
        raise SolverNumericalError("NaN while evaluating residual")
    return _stationarity(st, problem)
