"""Receding-horizon wrapper around the horizon solver.

Runs at the control rate but re-solves only every resolve period; cycles in
between replay the latest plan with the time-varying LQR feedback from the
backward pass, so measurement deviations are still corrected at full rate.
"""
from __future__ import annotations

import numpy as np

from ..arm_model import ArmParams, fk_ee_arrays
from ..geometry import orthonormalize_fast
from ..uav_dynamics import UavParams
from .problem import EeTarget, MpcConfig, MpcControl, MpcProblem, MpcState, \
    MpcWeights
from .solver import MpcSolution, SolverDivergence, solve


class EeMpcController:
    """End-effector pose controller commanding base wrench + joint targets.

    target_fn, when given, maps absolute time to an EeTarget and is sampled
    across the horizon (trajectory preview). Otherwise the controller holds
    the target last passed to set_target().
    """

    def __init__(self, uav: UavParams, arm: ArmParams,
                 weights: MpcWeights | None = None,
                 config: MpcConfig | None = None,
                 target_fn=None, resolve_hz: float = 25.0):
        self.uav = uav
        self.arm = arm
        self.weights = weights if weights is not None else MpcWeights()
        self.config = config if config is not None else MpcConfig()
        self.target_fn = target_fn
        self._held_target = None
        self.resolve_period = 1.0 / float(resolve_hz)
        self._problem: MpcProblem | None = None
        self._solution: MpcSolution | None = None
        self._last_solve_t = -np.inf
        self.solve_times: list[float] = []
        self.divergences = 0

    def set_target(self, target: EeTarget):
        self._held_target = target

    def reset(self):
        self._problem = None
        self._solution = None
        self._last_solve_t = -np.inf
        self.solve_times.clear()
        self.divergences = 0

    # -- internals ---------------------------------------------------------

    def _targets_at(self, t: float) -> list[EeTarget]:
        if self.target_fn is not None:
            dt = self.config.dt
            return [self.target_fn(t + k * dt)
                    for k in range(self.config.steps + 1)]
        if self._held_target is None:
            raise RuntimeError("no target set and no target function given")
        return [self._held_target]

    def _sanitize(self, state: MpcState) -> MpcState:
        """Condition a measurement onto the feasible set: noisy or biased
        estimates must not take the problem transcription down."""
        lims = self.arm.joint_limits
        theta = np.clip(state.theta, lims[:, 0], lims[:, 1])
        v = state.v.copy()
        cap = self.config.v_max * 1.99
        speed = np.linalg.norm(v[:3])
        if speed > cap:
            v[:3] *= cap / speed
        cap = self.config.omega_max * 1.99
        rate = np.linalg.norm(v[3:])
        if rate > cap:
            v[3:] *= cap / rate
        return MpcState(state.p, orthonormalize_fast(state.R), v, theta)

    def _resolve(self, t: float, state: MpcState):
        if self._problem is None:
            self._problem = MpcProblem(self.uav, self.arm, self.weights,
                                       self.config, state,
                                       self._targets_at(t))
        else:
            self._problem.set_initial_state(state)
            self._problem.set_targets(self._targets_at(t))
            self._problem.refresh_control_reference()
        warm = None
        if self._solution is not None and self.config.mode == "rti":
            warm = self._solution.as_trajectory()
        u_init = None if self._solution is None else self._solution.controls
        try:
            self._solution = solve(self._problem, u_init=u_init,
                                   warm_traj=warm)
        except SolverDivergence as err:  # only reachable in 'full' mode
            self.divergences += 1
            if err.solution is None:
                raise
            self._solution = err.solution
        self._last_solve_t = t
        self.solve_times.append(self._solution.solve_time)

    # -- main entry ---------------------------------------------------------

    def update(self, t: float, state: MpcState) -> MpcControl:
        state = self._sanitize(state)
        if t - self._last_solve_t >= self.resolve_period - 1e-9:
            self._resolve(t, state)
        sol = self._solution
        u = sol.controls[0]
        if sol.feedback is not None:
            P, R, V, TH = sol.states
            dx = self._problem.state_diff(state.p, state.R, state.v,
                                          state.theta, P[0], R[0], V[0], TH[0])
            u = np.clip(u + sol.feedback[0] @ dx,
                        self.config.u_lb, self.config.u_ub)
        return MpcControl.from_vector(u)

    # -- introspection -------------------------------------------------------

    @property
    def last_solution(self) -> MpcSolution | None:
        return self._solution

    def predicted_ee_path(self) -> np.ndarray | None:
        """EE positions along the latest predicted state sequence."""
        if self._solution is None:
            return None
        P, R, V, TH = self._solution.states
        p_ee, _ = fk_ee_arrays(P, R, TH, self.arm)
        return p_ee
