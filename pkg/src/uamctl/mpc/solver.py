"""Iterative LQR solver with box-constrained controls.

Gauss-Newton variant: the problem object supplies a positive semidefinite
cost expansion (built from residual Jacobians), dynamics Jacobians from
finite differences, and batched forward rollouts. The backward pass solves
a small box QP per node so control bounds hold exactly in the feedforward
term; feedback gains are zeroed on clamped coordinates.

Real-time iteration mode runs exactly one backward/forward sweep per call
and returns whatever improvement it found, which keeps per-cycle latency
bounded and lets the closed loop warm-start the next cycle.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .problem import Trajectory

ALPHAS = np.array([1.0, 0.5, 0.25, 0.1, 0.03])
# Backtracked step sizes for the single real-time sweep. The 0 candidate is
# pure feedback replay of the warm plan; without the intermediate sizes a
# rejected full step freezes the plan and the loop goes open-loop for many
# cycles while tracking error compounds.
RTI_ALPHAS = np.array([1.0, 0.5, 0.25, 0.1, 0.0])
ARMIJO_RATIO = 0.01
REG_INIT = 1e-6
REG_CEILING = 1e9


class SolverDivergence(RuntimeError):
    """Regularization hit its ceiling without a cost-reducing step."""

    def __init__(self, msg, solution=None):
        super().__init__(msg)
        self.solution = solution


@dataclass
class MpcSolution:
    controls: np.ndarray          # (N, nu)
    states: tuple                 # (P, R, V, TH) predicted nodes
    cost: float
    iterations: int
    kkt_residual: float
    converged: bool
    solve_time: float = 0.0
    feedback: np.ndarray | None = None   # gains from the last backward pass
    feedforward: np.ndarray | None = None
    cost_history: list = field(default_factory=list)  # accepted iterates

    @property
    def u0(self) -> np.ndarray:
        return self.controls[0]

    def as_trajectory(self) -> Trajectory:
        P, R, V, TH = self.states
        return Trajectory(P, R, V, TH, self.controls, self.cost)


def solve_box_qp(H: np.ndarray, g: np.ndarray, lo: np.ndarray,
                 hi: np.ndarray, max_iters: int = 12, tol: float = 1e-10):
    """Minimize 0.5 x'Hx + g'x subject to lo <= x <= hi.

    H must be positive definite. Returns (x, free_mask). Projected Newton
    with active-set freezing; cheap because H is 10x10 here.
    """
    x_newton = np.linalg.solve(H, -g)
    if np.all(x_newton > lo + tol) and np.all(x_newton < hi - tol):
        return x_newton, np.ones(len(g), dtype=bool)

    def value(x):
        return 0.5 * x @ H @ x + g @ x

    x = np.clip(x_newton, lo, hi)
    free = np.ones(len(g), dtype=bool)
    for _ in range(max_iters):
        grad = g + H @ x
        clamped = ((x <= lo + tol) & (grad > 0)) | ((x >= hi - tol) & (grad < 0))
        free = ~clamped
        if not free.any():
            break
        gf = grad[free]
        if np.linalg.norm(gf, ord=np.inf) < tol:
            break
        Hff = H[np.ix_(free, free)]
        dx_f = np.linalg.solve(Hff, -gf)
        v0 = value(x)
        improved = False
        for a in (1.0, 0.5, 0.25, 0.1):
            xn = x.copy()
            xn[free] = np.clip(x[free] + a * dx_f, lo[free], hi[free])
            if value(xn) < v0 - 1e-16:
                x = xn
                improved = True
                break
        if not improved:
            break
    return x, free


def backward_pass(lin: dict, U: np.ndarray, u_lb: np.ndarray,
                  u_ub: np.ndarray, reg: float):
    """Riccati sweep with per-node box QP on the feedforward step.

    Returns (k, K, dV1, dV2) or None when a Quu block is not positive
    definite at this regularization level.
    """
    A, B = lin["A"], lin["B"]
    lx, lu, lxx, luu = lin["lx"], lin["lu"], lin["lxx"], lin["luu"]
    N, nu = U.shape
    nx = A.shape[-1]
    k_ff = np.zeros((N, nu))
    K_fb = np.zeros((N, nu, nx))
    Vx = lx[N].copy()
    Vxx = lxx[N].copy()
    dV1 = dV2 = 0.0
    eye_u = np.eye(nu)
    tol = 1e-10
    for k in range(N - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        VxxA = Vxx @ Ak
        Qx = lx[k] + Ak.T @ Vx
        Qu = lu[k] + Bk.T @ Vx
        Qxx = lxx[k] + Ak.T @ VxxA
        Qux = Bk.T @ VxxA
        Quu = luu[k] + Bk.T @ (Vxx @ Bk) + reg * eye_u
        Quu = 0.5 * (Quu + Quu.T)
        try:
            chol = cho_factor(Quu, lower=True, check_finite=False)
        except LinAlgError:
            return None
        lo = u_lb - U[k]
        hi = u_ub - U[k]
        # one factorization serves feedforward and feedback when the
        # unconstrained minimizer is interior (the common case)
        sol = cho_solve(chol, -np.column_stack([Qu[:, None], Qux]),
                        check_finite=False)
        kk, Kk = sol[:, 0], sol[:, 1:]
        if np.any(kk <= lo + tol) or np.any(kk >= hi - tol):
            kk, free = solve_box_qp(Quu, Qu, lo, hi)
            Kk = np.zeros((nu, nx))
            if free.any():
                idx = np.where(free)[0]
                Kk[idx] = np.linalg.solve(Quu[np.ix_(idx, idx)], -Qux[idx])
        k_ff[k] = kk
        K_fb[k] = Kk
        dV1 += kk @ Qu
        dV2 += 0.5 * kk @ Quu @ kk
        Vx = Qx + Kk.T @ (Quu @ kk) + Kk.T @ Qu + Qux.T @ kk
        Vxx = Qxx + Kk.T @ Quu @ Kk + Kk.T @ Qux + Qux.T @ Kk
        Vxx = 0.5 * (Vxx + Vxx.T)
    return k_ff, K_fb, dV1, dV2


def control_gradient(lin: dict, U: np.ndarray) -> np.ndarray:
    """Gradient of total cost wrt the control sequence via the adjoint
    recursion. Exact for the linearized problem; used for the KKT check."""
    A, B, lx, lu = lin["A"], lin["B"], lin["lx"], lin["lu"]
    N = U.shape[0]
    grad = np.empty_like(U)
    lam = lx[N].copy()
    for k in range(N - 1, -1, -1):
        grad[k] = lu[k] + B[k].T @ lam
        lam = lx[k] + A[k].T @ lam
    return grad


def kkt_residual(lin: dict, U: np.ndarray, u_lb: np.ndarray,
                 u_ub: np.ndarray, tol: float = 1e-9) -> float:
    """Infinity norm of the projected cost gradient over the horizon.

    At an active bound, a gradient pushing further outside counts as zero
    (the bound supplies the multiplier)."""
    grad = control_gradient(lin, U)
    proj = grad.copy()
    proj[(U <= u_lb + tol) & (grad > 0)] = 0.0
    proj[(U >= u_ub - tol) & (grad < 0)] = 0.0
    return float(np.abs(proj).max())


def solve_rti_warm(problem, warm: Trajectory, t0: float) -> MpcSolution:
    """One real-time iteration linearized at the previous plan.

    The initial-state mismatch (new x0 vs the plan's first node) enters
    through the feedback rollout, which starts at the problem's x0. The
    zero-step candidate keeps pure feedback replay as a fallback, so no
    separate warm-start rollout is needed.
    """
    lin = problem.linearize(warm)
    kkt = kkt_residual(lin, warm.U, problem.u_lb, problem.u_ub)
    reg = REG_INIT
    bp = None
    while bp is None:
        bp = backward_pass(lin, warm.U, problem.u_lb, problem.u_ub, reg)
        if bp is None:
            reg *= 10.0
            if reg > REG_CEILING:
                raise SolverDivergence("backward pass never positive definite")
    k_ff, K_fb, _, _ = bp
    costs, batch = problem.forward_pass(warm, k_ff, K_fb, RTI_ALPHAS)
    best = int(np.argmin(costs))
    traj = problem.select_candidate(batch, best)
    traj.cost = float(costs[best])
    return _make_solution(traj, 1, kkt, False, t0, k_ff, K_fb)


def solve(problem, u_init: np.ndarray | None = None, mode: str | None = None,
          max_iters: int | None = None, kkt_tol: float | None = None,
          warm_traj: Trajectory | None = None) -> MpcSolution:
    """Solve the horizon problem.

    mode 'full' iterates to the KKT tolerance (raises SolverDivergence if
    regularization saturates), mode 'rti' performs a single sweep and never
    raises. Passing warm_traj in rti mode skips the initial rollout by
    linearizing at that trajectory (receding-horizon warm start). Defaults
    come from problem.config when present.
    """
    cfg = getattr(problem, "config", None)
    mode = mode or (cfg.mode if cfg else "full")
    max_iters = max_iters or (cfg.max_iters if cfg else 40)
    kkt_tol = kkt_tol or (cfg.kkt_tol if cfg else 1e-6)
    t0 = time.perf_counter()
    if warm_traj is not None and mode == "rti":
        return solve_rti_warm(problem, warm_traj, t0)

    U = problem.default_controls() if u_init is None \
        else np.clip(np.asarray(u_init, dtype=float), problem.u_lb, problem.u_ub)
    traj = problem.rollout(U)
    reg = REG_INIT
    n_sweeps = max_iters if mode == "full" else 1
    it = 0
    kkt = np.inf
    k_ff = K_fb = None
    converged = False
    history = [traj.cost]
    for it in range(1, n_sweeps + 1):
        lin = problem.linearize(traj)
        kkt = kkt_residual(lin, traj.U, problem.u_lb, problem.u_ub)
        if kkt < kkt_tol:
            converged = True
            if k_ff is None:
                # still extract feedback gains for use between solves
                bp = backward_pass(lin, traj.U, problem.u_lb, problem.u_ub,
                                   reg)
                if bp is not None:
                    k_ff, K_fb = bp[0], bp[1]
            break
        stepped = False
        while reg <= REG_CEILING:
            bp = backward_pass(lin, traj.U, problem.u_lb, problem.u_ub, reg)
            if bp is None:
                reg *= 10.0
                continue
            k_ff, K_fb, dV1, dV2 = bp
            costs, batch = problem.forward_pass(traj, k_ff, K_fb, ALPHAS)
            best = None
            for i, a in enumerate(ALPHAS):
                expected = -(a * dV1 + a * a * dV2)
                decrease = traj.cost - costs[i]
                if expected > 1e-14:
                    if decrease > ARMIJO_RATIO * expected:
                        best = i
                        break
                elif decrease > 0:
                    best = i
                    break
            if best is not None:
                traj = problem.select_candidate(batch, best)
                traj.cost = float(costs[best])
                history.append(traj.cost)
                reg = max(reg / 5.0, 1e-9)
                stepped = True
                break
            reg *= 10.0
        if not stepped:
            if mode == "full":
                raise SolverDivergence(
                    "no cost-reducing step below the regularization ceiling",
                    _make_solution(traj, it, kkt, False, t0, k_ff, K_fb,
                                   history))
            break
    return _make_solution(traj, it, kkt, converged, t0, k_ff, K_fb, history)


def _copy_or_none(a):
    return None if a is None else a.copy()


def _make_solution(traj, iters, kkt, converged, t0, k_ff, K_fb, history=None):
    return MpcSolution(
        controls=traj.U.copy(),
        states=tuple(_copy_or_none(a)
                     for a in (traj.P, traj.R, traj.V, traj.TH)),
        cost=float(traj.cost), iterations=iters, kkt_residual=float(kkt),
        converged=converged, solve_time=time.perf_counter() - t0,
        feedback=K_fb, feedforward=k_ff,
        cost_history=list(history) if history else [])


class LinearQuadraticProblem:
    """Dense LTI problem exposing the same surface as the whole-body one.

    Exists so the solver can be verified against a Riccati recursion and a
    finite-difference gradient without the vehicle model in the loop.
    """

    def __init__(self, A: np.ndarray, B: np.ndarray, Q: np.ndarray,
                 R: np.ndarray, QN: np.ndarray, x0: np.ndarray, N: int,
                 u_lb: np.ndarray | None = None,
                 u_ub: np.ndarray | None = None):
        self.A_mat, self.B_mat = A, B
        self.Q, self.Rm, self.QN = Q, R, QN
        self.x0_vec = np.asarray(x0, dtype=float)
        self.N = N
        self.nx = A.shape[0]
        self.nu = B.shape[1]
        self.u_lb = np.full(self.nu, -np.inf) if u_lb is None else u_lb
        self.u_ub = np.full(self.nu, np.inf) if u_ub is None else u_ub
        self.config = None

    def default_controls(self):
        lo = np.where(np.isfinite(self.u_lb), self.u_lb, 0.0)
        hi = np.where(np.isfinite(self.u_ub), self.u_ub, 0.0)
        return np.tile(np.clip(np.zeros(self.nu), lo, hi), (self.N, 1))

    def rollout(self, U):
        X = np.empty((self.N + 1, self.nx))
        X[0] = self.x0_vec
        for k in range(self.N):
            X[k + 1] = self.A_mat @ X[k] + self.B_mat @ U[k]
        t = Trajectory(X, None, None, None, np.array(U, dtype=float))
        cx = np.einsum("ni,ij,nj->", X[:-1], self.Q, X[:-1])
        cN = X[-1] @ self.QN @ X[-1]
        cu = np.einsum("ni,ij,nj->", U, self.Rm, U)
        t.cost = float(cx + cN + cu)
        return t

    def forward_pass(self, ref, k_ff, K_fb, alphas):
        A_n = len(alphas)
        X = np.empty((self.N + 1, A_n, self.nx))
        U = np.empty((self.N, A_n, self.nu))
        X[0] = self.x0_vec
        al = np.asarray(alphas, dtype=float)[:, None]
        for k in range(self.N):
            dx = X[k] - ref.P[k]
            U[k] = np.clip(ref.U[k] + al * k_ff[k] + dx @ K_fb[k].T,
                           self.u_lb, self.u_ub)
            X[k + 1] = X[k] @ self.A_mat.T + U[k] @ self.B_mat.T
        cx = np.einsum("nai,ij,naj->a", X[:-1], self.Q, X[:-1])
        cN = np.einsum("ai,ij,aj->a", X[-1], self.QN, X[-1])
        cu = np.einsum("nai,ij,naj->a", U, self.Rm, U)
        return cx + cN + cu, (X, U)

    def select_candidate(self, batch, i):
        X, U = batch
        return Trajectory(np.ascontiguousarray(X[:, i]), None, None, None,
                          np.ascontiguousarray(U[:, i]))

    def linearize(self, traj):
        X, U = traj.P, traj.U
        N = self.N
        A = np.broadcast_to(self.A_mat, (N, self.nx, self.nx))
        B = np.broadcast_to(self.B_mat, (N, self.nx, self.nu))
        lx = 2.0 * X @ self.Q.T
        lx[N] = 2.0 * (self.QN @ X[N])
        lu = 2.0 * U @ self.Rm.T
        lxx = np.broadcast_to(2.0 * self.Q, (N + 1, self.nx, self.nx)).copy()
        lxx[N] = 2.0 * self.QN
        luu = np.broadcast_to(2.0 * self.Rm, (N, self.nu, self.nu))
        return {"A": A, "B": B, "lx": lx, "lu": lu, "lxx": lxx, "luu": luu,
                "cost": traj.cost}
