"""Scripted peg-in-hole policy over randomized scenes.

The peg is the end-effector tip; the hole is a vertical bore in a desk
surface, randomized horizontally per scene seed. The policy emits a 10 Hz
zero-order-hold EE target stream through five phases: approach a standoff
above the hole, settle, descend to the mouth, insert slowly along the axis,
dwell (release), retreat. Success is judged on the TRUE end-effector path:
the tip must reach the success depth while never being below the mouth
plane outside the hole radius (that would be the peg hitting the desk).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .episodes import EpisodeHeader, EpisodeRecord, Recorder
from .protocol import Workspace
from ..geometry import matrix_from_quat, quat_from_matrix
from ..mpc.problem import EeTarget

HOME_P = np.array([0.0, 0.0, 1.3])

APPROACH_SPEED = 0.25   # m/s, free-space moves
DESCEND_SPEED = 0.15    # m/s, standoff down to the mouth
INSERT_SPEED = 0.03     # m/s, inside the bore
STANDOFF = 0.12         # m above the mouth
SETTLE_TIME = 1.0       # s hovering at the standoff before descending
DWELL_TIME = 0.5        # s at the bottom (release)


@dataclass
class PegScene:
    seed: int
    hole_p: np.ndarray                  # mouth center, world frame
    hole_radius: float = 0.012
    hole_depth: float = 0.06
    success_depth: float = 0.03

    def __post_init__(self):
        self.hole_p = np.asarray(self.hole_p, dtype=float)
        if self.hole_radius <= 0 or self.hole_depth <= self.success_depth:
            raise ValueError("degenerate hole geometry")


def make_scene(seed: int, x_range=(-0.30, 0.30), y_range=(-0.20, 0.20),
               mouth_z: float = 1.05) -> PegScene:
    rng = np.random.default_rng(seed)
    p = np.array([rng.uniform(*x_range), rng.uniform(*y_range), mouth_z])
    return PegScene(seed=seed, hole_p=p)


@dataclass
class PegResult:
    scene: PegScene
    success: bool
    reason: str = ""
    max_depth: float = 0.0          # deepest in-bore penetration, m
    min_clearance: float = np.inf   # radius margin while below the mouth, m
    rmse_cm: float = np.nan
    episode: EpisodeRecord | None = None


def _schedule(scene: PegScene):
    """(time, position) knots of the piecewise-linear mission path."""
    standoff = scene.hole_p + [0.0, 0.0, STANDOFF]
    mouth = scene.hole_p + [0.0, 0.0, 0.01]
    bottom = scene.hole_p - [0.0, 0.0, scene.success_depth + 0.01]
    knots = [(0.0, HOME_P)]

    def goto(p, speed, dwell=0.0):
        t0, p0 = knots[-1]
        dt = max(float(np.linalg.norm(p - p0)) / speed, 0.2)
        knots.append((t0 + dt, p))
        if dwell > 0.0:
            knots.append((t0 + dt + dwell, p))

    goto(standoff, APPROACH_SPEED, dwell=SETTLE_TIME)
    goto(mouth, DESCEND_SPEED)
    goto(bottom, INSERT_SPEED, dwell=DWELL_TIME)
    goto(standoff, DESCEND_SPEED)
    return knots


class _MissionTargets:
    """10 Hz zero-order-hold sampling of the mission path.

    The discrete action stream (not the underlying continuous path) is the
    policy output, so recording and replay see the exact same targets.
    """

    def __init__(self, scene: PegScene, rate_hz: float = 10.0):
        knots = _schedule(scene)
        tk = np.array([t for t, _ in knots])
        pk = np.stack([p for _, p in knots])
        end = float(tk[-1])
        n = int(np.floor(end * rate_hz)) + 1
        self.t = np.arange(n) / rate_hz
        self.p = np.column_stack([np.interp(self.t, tk, pk[:, i])
                                  for i in range(3)])
        self.spec = SimpleNamespace(kind="peg", duration=end + 0.2)

    def sample(self, t: float) -> EeTarget:
        i = int(np.searchsorted(self.t, t + 1e-12, side="right") - 1)
        i = max(0, min(i, len(self.t) - 1))
        return EeTarget(p=self.p[i])


def run_scene(scene: PegScene, controller: str = "mpc_l1",
              disturbances: str = "benchmark",
              record: bool = False) -> PegResult:
    """Execute one scene in closed loop and judge insertion success."""
    from ..closed_loop import TRACE_COLUMNS, run_tracking

    ws = Workspace()
    targets = _MissionTargets(scene)
    if not (ws.contains(targets.p.min(axis=0))
            and ws.contains(targets.p.max(axis=0))):
        return PegResult(scene, False, reason="hole outside workspace")
    try:
        res = run_tracking(controller, "peg", seed=scene.seed,
                           duration=targets.spec.duration,
                           disturbances=disturbances,
                           trajectory=targets, trace=True)
    except ValueError as exc:
        return PegResult(scene, False, reason=f"unreachable: {exc}")
    out = PegResult(scene, False, rmse_cm=res.rmse_cm)
    if not res.completed:
        out.reason = res.fail_reason
        return out

    c = list(TRACE_COLUMNS)
    ee = res.trace[:, [c.index("ee_x"), c.index("ee_y"), c.index("ee_z")]]
    lateral = np.linalg.norm(ee[:, :2] - scene.hole_p[:2], axis=1)
    depth = scene.hole_p[2] - ee[:, 2]
    below = depth > 0.0
    if below.any():
        out.min_clearance = float(np.min(scene.hole_radius
                                         - lateral[below]))
    hit_desk = below & (lateral > scene.hole_radius)
    inserted = below & (lateral <= scene.hole_radius)
    if inserted.any():
        out.max_depth = float(np.max(depth[inserted]))
    if hit_desk.any():
        out.reason = "peg struck the desk surface"
    elif out.max_depth < scene.success_depth:
        out.reason = (f"insufficient depth "
                      f"{out.max_depth * 100:.1f} cm")
    else:
        out.success = True
    if record:
        out.episode = _record_from_trace(res.trace, targets, scene,
                                         controller, disturbances)
    return out


def _record_from_trace(trace, targets, scene, controller, disturbances):
    from ..arm_model import ArmParams, fk_ee_arrays
    from ..closed_loop import TRACE_COLUMNS

    c = list(TRACE_COLUMNS)
    pe = trace[:, [c.index("est_px"), c.index("est_py"), c.index("est_pz")]]
    th = trace[:, [c.index(f"est_theta{i}") for i in (1, 2, 3, 4)]]
    Rb = np.stack([matrix_from_quat(q) for q in
                   trace[:, [c.index("est_qw"), c.index("est_qx"),
                             c.index("est_qy"), c.index("est_qz")]]])
    p_ee, R_ee = fk_ee_arrays(pe, Rb, th, ArmParams())
    header = EpisodeHeader(task="peg_in_hole", seed=scene.seed,
                           controller=controller,
                           disturbances=disturbances)
    rec = Recorder(header)
    tcol = trace[:, 0]
    for k in range(trace.shape[0]):
        tgt = targets.sample(tcol[k])
        rec.add(p_ee[k], quat_from_matrix(R_ee[k]),
                tgt.p, quat_from_matrix(tgt.R))
    return rec.finalize()


def peg_batch(n_scenes: int = 50, base_seed: int = 0,
              controller: str = "mpc_l1",
              disturbances: str = "benchmark",
              record: bool = False, progress=None) -> list:
    """Run n randomized scenes; returns the list of PegResults."""
    results = []
    for i in range(n_scenes):
        r = run_scene(make_scene(base_seed + i), controller=controller,
                      disturbances=disturbances, record=record)
        results.append(r)
        if progress is not None:
            progress(i, r)
    return results


def success_rate(results) -> float:
    return sum(r.success for r in results) / max(len(results), 1)
