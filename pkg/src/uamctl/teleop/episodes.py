"""Episode recording and deterministic replay.

File format: `.episode.jsonl`, one JSON object per line. First line is the
header (task, seed, schema_version, rates, chunk_size, controller,
disturbance profile, workspace box). Every following line is a row:

    {"t": <s>, "obs": {"image_base": null, "image_ee": null,
                       "p": [3 m], "q": [4 wxyz]},
     "act": {"p": [3 m], "q": [4 wxyz]}}

obs is the measured EE pose at the sample instant, act the commanded target
in force at that instant. Rows are captured at the control rate and decimated
to rate_hz, so timestamps are uniform by construction. Image fields stay
null placeholders: episodes are state-only, the keys exist so downstream
consumers see a stable schema.

Replay rebuilds the plant from the header (same seed, same disturbance
profile), feeds the recorded actions back as a zero-order-hold target stream
and returns the closed-loop result; on a deterministic simulator the EE path
reproduces to well under the 1 cm gate.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from types import SimpleNamespace

import json
import numpy as np

from .protocol import SCHEMA_VERSION, Workspace
from ..geometry import matrix_from_quat
from ..mpc.problem import EeTarget


class EpisodeError(ValueError):
    pass


@dataclass
class EpisodeHeader:
    task: str
    seed: int
    schema_version: int = SCHEMA_VERSION
    source_rate_hz: float = 100.0
    rate_hz: float = 10.0
    chunk_size: int = 100
    controller: str = "mpc_l1"
    disturbances: str = "none"
    workspace_lo: list = field(
        default_factory=lambda: Workspace().lo.tolist())
    workspace_hi: list = field(
        default_factory=lambda: Workspace().hi.tolist())

    def __post_init__(self):
        if self.rate_hz <= 0 or self.source_rate_hz <= 0:
            raise EpisodeError("rates must be positive")
        stride = self.source_rate_hz / self.rate_hz
        if abs(stride - round(stride)) > 1e-9 or stride < 1:
            raise EpisodeError("source rate must be an integer multiple "
                               "of the episode rate")
        if self.chunk_size < 1:
            raise EpisodeError("chunk_size must be >= 1")

    @property
    def stride(self) -> int:
        return int(round(self.source_rate_hz / self.rate_hz))

    def workspace(self) -> Workspace:
        return Workspace(lo=self.workspace_lo, hi=self.workspace_hi)


@dataclass
class EpisodeRecord:
    header: EpisodeHeader
    t: np.ndarray            # (n,)
    obs_p: np.ndarray        # (n, 3)
    obs_q: np.ndarray        # (n, 4)
    act_p: np.ndarray        # (n, 3)
    act_q: np.ndarray        # (n, 4)

    def __len__(self):
        return len(self.t)


class Recorder:
    """Captures one sample per add() call and decimates to the episode rate.

    add() is called once per control tick with the measured EE pose and the
    commanded target in force; every stride-th sample is kept. Timestamps
    are re-zeroed to the first kept sample.
    """

    def __init__(self, header: EpisodeHeader):
        self.header = header
        self._ws = header.workspace()
        self._k = 0
        self._rows = []

    def add(self, ee_p, ee_q, target_p, target_q):
        keep = self._k % self.header.stride == 0
        self._k += 1
        if not keep:
            return
        tp = np.asarray(target_p, dtype=float)
        if not self._ws.contains(tp):
            raise EpisodeError(f"action {tp} outside the workspace box")
        self._rows.append((np.asarray(ee_p, dtype=float).copy(),
                           np.asarray(ee_q, dtype=float).copy(),
                           tp.copy(),
                           np.asarray(target_q, dtype=float).copy()))

    def finalize(self) -> EpisodeRecord:
        n = len(self._rows)
        t = np.arange(n) / self.header.rate_hz
        if n == 0:
            z3, z4 = np.zeros((0, 3)), np.zeros((0, 4))
            return EpisodeRecord(self.header, t, z3, z4, z3.copy(),
                                 z4.copy())
        obs_p, obs_q, act_p, act_q = (np.stack(x) for x in
                                      zip(*self._rows))
        return EpisodeRecord(self.header, t, obs_p, obs_q, act_p, act_q)


def write_episode(path, record: EpisodeRecord):
    path = str(path)
    if not path.endswith(".episode.jsonl"):
        raise EpisodeError("episode files use the .episode.jsonl extension")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(asdict(record.header)) + "\n")
        for i in range(len(record)):
            row = {"t": round(float(record.t[i]), 9),
                   "obs": {"image_base": None, "image_ee": None,
                           "p": record.obs_p[i].tolist(),
                           "q": record.obs_q[i].tolist()},
                   "act": {"p": record.act_p[i].tolist(),
                           "q": record.act_q[i].tolist()}}
            fh.write(json.dumps(row) + "\n")


def read_episode(path) -> EpisodeRecord:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise EpisodeError("empty episode file")
    head = json.loads(lines[0])
    if head.get("schema_version") != SCHEMA_VERSION:
        raise EpisodeError(
            f"episode schema {head.get('schema_version')} does not match "
            f"this build ({SCHEMA_VERSION})")
    header = EpisodeHeader(**head)
    n = len(lines) - 1
    t = np.empty(n)
    obs_p, act_p = np.empty((n, 3)), np.empty((n, 3))
    obs_q, act_q = np.empty((n, 4)), np.empty((n, 4))
    for i, ln in enumerate(lines[1:]):
        row = json.loads(ln)
        t[i] = row["t"]
        obs_p[i] = row["obs"]["p"]
        obs_q[i] = row["obs"]["q"]
        act_p[i] = row["act"]["p"]
        act_q[i] = row["act"]["q"]
    if n > 1:
        dt = np.diff(t)
        if np.any(np.abs(dt - 1.0 / header.rate_hz) > 1e-6):
            raise EpisodeError("row timestamps not uniform at rate_hz")
    return EpisodeRecord(header, t, obs_p, obs_q, act_p, act_q)


class _HoldTargets:
    """Zero-order-hold target stream over the recorded action rows.

    Quacks like a ReferenceTrajectory (sample + spec) so the closed-loop
    harness can drive it.
    """

    def __init__(self, record: EpisodeRecord):
        if len(record) == 0:
            raise EpisodeError("cannot replay an empty episode")
        self.t = record.t
        self.p = record.act_p
        self.R = np.stack([matrix_from_quat(q) for q in record.act_q])
        duration = float(record.t[-1]) + 1.0 / record.header.rate_hz
        self.spec = SimpleNamespace(kind="replay", duration=duration)

    def sample(self, t: float) -> EeTarget:
        i = int(np.searchsorted(self.t, t + 1e-12, side="right") - 1)
        i = max(0, min(i, len(self.t) - 1))
        return EeTarget(p=self.p[i], R=self.R[i])


def replay_episode(path_or_record, trace: bool = False):
    """Re-run an episode's actions on a fresh plant with the header's seed.

    Returns (RunResult, deviation_rmse_cm) where the deviation compares the
    replayed measured EE positions at the row timestamps against the
    recorded observations. The measured pose is rebuilt exactly the way the
    recorder produced it: estimated base pose and joint angles through the
    nominal arm model.
    """
    from ..arm_model import ArmParams, fk_ee_arrays
    from ..closed_loop import TRACE_COLUMNS, run_tracking

    rec = path_or_record if isinstance(path_or_record, EpisodeRecord) \
        else read_episode(path_or_record)
    targets = _HoldTargets(rec)
    res = run_tracking(rec.header.controller, "replay", seed=rec.header.seed,
                       duration=targets.spec.duration,
                       disturbances=rec.header.disturbances,
                       trajectory=targets, trace=True)
    dev = np.nan
    if res.trace is not None and len(res.trace) > 1:
        c = list(TRACE_COLUMNS)
        pe = res.trace[:, [c.index("est_px"), c.index("est_py"),
                           c.index("est_pz")]]
        th = res.trace[:, [c.index(f"est_theta{i}") for i in (1, 2, 3, 4)]]
        Rb = np.stack([matrix_from_quat(q) for q in
                       res.trace[:, [c.index("est_qw"), c.index("est_qx"),
                                     c.index("est_qy"), c.index("est_qz")]]])
        p_ee, _ = fk_ee_arrays(pe, Rb, th, ArmParams())
        idx = np.rint(rec.t * rec.header.source_rate_hz).astype(int)
        idx = np.clip(idx, 0, len(p_ee) - 1)
        d = p_ee[idx] - rec.obs_p
        dev = 100.0 * float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
    if not trace:
        res.trace = None
    return res, dev
