"""Wire protocol for the teleop bridge.

Every message is one UTF-8 JSON object prefixed by its byte length and a
newline, so the same framing works over a raw socket, a websocket (one frame
per message), or a capture file. Field reference, units in brackets:

hello (server -> client, first frame on connect):
    type="hello", schema_version, dh=[[theta_offset, d, a, alpha] x4] [m/rad],
    mount={p:[3] [m], q:[4] wxyz}, beta=[4] [s], workspace={lo:[3], hi:[3]}
    [m], rates={control_hz, telemetry_hz}, lease (bool: commanding granted)
command (client -> server):
    type in {ee_delta, ee_absolute, gripper, pause, reset}, seq (int,
    monotonically increasing per client), dp=[3] [m], drot=[3]
    rotation-vector [rad], p=[3]/q=[4] for ee_absolute, gripper [0..1]
telemetry (server -> client, ~30 Hz):
    type="telemetry", t [s], ee={p, q}, base={p, q}, theta=[4] [rad],
    target={p, q}, tau_ext=[6] [model units], status, clamped (bool)
error (server -> client): type="error", reason, seq (offending id if known)
heartbeat (client -> server): type="heartbeat", seq

Caps: per-message ‖dp‖ <= DP_CAP, ‖drot‖ <= DROT_CAP. The version handshake
is strict equality; there are no negotiated downgrades.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import json
import numpy as np

from ..geometry import exp_so3, matrix_from_quat, quat_from_matrix
from ..mpc.problem import EeTarget

SCHEMA_VERSION = 1
DP_CAP = 0.05      # m per message
DROT_CAP = 0.1     # rad per message
COMMAND_TYPES = ("ee_delta", "ee_absolute", "gripper", "pause", "reset")


class ProtocolError(ValueError):
    """Malformed or out-of-contract message; the session survives it."""


def encode_frame(obj: dict) -> bytes:
    body = json.dumps(obj, separators=(",", ":"),
                      allow_nan=False).encode("utf-8")
    return b"%d\n%s" % (len(body), body)


def decode_frames(buf: bytes):
    """Split a byte buffer into (decoded objects, unconsumed tail)."""
    out = []
    while True:
        nl = buf.find(b"\n")
        if nl < 0:
            break
        try:
            n = int(buf[:nl])
        except ValueError as exc:
            raise ProtocolError(f"bad length prefix {buf[:nl]!r}") from exc
        if n < 0 or n > 1_000_000:
            raise ProtocolError(f"unreasonable frame length {n}")
        if len(buf) < nl + 1 + n:
            break
        body = buf[nl + 1:nl + 1 + n]
        buf = buf[nl + 1 + n:]
        try:
            out.append(json.loads(body.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"undecodable frame body: {exc}") from exc
    return out, buf


def _vec(obj, key, n):
    v = obj.get(key)
    if v is None:
        return np.zeros(n)
    arr = np.asarray(v, dtype=float)
    if arr.shape != (n,) or not np.isfinite(arr).all():
        raise ProtocolError(f"{key} must be {n} finite numbers")
    return arr


@dataclass
class CommandMsg:
    seq: int
    type: str
    dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    drot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p: np.ndarray | None = None       # ee_absolute only
    q: np.ndarray | None = None
    gripper: float = 0.0

    def __post_init__(self):
        if self.type not in COMMAND_TYPES:
            raise ProtocolError(f"unknown command type {self.type!r}")
        if not isinstance(self.seq, int) or self.seq < 0:
            raise ProtocolError("seq must be a nonnegative integer")
        self.dp = np.asarray(self.dp, dtype=float)
        self.drot = np.asarray(self.drot, dtype=float)
        if np.linalg.norm(self.dp) > DP_CAP + 1e-12:
            raise ProtocolError(f"|dp| exceeds {DP_CAP} m cap")
        if np.linalg.norm(self.drot) > DROT_CAP + 1e-12:
            raise ProtocolError(f"|drot| exceeds {DROT_CAP} rad cap")
        if self.type == "ee_absolute":
            if self.p is None or self.q is None:
                raise ProtocolError("ee_absolute needs p and q")
            self.p = np.asarray(self.p, dtype=float)
            self.q = np.asarray(self.q, dtype=float)
            if abs(np.linalg.norm(self.q) - 1.0) > 1e-6:
                raise ProtocolError("quaternion not normalized")

    @staticmethod
    def from_dict(obj: dict) -> "CommandMsg":
        if not isinstance(obj, dict):
            raise ProtocolError("command frame must be an object")
        seq = obj.get("seq")
        if not isinstance(seq, int):
            raise ProtocolError("missing integer seq")
        kind = obj.get("type")
        kw = dict(seq=seq, type=kind,
                  dp=_vec(obj, "dp", 3), drot=_vec(obj, "drot", 3),
                  gripper=float(obj.get("gripper", 0.0)))
        if kind == "ee_absolute":
            kw["p"] = _vec(obj, "p", 3)
            kw["q"] = _vec(obj, "q", 4)
        return CommandMsg(**kw)

    def to_dict(self) -> dict:
        out = {"type": self.type, "seq": self.seq}
        if self.type == "ee_delta":
            out["dp"] = self.dp.tolist()
            out["drot"] = self.drot.tolist()
        elif self.type == "ee_absolute":
            out["p"] = self.p.tolist()
            out["q"] = self.q.tolist()
        elif self.type == "gripper":
            out["gripper"] = self.gripper
        return out


@dataclass
class TelemetryFrame:
    t: float
    ee_p: np.ndarray
    ee_q: np.ndarray
    base_p: np.ndarray
    base_q: np.ndarray
    theta: np.ndarray
    target_p: np.ndarray
    target_q: np.ndarray
    tau_ext: np.ndarray
    status: str = "ok"
    clamped: bool = False
    ack_seq: int = -1      # newest command id reflected in this frame

    def to_dict(self) -> dict:
        return {"type": "telemetry", "t": self.t,
                "ee": {"p": self.ee_p.tolist(), "q": self.ee_q.tolist()},
                "base": {"p": self.base_p.tolist(),
                         "q": self.base_q.tolist()},
                "theta": self.theta.tolist(),
                "target": {"p": self.target_p.tolist(),
                           "q": self.target_q.tolist()},
                "tau_ext": self.tau_ext.tolist(),
                "status": self.status, "clamped": self.clamped,
                "ack_seq": self.ack_seq}

    @staticmethod
    def from_dict(obj: dict) -> "TelemetryFrame":
        def pose(key):
            sub = obj[key]
            return (np.asarray(sub["p"], dtype=float),
                    np.asarray(sub["q"], dtype=float))
        ee_p, ee_q = pose("ee")
        base_p, base_q = pose("base")
        tgt_p, tgt_q = pose("target")
        return TelemetryFrame(
            t=float(obj["t"]), ee_p=ee_p, ee_q=ee_q,
            base_p=base_p, base_q=base_q,
            theta=np.asarray(obj["theta"], dtype=float),
            target_p=tgt_p, target_q=tgt_q,
            tau_ext=np.asarray(obj["tau_ext"], dtype=float),
            status=obj.get("status", "ok"),
            clamped=bool(obj.get("clamped", False)),
            ack_seq=int(obj.get("ack_seq", -1)))


@dataclass
class Workspace:
    """Axis-aligned box the commanded EE target may not leave."""

    lo: np.ndarray = field(
        default_factory=lambda: np.array([-0.8, -0.6, 0.7]))
    hi: np.ndarray = field(
        default_factory=lambda: np.array([0.8, 0.6, 1.9]))

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if not (self.lo < self.hi).all():
            raise ValueError("workspace box is empty")

    def clamp(self, p: np.ndarray):
        c = np.clip(p, self.lo, self.hi)
        return c, bool((c != p).any())

    def contains(self, p: np.ndarray) -> bool:
        return bool((p >= self.lo).all() and (p <= self.hi).all())


def apply_command(target: EeTarget, msg: CommandMsg,
                  workspace: Workspace):
    """Compose one command onto the commanded target pose.

    Returns (new target, clamped flag). Pure function: sequencing (stale or
    duplicate ids) is the session's job, not this one's.
    """
    if msg.type == "ee_delta":
        p = target.p + msg.dp
        R = target.R @ exp_so3(msg.drot)
    elif msg.type == "ee_absolute":
        p = msg.p.copy()
        R = matrix_from_quat(msg.q)
    else:
        return target, False
    p, clamped = workspace.clamp(p)
    return EeTarget(p=p, R=R), clamped


def hello_frame(arm, workspace: Workspace, control_hz: float,
                telemetry_hz: float, lease: bool) -> dict:
    dh = [[j.theta_offset, j.d, j.a, j.alpha] for j in arm.joints]
    return {"type": "hello", "schema_version": SCHEMA_VERSION,
            "dh": dh,
            "mount": {"p": arm.mount.translation.tolist(),
                      "q": quat_from_matrix(arm.mount.rotation).tolist()},
            "beta": np.asarray(arm.beta, dtype=float).tolist(),
            "workspace": {"lo": workspace.lo.tolist(),
                          "hi": workspace.hi.tolist()},
            "rates": {"control_hz": control_hz,
                      "telemetry_hz": telemetry_hz},
            "lease": lease}
