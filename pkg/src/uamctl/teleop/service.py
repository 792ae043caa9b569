"""Websocket teleop bridge: sim loop in, telemetry out, episodes on disk.

One asyncio process runs three kinds of task: the 100 Hz control loop
(plant + whole-body controller + adaptation), one telemetry broadcaster on
an absolute 30 Hz deadline schedule, and one reader per client. They share
single-writer latest-value slots: clients write the commanded target through
apply_command, the loop publishes a state snapshot, the broadcaster fans the
newest snapshot out through per-client latest-wins queues (a slow consumer
drops frames, never stalls the loop).

Exactly one client holds the command lease (first hello asking for it);
the lease drops after 2 s without a command or heartbeat and the next
requester gets it. Viewers are unlimited. Sim time advances even while
paused (pause freezes the plant, not the clock) so telemetry timestamps
stay strictly increasing.
"""
from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .episodes import EpisodeHeader, Recorder, write_episode
from .protocol import (CommandMsg, ProtocolError, SCHEMA_VERSION,
                       TelemetryFrame, Workspace, apply_command,
                       encode_frame, decode_frames, hello_frame)
from ..arm_model import ArmParams, fk_ee
from ..closed_loop import (_CONTROLLER_ERRORS, initial_state_on,
                           make_controller, uses_adaptation)
from ..geometry import Transform, quat_from_matrix
from ..l1 import L1BaseEstimator, L1Config, L1JointEstimator
from ..mpc.problem import EeTarget
from ..plant import DisturbanceConfig, Plant, PlantDivergence, TICK_DT
from ..trajectories import make_trajectory
from ..uav_dynamics import UavParams

log = logging.getLogger(__name__)

LEASE_TIMEOUT = 2.0    # s without commander traffic before the lease drops
TELEMETRY_HZ = 30.0
CONTROL_HZ = 1.0 / TICK_DT


@dataclass
class _Client:
    ws: object
    role: str = "viewer"
    queue: asyncio.Queue = field(
        default_factory=lambda: asyncio.Queue(maxsize=1))
    last_seq: int = -1


class TeleopService:
    """Owns the session: simulator, controller, lease, recorder."""

    def __init__(self, seed: int = 0, controller: str = "mpc_l1",
                 disturbances: str = "none", time_scale: float = 1.0,
                 workspace: Workspace | None = None,
                 record_dir: str | None = None,
                 telemetry_hz: float = TELEMETRY_HZ):
        self.seed = seed
        self.controller_name = controller
        self.disturbances = disturbances
        self.time_scale = time_scale
        self.workspace = workspace or Workspace()
        self.record_dir = record_dir
        self.telemetry_hz = telemetry_hz
        self.paused = False
        self.status = "ok"
        self.clients: list[_Client] = []
        self.commander: _Client | None = None
        self._last_cmd_wall = 0.0
        self._ack_seq = -1
        self._clamped = False
        self._snapshot = None
        self._stop = asyncio.Event()
        self._episode_count = 0
        self._build()

    # ---------------------------------------------------------- sim side
    def _build(self):
        self.uav, self.arm = UavParams(), ArmParams()
        start = make_trajectory("setpoint", duration=1.0).sample(0.0)
        p0, R0, v0, th0 = initial_state_on(start, self.arm)
        cfg = {"none": DisturbanceConfig(),
               "noisy": DisturbanceConfig(pos_noise=0.01)}.get(
                   self.disturbances)
        if cfg is None:
            from ..plant import benchmark_disturbances
            if self.disturbances != "benchmark":
                raise ValueError(
                    f"unknown disturbance profile {self.disturbances!r}")
            cfg = benchmark_disturbances()
        self.plant = Plant(self.uav, self.arm, cfg=cfg, seed=self.seed,
                           p0=p0, R0=R0, v0=v0, theta0=th0)
        self.target = EeTarget(p=start.p.copy(), R=start.R.copy())
        self.ctrl = make_controller(self.controller_name, self.uav,
                                    self.arm, lambda t: self.target)
        self.base_est = self.joint_est = None
        if uses_adaptation(self.controller_name):
            l1c = L1Config()
            self.base_est = L1BaseEstimator(self.uav, l1c)
            self.joint_est = L1JointEstimator(self.arm, l1c)
        self.k = 0
        self.recorder = None
        if self.record_dir is not None:
            header = EpisodeHeader(
                task="teleop", seed=self.seed,
                controller=self.controller_name,
                disturbances=self.disturbances,
                workspace_lo=self.workspace.lo.tolist(),
                workspace_hi=self.workspace.hi.tolist())
            self.recorder = Recorder(header)
        self._publish()

    def _tick(self):
        t = self.k * TICK_DT
        self.k += 1
        if self.paused or self.status != "ok":
            self._publish()
            return
        s = self.plant.measure()
        try:
            u = self.ctrl.update(t, s)
        except _CONTROLLER_ERRORS as exc:
            log.warning("controller fault at t=%.2f: %s", t, exc)
            self.status = "fault"
            self._publish()
            return
        f, tq = u.wrench.force, u.wrench.torque
        th_cmd = u.theta_cmd
        if self.base_est is not None:
            f, tq = self.base_est.augment(f, tq, s.R, self.plant.u_lb,
                                          self.plant.u_ub)
        if self.joint_est is not None:
            th_cmd = self.joint_est.augment(th_cmd)
        if self.base_est is not None:
            self.base_est.update(s, f, tq)
        if self.joint_est is not None:
            self.joint_est.update(s.theta, th_cmd)
        if self.recorder is not None:
            ee = fk_ee(s.theta, self.arm, Transform(s.R, s.p))
            self.recorder.add(ee.translation,
                              quat_from_matrix(ee.rotation),
                              self.target.p,
                              quat_from_matrix(self.target.R))
        try:
            self.plant.step(f, tq, th_cmd)
        except PlantDivergence as exc:
            log.warning("%s", exc)
            self.status = "diverged"
        self._publish()

    def _publish(self):
        s = self.plant.measure()
        ee = fk_ee(s.theta, self.arm, Transform(s.R, s.p))
        sigma = (self.base_est.sigma if self.base_est is not None
                 else np.zeros(6))
        self._snapshot = TelemetryFrame(
            t=self.k * TICK_DT,
            ee_p=ee.translation, ee_q=quat_from_matrix(ee.rotation),
            base_p=s.p.copy(), base_q=quat_from_matrix(s.R),
            theta=s.theta.copy(),
            target_p=self.target.p.copy(),
            target_q=quat_from_matrix(self.target.R),
            tau_ext=np.asarray(sigma, dtype=float).copy(),
            status="paused" if self.paused else self.status,
            clamped=self._clamped, ack_seq=self._ack_seq)

    # ------------------------------------------------------ command side
    def _apply(self, client: _Client, msg: CommandMsg):
        if client is not self.commander:
            return   # viewers and expired leases command nothing
        self._last_cmd_wall = time.monotonic()
        if msg.seq <= client.last_seq:
            return   # stale or duplicate id
        client.last_seq = msg.seq
        self._ack_seq = msg.seq
        if msg.type == "pause":
            self.paused = not self.paused
        elif msg.type == "reset":
            was = self.record_dir
            self.record_dir = None   # reset discards the partial episode
            self._build()
            self.record_dir = was
            self.paused = False
            self.status = "ok"
        elif msg.type in ("ee_delta", "ee_absolute"):
            self.target, self._clamped = apply_command(
                self.target, msg, self.workspace)
        # gripper state has no sim-side effect; the id is still acked

    def _lease_sweep(self):
        if (self.commander is not None
                and time.monotonic() - self._last_cmd_wall > LEASE_TIMEOUT):
            log.info("command lease expired")
            self.commander = None

    def _grant(self, client: _Client) -> bool:
        self._lease_sweep()
        if self.commander is None and client.role == "commander":
            self.commander = client
            self._last_cmd_wall = time.monotonic()
            return True
        return client is self.commander

    # ------------------------------------------------------ asyncio side
    async def run_control(self):
        next_wall = time.monotonic()
        while not self._stop.is_set():
            self._tick()
            if self.time_scale > 0:
                next_wall += TICK_DT / self.time_scale
                delay = next_wall - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_wall = time.monotonic()  # behind: drop, don't race
            elif self.k % 20 == 0:
                await asyncio.sleep(0)

    async def run_telemetry(self):
        period = 1.0 / self.telemetry_hz
        next_wall = time.monotonic()
        while not self._stop.is_set():
            next_wall += period
            delay = next_wall - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
            frame = encode_frame(self._snapshot.to_dict())
            for c in list(self.clients):
                if c.queue.full():
                    c.queue.get_nowait()   # latest wins
                c.queue.put_nowait(frame)

    async def _sender(self, client: _Client):
        while True:
            frame = await client.queue.get()
            await client.ws.send(frame)

    async def handle_client(self, ws):
        buf = b""
        client = None
        try:
            raw = await ws.recv()
            frames, buf = decode_frames(
                raw if isinstance(raw, bytes) else raw.encode())
            if not frames or frames[0].get("type") != "hello":
                await ws.send(encode_frame(
                    {"type": "error", "reason": "expected hello"}))
                return
            hello = frames[0]
            if hello.get("schema_version") != SCHEMA_VERSION:
                await ws.send(encode_frame(
                    {"type": "error",
                     "reason": f"schema_version {SCHEMA_VERSION} required"}))
                return
            client = _Client(ws=ws, role=hello.get("role", "viewer"))
            self.clients.append(client)
            lease = self._grant(client)
            await ws.send(encode_frame(hello_frame(
                self.arm, self.workspace, CONTROL_HZ, self.telemetry_hz,
                lease)))
            sender = asyncio.ensure_future(self._sender(client))
            try:
                async for raw in ws:
                    data = raw if isinstance(raw, bytes) else raw.encode()
                    try:
                        frames, buf = decode_frames(buf + data)
                    except ProtocolError as exc:
                        await ws.send(encode_frame(
                            {"type": "error", "reason": str(exc)}))
                        buf = b""
                        continue
                    for obj in frames:
                        await self._dispatch(client, obj)
            finally:
                sender.cancel()
        finally:
            if client is not None:
                if client in self.clients:
                    self.clients.remove(client)
                if self.commander is client:
                    self.commander = None

    async def _dispatch(self, client: _Client, obj: dict):
        kind = obj.get("type")
        if kind == "heartbeat":
            if client is self.commander:
                self._last_cmd_wall = time.monotonic()
            return
        if kind == "hello":
            return   # late hello: ignore
        try:
            msg = CommandMsg.from_dict(obj)
        except ProtocolError as exc:
            await client.ws.send(encode_frame(
                {"type": "error", "reason": str(exc),
                 "seq": obj.get("seq")}))
            return
        self._lease_sweep()
        if self.commander is None and client.role == "commander":
            self._grant(client)
        self._apply(client, msg)

    async def serve(self, host: str = "127.0.0.1", port: int = 8765):
        """Run until stop() is called; returns the bound port."""
        import websockets

        async with websockets.serve(self.handle_client, host, port) as srv:
            self.port = srv.sockets[0].getsockname()[1]
            control = asyncio.ensure_future(self.run_control())
            telem = asyncio.ensure_future(self.run_telemetry())
            try:
                await self._stop.wait()
            finally:
                control.cancel()
                telem.cancel()
                self._write_episode()

    def stop(self):
        self._stop.set()

    def _write_episode(self):
        if self.recorder is None:
            return
        rec = self.recorder.finalize()
        if len(rec) == 0:
            return
        import os
        os.makedirs(self.record_dir, exist_ok=True)
        self._episode_count += 1
        path = os.path.join(
            self.record_dir,
            f"teleop_seed{self.seed}_{self._episode_count:03d}"
            ".episode.jsonl")
        write_episode(path, rec)
        log.info("episode written: %s (%d rows)", path, len(rec))
        return path
