"""Perception simulators wired onto middleware ports.

One host boots three workers, each owning its named port:

    /narravine/percept/face   enrollment + partner recognition
    /narravine/percept/gaze   free-running mutual-gaze stream
    /narravine/percept/cube   cube identification on request

The supervisor publishes commands on /narravine/fsm/commands (connected to
every percept port); workers publish results back to /narravine/fsm/events.
Workers run as threads but share nothing with the supervisor except sockets,
so moving one onto another machine only changes the registry's address table.
"""
from __future__ import annotations

import logging
import queue
import threading

import numpy as np

from ..clock import Clock
from ..config import SessionConfig
from ..portnet import MessageKind, Port, PortRegistry
from ..scenes import SceneFeeds
from .faces import NoFaceSeen, enroll_partner, make_detection, recognize_partner
from .gaze import classify_mutual_gaze, load_default_gaze_model, synth_gaze_vector
from .objects import CubeObservation, NoCubeVisible, ObjectClassRegistry

log = logging.getLogger(__name__)

FACE_PORT = "/narravine/percept/face"
GAZE_PORT = "/narravine/percept/gaze"
CUBE_PORT = "/narravine/percept/cube"
COMMANDS_PORT = "/narravine/fsm/commands"
EVENTS_PORT = "/narravine/fsm/events"

_ENROLL_FRAMES = 10


class PerceptionHost:
    """Owns the three simulated perception workers for one session."""

    def __init__(
        self,
        registry: PortRegistry,
        clock: Clock,
        feeds: SceneFeeds,
        config: SessionConfig,
        stickers: list[dict],
    ):
        self._registry = registry
        self._clock = clock
        self._feeds = feeds
        self._config = config
        self._stickers = stickers
        self._rng = np.random.default_rng(config.seed)
        self.object_registry = ObjectClassRegistry()
        self._ports: dict[str, Port] = {}
        self._queues: dict[str, queue.Queue] = {
            "face": queue.Queue(),
            "cube": queue.Queue(),
        }
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()

    def start(self) -> None:
        for name in (FACE_PORT, GAZE_PORT, CUBE_PORT):
            self._ports[name] = self._registry.register(name)
        self._ports[FACE_PORT].subscribe(self._on_command("face"))
        self._ports[CUBE_PORT].subscribe(self._on_command("cube"))
        for name in (FACE_PORT, GAZE_PORT, CUBE_PORT):
            self._ports[name].connect(EVENTS_PORT)
        # teach the classes one by one, the way a live demo would
        self._register_classes()
        for target, fn in (("face", self._face_loop), ("gaze", self._gaze_loop),
                           ("cube", self._cube_loop)):
            t = threading.Thread(target=fn, name="percept-" + target, daemon=True)
            t.start()
            self._threads.append(t)

    def _register_classes(self) -> None:
        for entry in self._stickers:
            sample = CubeObservation(
                bbox=(280.0, 200.0, 90.0, 90.0),
                class_label=entry["id"],
                confidence=1.0,
                true_label=entry["id"],
            )
            self.object_registry.register(entry["id"], [sample])
            log.debug("registered cube class %s", entry["id"])

    def stop(self) -> None:
        self._stop.set()
        for q in self._queues.values():
            q.put(None)
        for name, port in self._ports.items():
            try:
                self._registry.deregister(name)
            except Exception:
                port.close()

    def _on_command(self, worker: str):
        def cb(message) -> None:
            if message.kind != MessageKind.COMMAND:
                return
            self._queues[worker].put(dict(message.payload))

        return cb

    def _publish(self, port_name: str, payload: dict) -> None:
        try:
            self._ports[port_name].publish(payload, MessageKind.EVENT)
        except Exception as exc:  # port may be closing at session end
            log.debug("publish on %s failed: %s", port_name, exc)

    # --- face worker ---------------------------------------------------

    def _face_loop(self) -> None:
        while not self._stop.is_set():
            cmd = self._queues["face"].get()
            if cmd is None:
                return
            if cmd.get("op") != "enroll":
                continue
            gen = cmd.get("gen", 0)
            self._enroll(gen, float(cmd.get("timeout_s", self._config.enroll_timeout_s)))

    def _enroll(self, gen: int, timeout_s: float) -> None:
        faces = self._feeds.faces.wait_for_faces(timeout_s)
        if not faces:
            self._publish(FACE_PORT, {"enroll_failed": "no face seen", "gen": gen})
            return
        self._clock.sleep(self._config.enroll_duration_s)
        identities = [str(f.get("identity", "unknown")) for f in faces]
        frames = []
        for _ in range(_ENROLL_FRAMES):
            frame = [
                make_detection(
                    str(f.get("identity", "unknown")),
                    float(f.get("area", 20000.0)),
                    seed=self._config.seed,
                    noise=0.02,
                    rng=self._rng,
                    track_id=i,
                )
                for i, f in enumerate(faces)
            ]
            frames.append(frame)
        try:
            model = enroll_partner(frames, threshold=self._config.face_threshold)
        except NoFaceSeen:
            self._publish(FACE_PORT, {"enroll_failed": "no face seen", "gen": gen})
            return
        probe = frames[-1]
        partner = recognize_partner(probe, model)
        participant_id = identities[partner.track_id]
        self._publish(
            FACE_PORT,
            {
                "participant_id": participant_id,
                "n_candidates": len(faces),
                "gen": gen,
            },
        )

    # --- gaze worker ----------------------------------------------------

    def _gaze_loop(self) -> None:
        model = load_default_gaze_model()
        while not self._stop.is_set():
            ev = self._feeds.gaze.next(timeout_s=1.0)
            if ev is None:
                continue
            yaw = float(ev.params.get("yaw_rad", 0.0))
            vector = synth_gaze_vector(yaw, rng=self._rng)
            label = classify_mutual_gaze(vector, model)
            self._publish(GAZE_PORT, {"gaze": label, "at_ms": ev.at_ms})

    # --- cube worker ----------------------------------------------------

    def _cube_loop(self) -> None:
        while not self._stop.is_set():
            cmd = self._queues["cube"].get()
            if cmd is None:
                return
            if cmd.get("op") != "request_cube":
                continue
            gen = cmd.get("gen", 0)
            self._detect(gen, float(cmd.get("timeout_s", self._config.cube_timeout_s)))

    def _detect(self, gen: int, timeout_s: float) -> None:
        ev = self._feeds.cube.next(timeout_s)
        if ev is None:
            self._publish(CUBE_PORT, {"no_cube": True, "gen": gen})
            return
        if ev.kind == "cube_drop":
            self._publish(CUBE_PORT, {"drop": True, "gen": gen})
            return
        label = str(ev.params.get("label", ""))
        misdetect = bool(ev.params.get("misdetect", False))
        if not misdetect and self._config.misdetect_probability > 0:
            misdetect = bool(self._rng.random() < self._config.misdetect_probability)
        noise = float(ev.params.get("noise_level", self._config.noise_level))
        try:
            obs = self.object_registry.observe(
                label,
                rng=self._rng,
                noise_level=noise,
                misdetect=misdetect,
                frame_ts=self._clock.now_ms(),
            )
        except NoCubeVisible:
            self._publish(CUBE_PORT, {"no_cube": True, "gen": gen})
            return
        self._publish(
            CUBE_PORT,
            {
                "observation": {
                    "bbox": list(obs.bbox),
                    "class_label": obs.class_label,
                    "confidence": obs.confidence,
                    "frame_ts": obs.frame_ts,
                    "true_label": obs.true_label,
                },
                "gen": gen,
            },
        )
