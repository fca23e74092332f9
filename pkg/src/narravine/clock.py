"""Session clock with a configurable time scale.

All "world" durations (speaking time, handover timeouts, scene timestamps)
are expressed in simulated seconds and pass through a Clock, so a scripted
replay can run at 50x speed while an interactive session runs in real time.
"""
from __future__ import annotations

import threading
import time


class Clock:
    """Scaled clock: one simulated second takes ``scale`` real seconds."""

    def __init__(self, scale: float = 1.0):
        if scale <= 0:
            raise ValueError("clock scale must be positive")
        self.scale = scale
        self._epoch = time.monotonic()

    def now_ms(self) -> int:
        """Milliseconds of simulated time since the clock was created."""
        return int((time.monotonic() - self._epoch) / self.scale * 1000)

    def sleep(self, sim_seconds: float) -> None:
        if sim_seconds > 0:
            time.sleep(sim_seconds * self.scale)

    def timer(self, sim_seconds: float, fn, *args) -> threading.Timer:
        """Start a daemon timer firing after ``sim_seconds`` of simulated time."""
        t = threading.Timer(max(sim_seconds, 0.0) * self.scale, fn, args)
        t.daemon = True
        t.start()
        return t

    def wait_until_ms(self, sim_ms: float) -> None:
        """Block until the simulated clock reaches ``sim_ms``."""
        remaining = sim_ms - self.now_ms()
        if remaining > 0:
            self.sleep(remaining / 1000.0)
