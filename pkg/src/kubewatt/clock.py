"""Clocks used by collection loops: wall time, or virtual time for simulation."""

from __future__ import annotations

import threading
import time
from typing import Optional, Protocol


class Clock(Protocol):
    def now(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class WallClock:
    def __init__(self, stop: Optional[threading.Event] = None):
        self._stop = stop

    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if self._stop is not None:
            self._stop.wait(seconds)
        else:
            time.sleep(seconds)


class VirtualClock:
    """Time advances only through :meth:`sleep`.

    With ``pace`` set, each virtual sleep also blocks for ``seconds / pace`` of
    wall time; results never depend on it.
    """

    def __init__(self, start: float = 0.0, pace: Optional[float] = None):
        if pace is not None and pace < 1:
            raise ValueError(f"speedup must be >= 1, got {pace!r}")
        self.time = float(start)
        self.pace = pace

    def now(self) -> float:
        return self.time

    def sleep(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot sleep a negative duration")
        if self.pace is not None and seconds > 0:
            time.sleep(seconds / self.pace)
        self.time += seconds


class ScaledClock:
    """Virtual time that runs ``speedup`` times faster than the wall clock.

    Thread-safe; used when live-style loops run against a simulated cluster.
    """

    def __init__(self, speedup: float, start: float = 0.0, stop: Optional[threading.Event] = None):
        if speedup < 1:
            raise ValueError(f"speedup must be >= 1, got {speedup!r}")
        self.speedup = speedup
        self.start = start
        self._t0 = time.monotonic()
        self._stop = stop

    def now(self) -> float:
        return self.start + (time.monotonic() - self._t0) * self.speedup

    def sleep(self, seconds: float) -> None:
        wall = max(seconds, 0.0) / self.speedup
        if self._stop is not None:
            self._stop.wait(wall)
        else:
            time.sleep(wall)
