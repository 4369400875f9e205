"""Clock abstraction so midnight rotation, grant expiry, and cooldowns are testable.

Production code uses :class:`SystemClock`; tests and deterministic sim runs
inject :class:`LogicalClock` and advance it by hand.
"""

from __future__ import annotations

import time


class Clock:
    def now(self) -> float:
        raise NotImplementedError


class SystemClock(Clock):
    def now(self) -> float:
        return time.time()


class LogicalClock(Clock):
    """Manually advanced clock starting at a fixed epoch (default 0)."""

    def __init__(self, start: float = 0.0):
        self._t = float(start)

    def now(self) -> float:
        return self._t

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("clock cannot move backwards")
        self._t += seconds

    def set(self, t: float) -> None:
        if t < self._t:
            raise ValueError("clock cannot move backwards")
        self._t = float(t)
