"""Simulated clock shared by every component; millisecond resolution."""

from __future__ import annotations


class SimClock:
    """Monotone simulated clock. Time only moves forward, in whole ms."""

    def __init__(self, start_ms: int = 0) -> None:
        if start_ms < 0:
            raise ValueError("start_ms must be >= 0")
        self._now_ms = int(start_ms)

    @property
    def now_ms(self) -> int:
        return self._now_ms

    @property
    def now_s(self) -> int:
        """Current time in whole simulated epoch seconds (truncated)."""
        return self._now_ms // 1000

    def advance_ms(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now_ms += int(delta_ms)
        return self._now_ms

    def advance_to_ms(self, t_ms: int) -> int:
        if t_ms < self._now_ms:
            raise ValueError("clock cannot move backwards")
        self._now_ms = int(t_ms)
        return self._now_ms
