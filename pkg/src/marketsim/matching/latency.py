"""Order-path latency: submit time -> arrival time at the matcher."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from marketsim.domain import Order, SimTime

FIXED = "fixed"
UNIFORM_JITTER = "uniform_jitter"


@dataclass(frozen=True)
class LatencyModel:
    mode: str = FIXED
    base_ms: int = 0
    jitter_ms: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (FIXED, UNIFORM_JITTER):
            raise ValueError(f"unknown latency mode {self.mode!r}")
        if self.base_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency parameters must be non-negative")

    def delay(self, agent_id: str, seq: int) -> int:
        if self.mode == FIXED or self.jitter_ms == 0:
            return self.base_ms
        # one independent draw per (seed, agent, order); scheduling order cannot leak in
        digest = hashlib.sha256(f"{self.seed}|{agent_id}|{seq}".encode()).digest()
        return self.base_ms + int.from_bytes(digest[:8], "big") % (self.jitter_ms + 1)


def apply_latency(order: Order, model: LatencyModel) -> SimTime:
    return order.submit_time + model.delay(order.agent_id, order.order_id)
