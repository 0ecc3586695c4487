"""Message envelope, message kinds and the canonical wire encoding."""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from typing import Any, Dict, Optional

from marketsim.domain import SimError, SimTime

PROTOCOL_VERSION = "1"
ENGINE_ID = "engine"

# topics
CONTROL = "control"
ENGINE_INBOX = "engine"


def market_topic(symbol: str) -> str:
    return f"market.{symbol}"


def exec_topic(agent_id: str) -> str:
    return f"exec.{agent_id}"


def external_topic(symbol: str) -> str:
    return f"external.{symbol}"


class MessageKind(str, enum.Enum):
    ORDER_SUBMIT = "OrderSubmit"
    ORDER_CANCEL = "OrderCancel"
    EXECUTION_REPORT = "ExecutionReport"
    PORTFOLIO_UPDATE = "PortfolioUpdate"
    MARKET_DATA = "MarketData"
    EXTERNAL_DATA = "ExternalData"
    DATA_REQUEST = "DataRequest"
    TIME_TICK = "TimeTick"
    SESSION_END = "SessionEnd"
    TICK_ACK = "TickAck"  # agent -> engine: done deciding for this tick


REPORT_STATUSES = ("accepted", "filled", "partial", "rejected", "canceled", "session_expired")


class Disconnected(SimError):
    code = "DISCONNECTED"


@dataclass(frozen=True)
class Envelope:
    topic: str
    sender: str
    seq: int
    sim_time: SimTime
    kind: MessageKind
    payload: Dict[str, Any]

    def to_dict(self) -> dict:
        return {"topic": self.topic, "sender": self.sender, "seq": self.seq,
                "sim_time": self.sim_time, "kind": self.kind.value, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: dict) -> "Envelope":
        return cls(d["topic"], d["sender"], int(d["seq"]), int(d["sim_time"]), MessageKind(d["kind"]),
                   d.get("payload") or {})

    def encode(self) -> bytes:
        return canonical_json(self.to_dict())


def canonical_json(obj: Any) -> bytes:
    """Sorted keys, no whitespace, UTF-8: equal objects give equal bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def decode_envelope(data: bytes) -> Envelope:
    return Envelope.from_dict(json.loads(data.decode("utf-8")))


# -- framing ---------------------------------------------------------------

_LEN = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024


def pack_frame(obj: Any) -> bytes:
    body = canonical_json(obj)
    return _LEN.pack(len(body)) + body


def _recv_exact(sock, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock) -> Optional[dict]:
    """Next frame from a socket, or ``None`` on a clean EOF."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise Disconnected(f"frame of {n} bytes exceeds limit")
    body = _recv_exact(sock, n)
    if body is None:
        raise Disconnected("connection closed mid-frame")
    return json.loads(body.decode("utf-8"))


# payload keys that carry simulation timestamps, used by the no-lookahead audit
TIME_KEYS = frozenset({"sim_time", "exec_time", "bar_end", "published_at", "as_of", "submit_time", "time"})


def max_payload_time(obj: Any) -> Optional[int]:
    """Largest timestamp found anywhere in a payload (``None`` if there is none)."""
    best: Optional[int] = None
    stack = [obj]
    while stack:
        cur = stack.pop()
        if isinstance(cur, dict):
            for k, v in cur.items():
                if k in TIME_KEYS and isinstance(v, int) and not isinstance(v, bool):
                    best = v if best is None or v > best else best
                elif isinstance(v, (dict, list)):
                    stack.append(v)
        elif isinstance(cur, list):
            stack.extend(x for x in cur if isinstance(x, (dict, list)))
    return best
