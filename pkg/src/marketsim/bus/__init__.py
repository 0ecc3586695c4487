from marketsim.bus.broker import Broker, Deduper, Delivery, LocalClient, Subscription
from marketsim.bus.envelope import (
    CONTROL,
    ENGINE_ID,
    ENGINE_INBOX,
    PROTOCOL_VERSION,
    REPORT_STATUSES,
    Disconnected,
    Envelope,
    MessageKind,
    canonical_json,
    decode_envelope,
    exec_topic,
    external_topic,
    market_topic,
    max_payload_time,
    pack_frame,
    read_frame,
)
from marketsim.bus.tcp import BusServer, TcpClient

__all__ = [
    "Broker", "BusServer", "CONTROL", "Deduper", "Delivery", "Disconnected", "ENGINE_ID", "ENGINE_INBOX",
    "Envelope", "LocalClient", "MessageKind", "PROTOCOL_VERSION", "REPORT_STATUSES", "Subscription",
    "TcpClient", "canonical_json", "decode_envelope", "exec_topic", "external_topic", "market_topic",
    "max_payload_time", "pack_frame", "read_frame",
]
