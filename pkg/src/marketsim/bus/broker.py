"""In-process broker: topic pub/sub, request/response and delivery transcripts."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from fnmatch import fnmatchcase
from typing import Callable, Dict, List, Optional, Tuple

from marketsim.bus.envelope import Disconnected, Envelope, MessageKind, max_payload_time
from marketsim.domain import SimError, SimTime

Callback = Callable[[Envelope], None]
Responder = Callable[[Envelope], dict]

_WILDCARDS = set("*?[")


class Deduper:
    """Per-sender high-water mark; a (sender, seq) seen before is dropped."""

    def __init__(self) -> None:
        self._hw: Dict[str, int] = {}
        self.dropped = 0

    def accept(self, env: Envelope) -> bool:
        hw = self._hw.get(env.sender, 0)
        if env.seq <= hw:
            self.dropped += 1
            return False
        self._hw[env.sender] = env.seq
        return True


@dataclass(frozen=True)
class Delivery:
    """One message handed to a subscriber, as seen by the transcript."""

    recipient: str
    topic: str
    kind: str
    sender: str
    seq: int
    sim_time: SimTime
    payload_time: Optional[SimTime]
    clock: Optional[SimTime]  # engine clock at the moment of delivery


@dataclass
class Subscription:
    id: int
    subscriber: str
    pattern: str
    callback: Callback
    active: bool = True


class Broker:
    """Thread-safe topic router with synchronous delivery.

    ``publish`` runs subscriber callbacks on the publishing thread, so a
    single-threaded simulation is fully deterministic. Ordering is guaranteed
    per sender only. Pass ``clock`` and ``record=True`` to keep a transcript
    of every delivery with the engine time at which it happened.
    """

    def __init__(self, clock: Optional[Callable[[], SimTime]] = None, record: bool = False):
        self._lock = threading.RLock()
        self._exact: Dict[str, List[Subscription]] = {}
        self._patterns: List[Subscription] = []
        self._cache: Dict[str, Tuple[Subscription, ...]] = {}
        self._ids = itertools.count(1)
        self._responders: Dict[MessageKind, Responder] = {}
        self._closed = False
        self.clock = clock
        self.record = record
        self.transcript: List[Delivery] = []
        self._tlock = threading.Lock()
        self.delivered = 0  # approximate under concurrent publishers; used for throughput figures

    # -- subscriptions ---------------------------------------------------

    def subscribe(self, subscriber: str, pattern: str, callback: Callback) -> Subscription:
        with self._lock:
            self._check_open()
            sub = Subscription(next(self._ids), subscriber, pattern, callback)
            if _WILDCARDS & set(pattern):
                self._patterns.append(sub)
            else:
                self._exact.setdefault(pattern, []).append(sub)
            self._cache.clear()
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            sub.active = False
            if sub in self._patterns:
                self._patterns.remove(sub)
            subs = self._exact.get(sub.pattern)
            if subs and sub in subs:
                subs.remove(sub)
            self._cache.clear()

    def unsubscribe_all(self, subscriber: str) -> None:
        with self._lock:
            for subs in list(self._exact.values()) + [self._patterns]:
                for s in [s for s in subs if s.subscriber == subscriber]:
                    self.unsubscribe(s)

    def _targets(self, topic: str) -> Tuple[Subscription, ...]:
        with self._lock:
            hit = self._cache.get(topic)
            if hit is None:
                subs = list(self._exact.get(topic, ()))
                subs.extend(s for s in self._patterns if fnmatchcase(topic, s.pattern))
                subs.sort(key=lambda s: s.id)
                hit = self._cache[topic] = tuple(subs)
            return hit

    # -- messaging -------------------------------------------------------

    def publish(self, env: Envelope) -> int:
        """Deliver to every current subscriber of ``env.topic``; returns the count."""
        if self._closed:
            raise Disconnected("broker closed")
        targets = self._targets(env.topic)
        self.delivered += len(targets)
        for sub in targets:
            if not sub.active:
                continue
            if self.record:
                self._note(sub.subscriber, env)
            sub.callback(env)
        return len(targets)

    def _note(self, recipient: str, env: Envelope) -> None:
        d = Delivery(recipient, env.topic, env.kind.value, env.sender, env.seq, env.sim_time,
                     max_payload_time(env.payload), self.clock() if self.clock else None)
        with self._tlock:
            self.transcript.append(d)

    def register_responder(self, kind: MessageKind, fn: Responder) -> None:
        with self._lock:
            self._responders[kind] = fn

    def request(self, env: Envelope) -> dict:
        """Synchronous query routed to the responder for ``env.kind``."""
        if self._closed:
            raise Disconnected("broker closed")
        fn = self._responders.get(env.kind)
        if fn is None:
            raise SimError(f"no responder for {env.kind.value}", code="UNKNOWN_KIND")
        payload = fn(env)
        if self.record:
            reply = Envelope(f"reply.{env.sender}", "engine", env.seq, env.sim_time,
                             MessageKind.EXTERNAL_DATA, payload)
            self._note(env.sender, reply)
        return payload

    def close(self) -> None:
        self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed

    def _check_open(self) -> None:
        if self._closed:
            raise Disconnected("broker closed")


class LocalClient:
    """A participant attached directly to an in-process :class:`Broker`.

    Stamps outgoing envelopes with a gapless per-sender sequence and drops
    duplicate deliveries before they reach the callback.
    """

    def __init__(self, broker: Broker, client_id: str):
        self.broker = broker
        self.client_id = client_id
        self._seq = 0
        self._subs: List[Subscription] = []
        self.config: dict = {}

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def subscribe(self, pattern: str, callback: Callback) -> Subscription:
        dd = Deduper()

        def deliver(env: Envelope) -> None:
            if dd.accept(env):
                callback(env)

        sub = self.broker.subscribe(self.client_id, pattern, deliver)
        self._subs.append(sub)
        return sub

    def publish(self, topic: str, kind: MessageKind, payload: dict, sim_time: SimTime) -> Envelope:
        env = Envelope(topic, self.client_id, self.next_seq(), sim_time, kind, payload)
        self.broker.publish(env)
        return env

    def request(self, kind: MessageKind, payload: dict, sim_time: SimTime) -> dict:
        env = Envelope("request", self.client_id, self.next_seq(), sim_time, kind, payload)
        return self.broker.request(env)

    def ready(self) -> None:
        """Subscriptions are in place (nothing to do in-process)."""

    def close(self) -> None:
        for sub in self._subs:
            self.broker.unsubscribe(sub)
        self._subs.clear()
