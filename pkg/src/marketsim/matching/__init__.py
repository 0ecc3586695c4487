"""Order-level execution: book, matcher, stops, latency and event replay."""

from marketsim.matching.book import BookSnapshot, OrderBook, RestingOrder, book_top
from marketsim.matching.latency import LatencyModel, apply_latency
from marketsim.matching.matcher import EXOGENOUS, MatchingEngine, Outcome, SubmitResult, cancel, submit
from marketsim.matching.replay import BookEvent, EventKind, ReplayStep, apply_event, replay_events
from marketsim.matching.stops import PendingStop, StopBook, check_stop_triggers

__all__ = [
    "BookEvent",
    "BookSnapshot",
    "EXOGENOUS",
    "EventKind",
    "LatencyModel",
    "MatchingEngine",
    "OrderBook",
    "Outcome",
    "PendingStop",
    "ReplayStep",
    "RestingOrder",
    "StopBook",
    "SubmitResult",
    "apply_event",
    "apply_latency",
    "book_top",
    "cancel",
    "check_stop_triggers",
    "replay_events",
    "submit",
]
