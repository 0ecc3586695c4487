"""External decision providers: a strategy whose decisions come from another process.

The provider receives one JSON decision context per decision point and
answers with a JSON array of action objects::

    [{"action": "BUY", "orderType": "LIMIT", "price": 101.5, "quantity": 10,
      "explanation": "..."}]

Two transports are supported: newline-delimited JSON over a child process's
stdin/stdout (``command``) and an HTTP POST of the context (``url``).
Malformed answers and timeouts are logged and count as ``[]``.
"""

from __future__ import annotations

import json
import logging
import queue
import shlex
import subprocess
import threading
import urllib.error
import urllib.request
from typing import List, Optional, Sequence, Union

from marketsim.agents.portfolio import parse_action_document, short_capacity
from marketsim.agents.strategies import DecisionContext, Decision, Strategy, register_strategy
from marketsim.domain import SimError, decimal_str

log = logging.getLogger(__name__)


def build_context(ctx: DecisionContext) -> dict:
    """The decision document sent to a provider."""
    p = ctx.portfolio
    price = ctx.last_price
    constraints = {
        "available_cash": decimal_str(p.cash),
        "max_sell": p.long_qty,
        "max_cover": p.short_qty,
        "max_short": short_capacity(p, price) if price else 0,
        "rules": [
            "BUY cost may not exceed available cash",
            "SHORT notional may not exceed the cash balance",
            "SELL is clipped to long holdings",
            "SHORT_COVER is clipped to short holdings",
            "unfilled orders are canceled at session close",
        ],
    }
    return {
        "agent_id": ctx.agent_id,
        "instrument": ctx.instrument,
        "now": ctx.sim_time,
        "window": list(ctx.window) if ctx.window else None,
        "action_interval": ctx.action_interval,
        "market_open": ctx.market_open,
        "candle": ctx.candle.to_dict() if ctx.candle else None,
        "indicators": ctx.indicators,
        "portfolio": {
            "cash": decimal_str(p.cash),
            "long": p.long_qty,
            "short": p.short_qty,
            "net": p.net_qty,
            "realized_pnl": decimal_str(p.realized_pnl),
        },
        "open_orders": [ctx.open_orders[k] for k in sorted(ctx.open_orders)],
        "recent_activity": ctx.recent_activity,
        "news": ctx.news,
        "constraints": constraints,
    }


class ProviderTimeout(SimError):
    code = "PROVIDER_TIMEOUT"


class _ProcessChannel:
    """One long-lived child process speaking NDJSON on stdin/stdout."""

    def __init__(self, command: Union[str, Sequence[str]]):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
                                     encoding="utf-8", bufsize=1)
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._stale = 0  # answers still owed for requests that already timed out
        threading.Thread(target=self._pump, daemon=True).start()

    def _pump(self) -> None:
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def call(self, doc: dict, timeout: float) -> str:
        try:
            self.proc.stdin.write(json.dumps(doc, sort_keys=True) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SimError(f"provider process unavailable: {exc}", code="PROVIDER_ERROR") from None
        while True:
            try:
                line = self._lines.get(timeout=timeout)
            except queue.Empty:
                self._stale += 1
                raise ProviderTimeout(f"no answer within {timeout}s") from None
            if line is None:
                raise SimError("provider process exited", code="PROVIDER_ERROR")
            if self._stale:
                self._stale -= 1
                continue
            return line

    def close(self) -> None:
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class _HttpChannel:
    def __init__(self, url: str):
        self.url = url

    def call(self, doc: dict, timeout: float) -> str:
        req = urllib.request.Request(self.url, data=json.dumps(doc, sort_keys=True).encode(),
                                     headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return resp.read().decode("utf-8")
        except TimeoutError:
            raise ProviderTimeout(f"no answer within {timeout}s") from None
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise ProviderTimeout(f"no answer within {timeout}s") from None
            raise SimError(f"provider request failed: {exc}", code="PROVIDER_ERROR") from None

    def close(self) -> None:
        pass


class ExternalProvider(Strategy):
    """Delegates every decision to an external program."""

    name = "external"

    def __init__(self, command: Union[str, Sequence[str], None] = None, url: Optional[str] = None,
                 timeout: float = 30.0, news_lookback: Optional[str] = None) -> None:
        if (command is None) == (url is None):
            raise SimError("external provider needs exactly one of command or url", code="BAD_PROVIDER")
        self.timeout = float(timeout)
        self.news_lookback = news_lookback
        self._channel = _ProcessChannel(command) if command is not None else _HttpChannel(url)
        self.diagnostics: List[dict] = []
        self.explanation = ""

    def decide(self, ctx: DecisionContext) -> List[Decision]:
        self.explanation = ""
        doc = build_context(ctx)
        try:
            raw = self._channel.call(doc, self.timeout)
            actions = parse_action_document(raw)
        except SimError as exc:
            log.warning("agent %s provider problem at %s: %s", ctx.agent_id, ctx.sim_time, exc)
            self.diagnostics.append({"sim_time": ctx.sim_time, "code": exc.code, "message": str(exc)})
            self.explanation = f"{exc.code}: {exc}"
            return []
        self.explanation = " | ".join(a.explanation for a in actions if a.explanation)
        return list(actions)

    def last_diagnostic(self, sim_time) -> Optional[dict]:
        if self.diagnostics and self.diagnostics[-1]["sim_time"] == sim_time:
            return self.diagnostics[-1]
        return None

    def close(self) -> None:
        self._channel.close()


register_strategy("external", ExternalProvider)
