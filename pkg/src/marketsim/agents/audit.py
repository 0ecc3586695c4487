"""Append-only JSON-lines decision audit."""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, List, Optional, Sequence, Union

from marketsim.bus.envelope import canonical_json
from marketsim.domain import SimError, SimTime


def decision_record(agent_id: str, sim_time: SimTime, actions: Sequence[dict], explanation: str,
                    **extra) -> dict:
    rec = {"agent_id": agent_id, "sim_time": sim_time, "actions": list(actions), "explanation": explanation}
    rec.update(extra)
    return rec


class AuditLog:
    """One JSON object per line; any write failure aborts the run."""

    def __init__(self, path: Union[str, Path, None] = None, stream: Optional[IO[bytes]] = None):
        self.path = Path(path) if path is not None else None
        try:
            self._fh = stream if stream is not None else open(self.path, "wb")
        except OSError as exc:
            raise SimError(f"cannot open audit log {path}: {exc}", code="AUDIT_IO") from None
        self.count = 0

    def append(self, record: dict) -> None:
        try:
            self._fh.write(canonical_json(record) + b"\n")
        except (OSError, ValueError) as exc:
            raise SimError(f"audit write failed: {exc}", code="AUDIT_IO") from None
        self.count += 1

    def log_decision(self, agent_id: str, sim_time: SimTime, actions: Sequence[dict], explanation: str,
                     **extra) -> dict:
        rec = decision_record(agent_id, sim_time, actions, explanation, **extra)
        self.append(rec)
        return rec

    def close(self) -> None:
        try:
            self._fh.flush()
            if self.path is not None:
                self._fh.close()
        except OSError as exc:
            raise SimError(f"audit flush failed: {exc}", code="AUDIT_IO") from None


def read_audit(path: Union[str, Path]) -> List[dict]:
    with open(path, "rb") as fh:
        return [json.loads(line) for line in fh if line.strip()]
