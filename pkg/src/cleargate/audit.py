"""Append-only JSONL audit trail."""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from cleargate.errors import StorageFailure


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


@dataclass(frozen=True)
class AuditEntry:
    user_id: str | None
    action: str
    decision: str
    mode: str | None = None
    resource_ids: tuple[str, ...] = ()
    deny_reasons: tuple[str, ...] = ()
    policy_version: int | None = None
    timestamp: str = field(default_factory=utc_now)

    def to_json(self) -> str:
        record = asdict(self)
        record["resource_ids"] = list(self.resource_ids)
        record["deny_reasons"] = list(self.deny_reasons)
        return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


class AuditLog:
    """Serialized appends to a JSONL file, or to memory when ``path`` is None."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._memory: list[str] = []

    def append(self, entry: AuditEntry) -> None:
        line = entry.to_json()
        with self._lock:
            if self.path is None:
                self._memory.append(line)
                return
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            except OSError as exc:
                raise StorageFailure(f"cannot append to audit log {self.path}: {exc}") from exc

    def lines(self) -> list[str]:
        with self._lock:
            if self.path is None:
                return list(self._memory)
            try:
                text = self.path.read_text(encoding="utf-8")
            except FileNotFoundError:
                return []
            except OSError as exc:
                raise StorageFailure(f"cannot read audit log {self.path}: {exc}") from exc
        return [line for line in text.splitlines() if line]

    def tail(self, n: int) -> list[dict]:
        if n <= 0:
            return []
        return [json.loads(line) for line in self.lines()[-n:]]

    def __len__(self) -> int:
        return len(self.lines())
