import json
import sys
import threading
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger

from backend.config import settings


def configure_logging(level: str = None, log_file: Optional[Path] = None):
    """Install the stderr sink and, optionally, a JSON-serialized file sink"""
    level = (level or settings.LOG_LEVEL).upper()
    log_file = log_file or settings.LOG_FILE
    logger.remove()
    logger.add(
        sys.stderr,
        level=level,
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | "
               "<cyan>{extra[agent]}</cyan> | {message}",
    )
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        logger.add(str(log_file), level=level, serialize=True)


logger.configure(extra={"agent": "engine"})


class ExecutionEventLog:
    """
    Ordered record of execution events.

    Each record is ``{event, node_id, t_wall, detail}``. Appends are
    serialized, so list order is the happens-before order observed by the
    coordinator.
    """

    def __init__(self):
        self._events: List[Dict[str, Any]] = []
        self._lock = threading.Lock()

    def record(self, event: str, node_id: Optional[str] = None, **detail) -> Dict[str, Any]:
        entry = {
            "event": event,
            "node_id": node_id,
            "t_wall": time.time(),
            "detail": detail,
        }
        with self._lock:
            self._events.append(entry)
        logger.bind(agent="events").debug("{} {} {}", event, node_id or "-", detail)
        return entry

    @property
    def events(self) -> List[Dict[str, Any]]:
        with self._lock:
            return list(self._events)

    def of(self, event: str) -> List[Dict[str, Any]]:
        return [e for e in self.events if e["event"] == event]

    def index_of(self, event: str, node_id: str) -> int:
        """Position of the first ``event`` for ``node_id``, -1 if absent"""
        for i, entry in enumerate(self.events):
            if entry["event"] == event and entry["node_id"] == node_id:
                return i
        return -1

    def write_jsonl(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for entry in self.events:
                f.write(json.dumps(entry, default=str) + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path: Path) -> "ExecutionEventLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as f:
            log._events = [json.loads(line) for line in f if line.strip()]
        return log

    def get_stats(self) -> Dict[str, Any]:
        """Counts per event type plus failed node ids"""
        counts: Dict[str, int] = {}
        failed = []
        for entry in self.events:
            counts[entry["event"]] = counts.get(entry["event"], 0) + 1
            if entry["event"] == "node_finish" and entry["detail"].get("status") == "Failed":
                failed.append(entry["node_id"])
        return {
            "total_events": sum(counts.values()),
            "event_counts": counts,
            "failed_nodes": failed,
        }
