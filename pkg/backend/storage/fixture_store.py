import hashlib
import json
import os
import tempfile
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

from loguru import logger

from backend.errors import FixtureMiss, FixtureWriteError
from backend.models import FixturesMode
from backend.utils.dates import parse_iso, to_iso


class RecordedPayload:
    """A provider payload plus the time it was captured"""

    __slots__ = ("key", "api", "payload", "recorded_at")

    def __init__(self, key: str, api: str, payload: Any, recorded_at: datetime):
        self.key = key
        self.api = api
        self.payload = payload
        self.recorded_at = recorded_at


class FixtureStore:
    """
    Connector responses persisted per request key.

    Layout: one JSON file per key, named by the key's sha256 prefix, plus
    ``index.json`` mapping key -> file name. Files are written atomically so an
    interrupted record run leaves a consistent index.
    """

    INDEX_NAME = "index.json"

    def __init__(self, directory: Path, mode: FixturesMode = FixturesMode.REPLAY):
        self.directory = Path(directory)
        self.mode = FixturesMode(mode)
        self._lock = threading.Lock()
        self._index: Dict[str, str] = self._load_index()

    @property
    def index_file(self) -> Path:
        return self.directory / self.INDEX_NAME

    def _load_index(self) -> Dict[str, str]:
        if not self.index_file.exists():
            return {}
        try:
            return json.loads(self.index_file.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            logger.error("fixture index {} unreadable: {}", self.index_file, e)
            return {}

    @staticmethod
    def file_name_for(key: str) -> str:
        return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16] + ".json"

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self._index)

    def load(self, key: str) -> RecordedPayload:
        """
        Fetch a recorded payload.

        Raises:
            FixtureMiss: key not in the index or its file is missing
        """
        file_name = self._index.get(key)
        if file_name is None:
            raise FixtureMiss(key)
        path = self.directory / file_name
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise FixtureMiss(key)
        return RecordedPayload(
            key=doc["key"],
            api=doc["api"],
            payload=doc["payload"],
            recorded_at=parse_iso(doc["recorded_at"]),
        )

    def save(self, key: str, api: str, payload: Any,
             recorded_at: Optional[datetime] = None) -> RecordedPayload:
        """Persist a payload and update the index (both atomic per file)"""
        recorded_at = recorded_at or datetime.now(timezone.utc)
        doc = {
            "key": key,
            "recorded_at": to_iso(recorded_at),
            "api": api,
            "payload": payload,
        }
        file_name = self.file_name_for(key)
        with self._lock:
            try:
                self.directory.mkdir(parents=True, exist_ok=True)
                self._atomic_write(self.directory / file_name, doc)
                index = dict(self._index)
                index[key] = file_name
                self._atomic_write(self.index_file, dict(sorted(index.items())))
                self._index = index
            except OSError as e:
                raise FixtureWriteError(f"could not write fixture for {key}: {e}") from e
        logger.debug("recorded fixture {} -> {}", key, file_name)
        return RecordedPayload(key, api, payload, recorded_at)

    def _atomic_write(self, path: Path, doc: Any):
        fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(doc, f, indent=2, ensure_ascii=False)
                f.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
