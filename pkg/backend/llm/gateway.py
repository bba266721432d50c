import json
import os
import threading
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional

from groq import Groq, APIConnectionError, APIStatusError, APITimeoutError
from loguru import logger
from pydantic import ValidationError

from backend.errors import BackendRefusal, LlmTransportError, ScriptExhausted, ScriptParseError
from backend.models import LlmCall, LlmRequest, LlmScriptEntry, RoleTag


class LlmBackend(ABC):
    """Chat-completion backend. ``complete`` never mutates the request."""

    def __init__(self):
        self.calls: List[LlmCall] = []
        self._calls_lock = threading.Lock()

    @abstractmethod
    def _complete(self, request: LlmRequest) -> str:
        pass

    def complete(self, request: LlmRequest) -> str:
        start = time.perf_counter()
        text = self._complete(request)
        call = LlmCall(
            role_tag=request.role_tag,
            latency_seconds=time.perf_counter() - start,
            prompt_chars=len(request.prompt),
            response_chars=len(text),
        )
        with self._calls_lock:
            self.calls.append(call)
        return text

    def count(self, role: RoleTag) -> int:
        return sum(1 for call in self.calls if call.role_tag == role)


class GroqBackend(LlmBackend):
    """OpenAI-style chat endpoint through the Groq client"""

    RETRY_BASE_SECONDS = 1.0
    MAX_ATTEMPTS = 2

    def __init__(self, model_name: str, api_key_env: str = "GROQ_API_KEY",
                 endpoint_url: Optional[str] = None, client: Optional[Groq] = None,
                 timeout: float = 10.0):
        super().__init__()
        self.model = model_name
        # Retries are counted here; the SDK must not add its own.
        self.client = client or Groq(
            api_key=os.environ.get(api_key_env, ""),
            base_url=endpoint_url,
            max_retries=0,
            timeout=timeout,
        )

    def _complete(self, request: LlmRequest) -> str:
        for attempt in range(self.MAX_ATTEMPTS):
            try:
                response = self.client.chat.completions.create(
                    model=self.model,
                    messages=[{"role": "user", "content": request.prompt}],
                    temperature=request.temperature,
                    max_tokens=request.max_output,
                )
            except (APIConnectionError, APITimeoutError) as e:
                if attempt + 1 < self.MAX_ATTEMPTS:
                    wait = self.RETRY_BASE_SECONDS * (2 ** attempt)
                    logger.warning("LLM transport error ({}), retrying in {}s", e, wait)
                    time.sleep(wait)
                    continue
                raise LlmTransportError(f"LLM transport failed: {e}") from e
            except APIStatusError as e:
                raise BackendRefusal(f"LLM backend refused: {e}", status_code=e.status_code) from e

            choice = response.choices[0]
            if choice.finish_reason == "content_filter":
                raise BackendRefusal("LLM output blocked by content filter")
            return (choice.message.content or "").strip()
        raise LlmTransportError("LLM transport failed")


class LlmScript:
    """Pre-recorded responses, consumed in order per role"""

    def __init__(self, entries: List[LlmScriptEntry]):
        self.entries = list(entries)
        self._by_role: Dict[RoleTag, List[str]] = {}
        for entry in self.entries:
            self._by_role.setdefault(entry.role, []).append(entry.response)
        self.cursors: Dict[RoleTag, int] = {role: 0 for role in RoleTag}

    def next(self, role: RoleTag) -> str:
        responses = self._by_role.get(role, [])
        cursor = self.cursors[role]
        if cursor >= len(responses):
            raise ScriptExhausted(role.value)
        self.cursors[role] = cursor + 1
        return responses[cursor]

    def remaining(self, role: RoleTag) -> int:
        return len(self._by_role.get(role, [])) - self.cursors[role]

    def to_dict(self) -> Dict:
        return {"entries": [{"role": e.role.value, "response": e.response} for e in self.entries]}


def load_script(path: Path) -> LlmScript:
    """
    Parse a script file ``{"entries": [{"role": ..., "response": ...}]}``.

    Raises:
        ScriptParseError with the line or field that failed
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ScriptParseError(f"cannot read {path}: {e}")
    except json.JSONDecodeError as e:
        raise ScriptParseError(e.msg, line=e.lineno)

    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise ScriptParseError("expected an object with an 'entries' list", field="entries")

    entries = []
    for i, raw in enumerate(doc["entries"]):
        try:
            entries.append(LlmScriptEntry.model_validate(raw))
        except ValidationError as e:
            first = e.errors()[0]
            loc = ".".join(str(part) for part in first["loc"]) or "entry"
            raise ScriptParseError(first["msg"], field=f"entries[{i}].{loc}")
    return LlmScript(entries)


class ScriptedBackend(LlmBackend):
    """Deterministic stand-in replaying an LlmScript by (role, sequence)"""

    def __init__(self, script: LlmScript):
        super().__init__()
        self.script = script
        self._locks = {role: threading.Lock() for role in RoleTag}

    def _complete(self, request: LlmRequest) -> str:
        with self._locks[request.role_tag]:
            return self.script.next(request.role_tag)


class RecordingBackend(LlmBackend):
    """Wraps a live backend and captures each reply as a script entry"""

    def __init__(self, inner: LlmBackend):
        super().__init__()
        self.inner = inner
        self.captured: List[LlmScriptEntry] = []
        self._lock = threading.Lock()

    def _complete(self, request: LlmRequest) -> str:
        text = self.inner.complete(request)
        with self._lock:
            self.captured.append(LlmScriptEntry(role=request.role_tag, response=text))
        return text

    def write_script(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(LlmScript(self.captured).to_dict(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return path


class RoleRoutedBackend(LlmBackend):
    """Dispatches each role to its own backend, falling back to ``default``"""

    def __init__(self, default: LlmBackend, per_role: Optional[Dict[RoleTag, LlmBackend]] = None):
        super().__init__()
        self.default = default
        self.per_role = per_role or {}

    def _complete(self, request: LlmRequest) -> str:
        return self.per_role.get(request.role_tag, self.default).complete(request)
