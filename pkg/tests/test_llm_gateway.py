import json
from types import SimpleNamespace

import httpx
import pytest
from groq import APIConnectionError, APIStatusError

from backend.errors import (
    BackendRefusal, LlmError, ScriptExhausted, ScriptParseError, TransportError,
)
from backend.llm.gateway import (
    GroqBackend, LlmScript, RecordingBackend, RoleRoutedBackend, ScriptedBackend, load_script,
)
from backend.models import LlmRequest, LlmScriptEntry, RoleTag

from conftest import FIXTURES, scripted


def request(role=RoleTag.PLANNER, prompt="plan this"):
    return LlmRequest(role_tag=role, prompt=prompt, max_output=64)


class FakeCompletions:
    """Stands in for ``client.chat.completions``; replays outcomes in order"""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.kwargs = []

    def create(self, **kwargs):
        self.kwargs.append(kwargs)
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        content, finish_reason = outcome
        message = SimpleNamespace(content=content)
        return SimpleNamespace(choices=[SimpleNamespace(message=message,
                                                        finish_reason=finish_reason)])


def groq_backend(outcomes, monkeypatch):
    monkeypatch.setattr(GroqBackend, "RETRY_BASE_SECONDS", 0.0)
    completions = FakeCompletions(outcomes)
    client = SimpleNamespace(chat=SimpleNamespace(completions=completions))
    return GroqBackend("test-model", client=client), completions


GROQ_REQUEST = httpx.Request("POST", "https://api.groq.test/openai/v1/chat/completions")


class TestScriptedBackend:
    """Per-role cursors"""

    def test_roles_have_independent_cursors(self):
        llm = scripted((RoleTag.PLANNER, "p1"), (RoleTag.REWRITER, "r1"),
                       (RoleTag.PLANNER, "p2"))
        assert llm.complete(request(RoleTag.REWRITER)) == "r1"
        assert llm.complete(request(RoleTag.PLANNER)) == "p1"
        assert llm.complete(request(RoleTag.PLANNER)) == "p2"
        assert llm.count(RoleTag.PLANNER) == 2
        assert llm.script.remaining(RoleTag.PLANNER) == 0

    def test_exhausted(self):
        llm = scripted((RoleTag.PLANNER, "p1"))
        llm.complete(request())
        with pytest.raises(ScriptExhausted) as exc:
            llm.complete(request())
        assert exc.value.role == "Planner"

    def test_call_metadata(self):
        llm = scripted((RoleTag.GENERATOR, "four"))
        llm.complete(request(RoleTag.GENERATOR, prompt="abc"))
        call = llm.calls[0]
        assert (call.role_tag, call.prompt_chars, call.response_chars) == (RoleTag.GENERATOR, 3, 4)
        assert call.latency_seconds >= 0

    def test_request_is_not_mutated(self):
        req = request()
        scripted((RoleTag.PLANNER, "ok")).complete(req)
        assert req == request()


class TestLoadScript:
    """Script file parsing"""

    def test_bundled_scenario_script(self):
        script = load_script(FIXTURES / "scenario" / "llm_script.json")
        assert script.remaining(RoleTag.PLANNER) == 1
        assert script.remaining(RoleTag.REWRITER) >= 1
        assert script.remaining(RoleTag.GENERATOR) == 1

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text('{"entries": [\n  {"role": "Planner",\n  "response": }\n]}\n')
        with pytest.raises(ScriptParseError) as exc:
            load_script(path)
        assert exc.value.line == 3

    def test_unknown_role_reports_field(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"entries": [
            {"role": "Planner", "response": "x"},
            {"role": "Oracle", "response": "y"}]}))
        with pytest.raises(ScriptParseError) as exc:
            load_script(path)
        assert exc.value.field == "entries[1].role"

    def test_missing_entries(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text("[]")
        with pytest.raises(ScriptParseError):
            load_script(path)


class TestRecordingBackend:
    """Live replies captured as a replayable script"""

    def test_capture_and_replay(self, tmp_path):
        inner = scripted((RoleTag.PLANNER, "plan"), (RoleTag.GENERATOR, "report"))
        recorder = RecordingBackend(inner)
        recorder.complete(request(RoleTag.PLANNER))
        recorder.complete(request(RoleTag.GENERATOR))

        path = recorder.write_script(tmp_path / "recorded.json")
        replay = ScriptedBackend(load_script(path))
        assert replay.complete(request(RoleTag.GENERATOR)) == "report"
        assert replay.complete(request(RoleTag.PLANNER)) == "plan"


class TestRoleRoutedBackend:
    def test_routes_by_role(self):
        default = scripted((RoleTag.PLANNER, "default plan"))
        generator = scripted((RoleTag.GENERATOR, "big model report"))
        llm = RoleRoutedBackend(default, {RoleTag.GENERATOR: generator})
        assert llm.complete(request(RoleTag.GENERATOR)) == "big model report"
        assert llm.complete(request(RoleTag.PLANNER)) == "default plan"
        assert generator.count(RoleTag.GENERATOR) == 1
        assert default.count(RoleTag.GENERATOR) == 0


class TestGroqBackend:
    """Live backend error mapping with a stubbed client"""

    def test_success(self, monkeypatch):
        llm, completions = groq_backend([("  hello  ", "stop")], monkeypatch)
        assert llm.complete(request()) == "hello"
        sent = completions.kwargs[0]
        assert sent["model"] == "test-model"
        assert sent["max_tokens"] == 64
        assert sent["temperature"] == 0.0
        assert sent["messages"] == [{"role": "user", "content": "plan this"}]

    def test_transport_retry_then_success(self, monkeypatch):
        llm, completions = groq_backend(
            [APIConnectionError(request=GROQ_REQUEST), ("ok", "stop")], monkeypatch)
        assert llm.complete(request()) == "ok"
        assert len(completions.kwargs) == 2

    def test_transport_failure_after_retry(self, monkeypatch):
        llm, completions = groq_backend(
            [APIConnectionError(request=GROQ_REQUEST), APIConnectionError(request=GROQ_REQUEST)],
            monkeypatch)
        with pytest.raises(TransportError) as exc:
            llm.complete(request())
        assert isinstance(exc.value, LlmError)
        assert exc.value.exit_code == 4
        assert len(completions.kwargs) == 2

    def test_status_error_is_refusal(self, monkeypatch):
        response = httpx.Response(401, request=GROQ_REQUEST)
        error = APIStatusError("unauthorized", response=response, body=None)
        llm, completions = groq_backend([error], monkeypatch)
        with pytest.raises(BackendRefusal) as exc:
            llm.complete(request())
        assert exc.value.status_code == 401
        assert len(completions.kwargs) == 1

    def test_rate_limit_is_not_retried(self, monkeypatch):
        response = httpx.Response(429, request=GROQ_REQUEST)
        error = APIStatusError("slow down", response=response, body=None)
        llm, completions = groq_backend([error, ("late", "stop")], monkeypatch)
        with pytest.raises(BackendRefusal):
            llm.complete(request())
        assert len(completions.kwargs) == 1

    def test_content_filter_is_refusal(self, monkeypatch):
        llm, _ = groq_backend([("", "content_filter")], monkeypatch)
        with pytest.raises(BackendRefusal):
            llm.complete(request())

    def test_client_does_not_retry_on_its_own(self, monkeypatch):
        monkeypatch.setenv("GROQ_API_KEY", "test-key")
        llm = GroqBackend("test-model", timeout=3.0)
        assert llm.client.max_retries == 0
        assert llm.client.timeout == 3.0


class TestLlmScript:
    def test_to_dict_preserves_order(self):
        entries = [LlmScriptEntry(role=RoleTag.PLANNER, response="a"),
                   LlmScriptEntry(role=RoleTag.ANSWERER, response="b")]
        assert LlmScript(entries).to_dict() == {"entries": [
            {"role": "Planner", "response": "a"}, {"role": "Answerer", "response": "b"}]}
