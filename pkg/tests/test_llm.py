import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from chainplan.enforcer import DecoderSession, compile_schema
from chainplan.llm import (
    CompletionError,
    CompletionRequest,
    NoPermissibleTokenError,
    RemoteChatModel,
    ReplayMismatchError,
    ScriptedModel,
    ScriptedTokenModel,
    constrained_complete,
    fingerprint,
    load_replay,
    save_replay,
)
from chainplan.plan import parse_plan


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest(prompt="x", max_tokens=0)
    with pytest.raises(ValueError):
        CompletionRequest(prompt="x", temperature=-0.1)


def test_fingerprint_normalizes_whitespace():
    assert fingerprint("a  b\n\tc") == fingerprint("a b c")
    assert fingerprint("a b") != fingerprint("a c")


def test_scripted_replay():
    model = ScriptedModel({fingerprint("Q1"): "[]"})
    result = model.complete(CompletionRequest(prompt="Q1"))
    assert result.text == "[]"
    assert model.calls == 1


def test_scripted_strict_order_mismatch():
    model = ScriptedModel([(fingerprint("first"), "1"), (fingerprint("second"), "2")], strict=True)
    with pytest.raises(ReplayMismatchError) as err:
        model.complete(CompletionRequest(prompt="second"))
    assert fingerprint("first") in str(err.value)


def test_scripted_unknown_prompt():
    model = ScriptedModel({})
    with pytest.raises(ReplayMismatchError):
        model.complete(CompletionRequest(prompt="never scripted"))


def test_replay_file_round_trip(tmp_path):
    path = tmp_path / "replay.jsonl"
    save_replay([(fingerprint("Q"), "[]")], path)
    model = load_replay(path)
    assert model.complete(CompletionRequest(prompt="Q")).text == "[]"


def test_replay_file_bad_line(tmp_path):
    path = tmp_path / "replay.jsonl"
    path.write_text('{"fingerprint": "x"}\n', encoding="utf-8")
    with pytest.raises(CompletionError) as err:
        load_replay(path)
    assert "line 1" in str(err.value)


class _StubHandler(BaseHTTPRequestHandler):
    failures_left = 0
    seen_payloads: list = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        type(self).seen_payloads.append(payload)
        if type(self).failures_left > 0:
            type(self).failures_left -= 1
            self.send_response(500)
            self.end_headers()
            return
        body = json.dumps({
            "choices": [{"message": {"role": "assistant", "content": "[]"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 2},
        }).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.failures_left = 0
    _StubHandler.seen_payloads = []
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_remote_model_against_stub(stub_server):
    model = RemoteChatModel(model_id="test-model", api_base=stub_server, api_key="k")
    result = model.complete(CompletionRequest(prompt="plan it", system="be terse"))
    assert result.text == "[]"
    assert result.prompt_tokens == 12
    assert result.completion_tokens == 2
    assert model.calls == 1
    payload = _StubHandler.seen_payloads[0]
    assert payload["model"] == "test-model"
    assert payload["messages"][0] == {"role": "system", "content": "be terse"}


def test_remote_model_retries_then_succeeds(stub_server):
    _StubHandler.failures_left = 2
    model = RemoteChatModel(api_base=stub_server, api_key="k", backoff_s=0.0)
    result = model.complete(CompletionRequest(prompt="q"))
    assert result.text == "[]"
    assert len(_StubHandler.seen_payloads) == 3


def test_remote_model_fails_after_retries(stub_server):
    _StubHandler.failures_left = 10
    model = RemoteChatModel(api_base=stub_server, api_key="k", backoff_s=0.0, max_attempts=3)
    with pytest.raises(CompletionError) as err:
        model.complete(CompletionRequest(prompt="q"))
    assert "3 attempts" in str(err.value)


def test_constrained_token_model_masks_hallucinated_name(fixture_registry):
    automaton = compile_schema(fixture_registry)
    steps = [
        ['[{"tool_name":"'],
        ["made_up_tool", "who_am_i"],  # first candidate masked out
        ['","arguments":[]}]'],
    ]
    model = ScriptedTokenModel(steps)
    session = DecoderSession(automaton)
    result = constrained_complete(model, CompletionRequest(prompt="q"), session)
    assert result.text == '[{"tool_name":"who_am_i","arguments":[]}]'
    assert result.mode == "enforced"
    assert model.calls == 1
    assert parse_plan(result.text).ok


def test_constrained_token_model_conformant_output(fixture_registry):
    automaton = compile_schema(fixture_registry)
    text = '[{"tool_name":"get_sprint_id","arguments":[]}]'
    model = ScriptedTokenModel([[text]])
    result = constrained_complete(model, CompletionRequest(prompt="q"), DecoderSession(automaton))
    assert result.text == text


def test_constrained_no_permissible_token(fixture_registry):
    automaton = compile_schema(fixture_registry)
    model = ScriptedTokenModel([["zzz", "###"]])
    with pytest.raises(NoPermissibleTokenError):
        constrained_complete(model, CompletionRequest(prompt="q"), DecoderSession(automaton))


def test_constrained_plain_model_is_repaired(fixture_registry):
    automaton = compile_schema(fixture_registry)
    raw = '[{"tool":"who_am_i","arguments":[]}]'
    model = ScriptedModel({fingerprint("q"): raw})
    result = constrained_complete(model, CompletionRequest(prompt="q"), DecoderSession(automaton))
    assert result.mode == "repaired"
    assert result.text == '[{"tool_name":"who_am_i","arguments":[]}]'
    assert model.calls == 1


def test_call_accounting_is_exact():
    model = ScriptedModel({fingerprint("a"): "[]", fingerprint("b"): "[]"})
    model.complete(CompletionRequest(prompt="a"))
    model.complete(CompletionRequest(prompt="b"))
    model.complete(CompletionRequest(prompt="a"))
    assert model.calls == 3
