import json
import logging
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, strategies as st

from conftest import HASH_MATCHES, HGVS_CPOS_TRUE, sentinel_case
from hintfuzz.analysis import extract_related_code
from hintfuzz.llm.assist import AssistConfig, llm_assisted, llm_mutate
from hintfuzz.llm.backends import (
    BackendConfig,
    BackendConfigError,
    MissingTranscript,
    NonSuccessStatus,
    OracleBackend,
    RecordingBackend,
    RemoteChatBackend,
    ScriptedBackend,
    prompt_sha256,
    query_backend,
)
from hintfuzz.llm.feedback import FeedbackLedger, Outcome
from hintfuzz.llm.hints import ParseError, parse_hint, serialize_hint
from hintfuzz.llm.prompt import NO_ATTEMPTS, PLACEHOLDERS, SECTION_TITLES, build_prompt, parse_prompt, split_sections
from hintfuzz.model import MutationHint, ParamKind, Provenance, Target, TargetKind, parse_target_id

CPOS = parse_target_id(HGVS_CPOS_TRUE)


@pytest.fixture
def rc(hgvs):
    return extract_related_code(hgvs.program, CPOS)


# -- prompt -----------------------------------------------------------------


def test_first_prompt(rc):
    p = build_prompt(CPOS, rc, sentinel_case())
    assert [t for _, t, _ in split_sections(p.text)] == list(SECTION_TITLES)
    assert p.section("Feedback") == NO_ATTEMPTS
    context = p.section("Context")
    for name in PLACEHOLDERS:
        assert f"<<{name}>>" in context
    assert "cPos < 1" in context.split("<<LineCode>>")[1].split("<<DefUseChain>>")[0]
    assert '"hgvsc":"_EM_123_XYZ"' in context


def test_second_prompt_lists_previous_hint(rc):
    ledger = FeedbackLedger()
    h = MutationHint(0, ParamKind.BODY, ("hgvsc",), "c.5A>G")
    ledger.record(CPOS, h, Outcome.NOT_COVERED)
    p = build_prompt(CPOS, rc, sentinel_case(), ledger.slice(CPOS))
    fb = p.section("Feedback")
    assert serialize_hint(h) in fb and "NotCovered" in fb
    assert parse_prompt(p.text).feedback[0][0] == h


def test_prompt_rejects_foreign_related_code(rc, hashguard):
    with pytest.raises(ValueError):
        build_prompt(parse_target_id(HASH_MATCHES), rc, sentinel_case())


def test_prompt_is_deterministic(rc):
    assert build_prompt(CPOS, rc, sentinel_case()).text == build_prompt(CPOS, rc, sentinel_case()).text


# -- hints ------------------------------------------------------------------


def test_parse_plain_json():
    h = parse_hint('{"action": 0, "parameterType": "body", "field": "hgvsc", "newValue": "c.0A>G"}')
    assert h == MutationHint(0, ParamKind.BODY, ("hgvsc",), "c.0A>G")


def test_parse_prose_and_fence():
    text = 'The position must be below one.\n```json\n{"action":0,"parameterType":"query","field":"n","newValue":0}\n```\nDone.'
    assert parse_hint(text) == MutationHint(0, ParamKind.QUERY, ("n",), 0)


@pytest.mark.parametrize(
    "text, message",
    [('{"action":0}', "missing parameterType"),
     ("no json here", "no JSON object"),
     ('{"action":0,"parameterType":"cookie","field":"a","newValue":1}', "unknown parameterType"),
     ('{"action":true,"parameterType":"query","field":"a","newValue":1}', "action"),
     ('{"action":0,"parameterType":"query","field":"","newValue":1}', "empty")],
)
def test_parse_errors(text, message):
    with pytest.raises(ParseError, match=message):
        parse_hint(text)


hint_values = st.recursive(
    st.none() | st.booleans() | st.integers(-2**63, 2**63 - 1) | st.text(max_size=8)
    | st.floats(allow_nan=False, allow_infinity=False),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.text(max_size=4), inner, max_size=3),
    max_leaves=6,
)


@given(st.integers(0, 5), st.sampled_from(list(ParamKind)),
       st.lists(st.from_regex(r"[a-z]{1,5}", fullmatch=True), min_size=1, max_size=3), hint_values)
def test_parse_serialize_identity(action, kind, path, value):
    if kind is not ParamKind.BODY:
        path = path[:1]
    h = MutationHint(action, kind, tuple(path), value)
    assert parse_hint(serialize_hint(h)) == h


# -- feedback ledger --------------------------------------------------------


def test_ledger_order_cap_and_independence():
    ledger = FeedbackLedger()
    a = CPOS
    b = a.sibling()
    for i in range(10):
        ledger.record(a, MutationHint(0, ParamKind.QUERY, ("n",), i), Outcome.NOT_COVERED)
    ledger.record(b, None, Outcome.PARSE_ERROR, "x")
    got = [e.hint.new_value for e in ledger.slice(a)]
    assert got == [9, 8, 7, 6, 5]
    assert len(ledger.history(a)) == 10
    assert [e.outcome for e in ledger.slice(b)] == [Outcome.PARSE_ERROR]


# -- backends ---------------------------------------------------------------


def test_oracle_answers_hgvs(rc):
    text = query_backend(build_prompt(CPOS, rc, sentinel_case()), OracleBackend())
    h = parse_hint(text)
    assert (h.param_kind, h.field_path) == (ParamKind.BODY, ("hgvsc",))
    assert str(h.new_value).startswith("c.0")


def test_oracle_understands_cross_function_guard(hashguard):
    t = parse_target_id(HASH_MATCHES)
    rc = extract_related_code(hashguard.program, t)
    from hintfuzz.model import RestCallAction, TestCase, Verb

    tc = TestCase((RestCallAction(Verb.GET, "/keys", query_params={"key": "_EM_1_XYZ", "scope": "_EM_2_XYZ"}),))
    h = parse_hint(OracleBackend().complete(build_prompt(t, rc, tc).text))
    assert h.field_path == ("key",)
    assert len(h.new_value) == 32 and set(h.new_value) <= set("0123456789abcdef")


def test_scripted_backend(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text(json.dumps({"prompt_sha256": prompt_sha256("hello"), "response_text": "world"}) + "\n")
    b = ScriptedBackend(path)
    assert b.complete("hello") == "world"
    with pytest.raises(MissingTranscript):
        b.complete("other")
    path.write_text("not json\n")
    with pytest.raises(BackendConfigError):
        ScriptedBackend(path)
    with pytest.raises(BackendConfigError):
        ScriptedBackend(tmp_path / "missing.jsonl")


def test_recording_round_trip(tmp_path):
    class Echo(OracleBackend):
        def complete(self, prompt_text):
            return prompt_text.upper()

    path = tmp_path / "rec.jsonl"
    rec = RecordingBackend(Echo(), path)
    assert rec.complete("abc") == "ABC"
    rec.complete("abc")
    assert len(path.read_text().splitlines()) == 1
    assert ScriptedBackend(path).complete("abc") == "ABC"


def test_backend_config_validation():
    with pytest.raises(BackendConfigError):
        BackendConfig(mode="RemoteChat")
    with pytest.raises(BackendConfigError):
        BackendConfig.from_spec("bogus")
    assert BackendConfig.from_spec("scripted:/x").script_path == "/x"


class _Stub:
    """A chat-completions stand-in that answers from a queue of (status, body)."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                stub.requests.append((dict(self.headers), json.loads(body)))
                status, reply = stub.replies.pop(0) if stub.replies else (500, "")
                data = reply.encode()
                self.send_response(status)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/v1/chat/completions"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def _chat(text):
    return json.dumps({"choices": [{"message": {"role": "assistant", "content": text}}]})


@pytest.fixture
def stub():
    made = []

    def make(*replies):
        s = _Stub(replies)
        made.append(s)
        return s

    yield make
    for s in made:
        s.close()


def test_remote_returns_text_verbatim(stub, caplog):
    s = stub((200, _chat("  {\"a\": 1}\n prose ")))
    cfg = BackendConfig(mode="RemoteChat", endpoint_url=s.url, retry_delay=0)
    with caplog.at_level(logging.DEBUG):
        b = RemoteChatBackend(cfg, api_key="sk-secret-123")
        assert b.complete("prompt") == "  {\"a\": 1}\n prose "
        b.close()
    headers, payload = s.requests[0]
    assert headers["Authorization"] == "Bearer sk-secret-123"
    assert payload["messages"] == [{"role": "user", "content": "prompt"}]
    assert "sk-secret-123" not in caplog.text


def test_remote_retries_server_errors(stub):
    s = stub((503, "busy"), (200, _chat("ok")))
    b = RemoteChatBackend(BackendConfig(mode="RemoteChat", endpoint_url=s.url, retry_delay=0), api_key="")
    assert b.complete("p") == "ok"
    assert len(s.requests) == 2


def test_remote_does_not_retry_client_errors(stub):
    s = stub((401, "no"), (200, _chat("never")))
    b = RemoteChatBackend(BackendConfig(mode="RemoteChat", endpoint_url=s.url, retry_delay=0), api_key="")
    with pytest.raises(NonSuccessStatus) as e:
        b.complete("p")
    assert e.value.status == 401 and len(s.requests) == 1


# -- llm_mutate -------------------------------------------------------------


class Fixed(OracleBackend):
    def __init__(self, *answers):
        self.answers = list(answers)
        self.prompts = []

    def complete(self, prompt_text):
        self.prompts.append(prompt_text)
        return self.answers.pop(0)


def test_garbage_falls_back_to_random(hgvs, rc):
    ledger = FeedbackLedger()
    cfg = AssistConfig(Fixed("I cannot help with that."), random.Random(0))
    out = llm_assisted(sentinel_case(), hgvs.spec.endpoints, rc, cfg, ledger)
    assert out.fallback and out.test_case.provenance is Provenance.RANDOM_MUTATION
    assert ledger.slice(CPOS)[0].outcome is Outcome.PARSE_ERROR


def test_unusable_hint_is_an_apply_error(hgvs, rc):
    ledger = FeedbackLedger()
    bad = '{"action":0,"parameterType":"body","field":"hgvcs","newValue":"c.0A>G"}'
    tc = llm_mutate(sentinel_case(), hgvs.spec.endpoints, rc, AssistConfig(Fixed(bad), random.Random(0)), ledger)
    assert tc.provenance is Provenance.RANDOM_MUTATION
    entry = ledger.slice(CPOS)[0]
    assert entry.outcome is Outcome.APPLY_ERROR and "hgvsc" in entry.detail


def test_two_turns_share_feedback(hgvs, rc):
    first = '{"action":0,"parameterType":"body","field":"hgvsc","newValue":"c.5A>G"}'
    second = '{"action":0,"parameterType":"body","field":"hgvsc","newValue":"c.0A>G"}'
    backend = Fixed(first, second)
    ledger = FeedbackLedger()
    cfg = AssistConfig(backend, random.Random(0))
    t1 = llm_mutate(sentinel_case(), hgvs.spec.endpoints, rc, cfg, ledger)
    assert t1.actions[0].body == {"hgvsc": "c.5A>G"}
    ledger.record(CPOS, t1.hint, Outcome.NOT_COVERED)
    t2 = llm_mutate(sentinel_case(), hgvs.spec.endpoints, rc, cfg, ledger)
    assert t2.actions[0].body == {"hgvsc": "c.0A>G"}
    assert first.replace('"', "") not in backend.prompts[0]
    assert serialize_hint(t1.hint) in backend.prompts[1]


def test_backend_outage_falls_back(hgvs, rc):
    class Down(OracleBackend):
        def complete(self, prompt_text):
            raise NonSuccessStatus(503)

    ledger = FeedbackLedger()
    out = llm_assisted(sentinel_case(), hgvs.spec.endpoints, rc, AssistConfig(Down(), random.Random(0)), ledger)
    assert out.fallback and ledger.slice(CPOS)[0].outcome is Outcome.PARSE_ERROR
