import json
import sys
import threading
from pathlib import Path

import httpx
import pytest
from hypothesis import given, strategies as st

from pacreach.adapters import (
    AverageWordLength,
    External,
    FeedbackTemplate,
    HttpChatConfig,
    HttpChatSystem,
    ParityOfInteger,
    RegexNumber,
    StringLength,
    SubprocessConfig,
    SubprocessSystem,
    TemplateFeedback,
    apply_readout,
    chat_history,
    http_chat_step,
    is_tie,
    readout_from_dict,
    readout_to_dict,
    render_feedback,
    subprocess_step,
)
from pacreach.errors import BackendFailure, BackendTimeout, ConfigError, ReadoutError, TemplateError
from pacreach.systems import Constant, InputPolicy, rollout

ECHO = str(Path(__file__).resolve().parents[1] / "scripts" / "echo_backend.py")


# -- readouts -------------------------------------------------------------


def test_string_length():
    assert apply_readout(StringLength(), "Hello") == (5,)
    assert apply_readout(StringLength(), "") == (0,)


def test_average_word_length():
    assert apply_readout(AverageWordLength(), "The pig jumped above her.") == (4.0,)
    assert apply_readout(AverageWordLength(), "a bb ccc") == (2.0,)
    assert apply_readout(AverageWordLength(strip_punctuation=False), "a bb ccc") == (2.0,)
    assert apply_readout(AverageWordLength(strip_punctuation=False), "The pig jumped above her.") == (4.2,)
    with pytest.raises(ReadoutError):
        apply_readout(AverageWordLength(), "  ... !! ")


def test_parity():
    p = ParityOfInteger()
    assert p("31") == "odd" and p(" 42\n") == "even" and p("-7") == "odd"
    assert p("thirty-one") == "error" and p("3.5") == "error" and p("") == "error"


def test_regex_number():
    r = RegexNumber(r"formality: ([-+0-9.eE]+)", scale=0.01)
    assert r("formality: 73") == pytest.approx((0.73,))
    assert RegexNumber(r"\d+")("abc 12 def") == (12.0,)
    with pytest.raises(ReadoutError):
        r("nothing here")
    with pytest.raises(ReadoutError):
        RegexNumber(r"(x+)")("xx")


def test_external_readout():
    num = External((sys.executable, "-c", "import sys; print(len(sys.stdin.read()))"))
    assert num("hello") == (5.0,)
    label = External((sys.executable, "-c", "print('formal')"))
    assert label("x") == "formal"
    bad = External((sys.executable, "-c", "import sys; sys.exit(4)"))
    with pytest.raises(ReadoutError):
        bad("x")


def test_readout_dict_roundtrip():
    for r in (StringLength(), AverageWordLength(False), ParityOfInteger(), RegexNumber("(\\d+)", 2.0), External(("cat",))):
        assert readout_from_dict(readout_to_dict(r)) == r


@given(st.text(max_size=200))
def test_readouts_are_total_and_pure(text):
    assert apply_readout(StringLength(), text) == apply_readout(StringLength(), text)
    assert apply_readout(StringLength(), text)[0] >= 0
    assert ParityOfInteger()(text) in ("even", "odd", "error")


# -- feedback templates -----------------------------------------------------


def test_formality_feedback():
    msg = render_feedback("formality", 0.5, (0.8,))
    assert "too formal" in msg and "0.50" in msg and "0.80" in msg
    assert "too informal" in render_feedback("formality", 0.5, 0.2)
    assert "50.00" in render_feedback("formality", 0.5, 0.2, scale=100)


def test_integer_feedback():
    msg = render_feedback("num_chars", 7, 9)
    assert "too long" in msg and " 7 " in msg and " 9 " in msg
    assert msg.index("7") < msg.index("9")
    assert "too short" in render_feedback("num_chars", 7, 3)


def test_tie_uses_higher_branch():
    assert "too formal" in render_feedback("formality", 0.5, 0.5)
    assert is_tie(0.5, (0.5,)) and not is_tie(0.5, 0.6)


def test_template_errors():
    with pytest.raises(TemplateError):
        FeedbackTemplate("too {comparative}: asked {requested}", "high", "low")
    with pytest.raises(TemplateError):
        render_feedback("no-such-template", 1, 2)
    custom = FeedbackTemplate("{comparative}|{requested}|{produced}", "up", "down")
    assert render_feedback(custom, 1.0, 2.0) == "up|1.00|2.00"
    assert TemplateFeedback("parity")("even", "odd", 1).startswith("Your answer was wrong")


# -- history ----------------------------------------------------------------


def test_chat_history_alternates():
    h = chat_history(["Hello! ", "r1", "r2"], [3, "fb1", "fb2"], "Write {} words.")
    assert [m["role"] for m in h] == ["user", "assistant", "user", "assistant", "user"]
    assert h[0]["text"] == "Hello! Write 3 words." and h[1]["text"] == "r1" and h[-1]["text"] == "fb2"


# -- subprocess backend -----------------------------------------------------


def test_echo_child_returns_last_input():
    cfg = SubprocessConfig((sys.executable, ECHO))
    with SubprocessSystem(cfg, StringLength()) as sysm:
        assert subprocess_step(sysm, ["x0"], ["hello"]) == "x0hello"
        tr = rollout(sysm, "", InputPolicy(Constant("abc"), lambda u0, y, t: "de" * t), 3, seed=1)
        assert tr.states == ["abc", "de", "dede"]
        assert tr.measurements == [(3,), (2,), (4,)]


def test_malformed_line_fails():
    cfg = SubprocessConfig((sys.executable, ECHO, "--malformed"))
    with SubprocessSystem(cfg, StringLength()) as sysm:
        with pytest.raises(BackendFailure, match="malformed"):
            subprocess_step(sysm, [""], ["hi"])


def test_error_response_fails():
    cfg = SubprocessConfig((sys.executable, ECHO, "--error", "overloaded"))
    with SubprocessSystem(cfg, StringLength()) as sysm:
        with pytest.raises(BackendFailure, match="overloaded"):
            subprocess_step(sysm, [""], ["hi"])


def test_child_exit_restarts_once_then_fails():
    # the child dies before answering its first request, every time
    cfg = SubprocessConfig((sys.executable, ECHO, "--exit-after", "0"), retries=1)
    with SubprocessSystem(cfg, StringLength()) as sysm:
        with pytest.raises(BackendFailure) as ei:
            subprocess_step(sysm, [""], ["hi"])
        assert sysm.restarts == 1
        assert "giving up" in ei.value.stderr_tail


def test_child_exit_recovered_by_restart():
    cfg = SubprocessConfig((sys.executable, ECHO, "--exit-after", "1"), retries=1)
    with SubprocessSystem(cfg, StringLength()) as sysm:
        assert subprocess_step(sysm, [""], ["a"]) == "a"
        assert subprocess_step(sysm, [""], ["b"]) == "b"
        assert sysm.restarts == 1


def test_subprocess_timeout():
    cfg = SubprocessConfig((sys.executable, "-c", "import time; time.sleep(30)"), timeout=0.3)
    with SubprocessSystem(cfg, StringLength()) as sysm:
        with pytest.raises(BackendTimeout):
            subprocess_step(sysm, [""], ["a"])


def test_subprocess_config_validation():
    with pytest.raises(ConfigError):
        SubprocessConfig(())
    with pytest.raises(ConfigError):
        SubprocessConfig(("x",), timeout=0)
    with pytest.raises(ConfigError):
        SubprocessConfig(("x",), retries=-1)


def test_subprocess_pool_parallel():
    from pacreach.estimators import estimate_reachable
    from pacreach.planner import ReachPlan
    from pacreach.space import BoxSpace

    cfg = SubprocessConfig((sys.executable, ECHO))
    space = BoxSpace((0,), (10,), 1.0)
    plan = ReachPlan.auto(10, 0.2, 0.05)
    pol = InputPolicy(Constant("abcd"))
    with SubprocessSystem(cfg, StringLength(), pool=4) as sysm:
        par = estimate_reachable(sysm, "", pol, space, plan, 2, 3, parallelism=4)
    with SubprocessSystem(cfg, StringLength()) as sysm:
        ser = estimate_reachable(sysm, "", pol, space, plan, 2, 3)
    assert par.samples == ser.samples == [[(4,)] * plan.m] * 2


# -- HTTP backend -----------------------------------------------------------


class Recorder:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []
        self.lock = threading.Lock()

    def __call__(self, request: httpx.Request):
        with self.lock:
            self.requests.append(request)
            status, body = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(body, dict):
            return httpx.Response(status, json=body)
        return httpx.Response(status, text=body)


def ok(text):
    return 200, {"choices": [{"message": {"role": "assistant", "content": text}}]}


def make_http(recorder, sleeps=None, **kw):
    cfg = HttpChatConfig(endpoint="http://stub.local/v1/chat/completions", model="m", **kw)
    return HttpChatSystem(
        cfg, StringLength(), transport=httpx.MockTransport(recorder), sleep=(sleeps.append if sleeps is not None else lambda s: None)
    )


def test_http_stub_returns_text_and_sends_history(monkeypatch):
    monkeypatch.setenv("STUB_TOKEN", "sekrit")
    rec = Recorder([ok("fixed reply")])
    sysm = make_http(rec, token_env="STUB_TOKEN")
    tr = rollout(sysm, "Hi. ", InputPolicy(Constant("req"), lambda u0, y, t: f"fb{t}"), 3, seed=0)
    assert tr.states == ["fixed reply"] * 3
    assert tr.measurements == [(11,)] * 3
    for t, req in enumerate(rec.requests):
        body = json.loads(req.content)
        roles = [m["role"] for m in body["messages"]]
        assert roles.count("user") == t + 1 and roles.count("assistant") == t
        assert body["messages"][0]["content"] == "Hi. req"
        assert req.headers["authorization"] == "Bearer sekrit"
        assert body["temperature"] == 0.7 and body["top_p"] == 0.9 and body["top_k"] == 50 and body["max_tokens"] == 100


def test_http_deterministic_sends_temperature_zero():
    rec = Recorder([ok("x")])
    sysm = make_http(rec, deterministic=True)
    http_chat_step(sysm, [""], ["q"])
    assert json.loads(rec.requests[0].content)["temperature"] == 0.0
    assert "authorization" not in rec.requests[0].headers


def test_http_429_retries_with_backoff_then_fails():
    rec = Recorder([(429, "slow down")])
    sleeps = []
    sysm = make_http(rec, sleeps, retries=2, backoff=0.5)
    with pytest.raises(BackendFailure) as ei:
        http_chat_step(sysm, [""], ["q"])
    assert ei.value.status == 429
    assert len(rec.requests) == 3
    assert sleeps == [0.5, 1.0]


def test_http_recovers_after_5xx():
    rec = Recorder([(503, "busy"), ok("fine")])
    sleeps = []
    sysm = make_http(rec, sleeps, retries=2)
    assert http_chat_step(sysm, [""], ["q"]) == "fine"
    assert sleeps == [1.0]


def test_http_client_error_not_retried():
    rec = Recorder([(400, "bad request")])
    sysm = make_http(rec, retries=3)
    with pytest.raises(BackendFailure, match="400"):
        http_chat_step(sysm, [""], ["q"])
    assert len(rec.requests) == 1


def test_http_malformed_body():
    rec = Recorder([(200, {"unexpected": True})])
    with pytest.raises(BackendFailure, match="unexpected response"):
        http_chat_step(make_http(rec), [""], ["q"])


def test_http_timeout():
    def boom(request):
        raise httpx.ReadTimeout("too slow", request=request)

    cfg = HttpChatConfig(endpoint="http://stub.local/", model="m", retries=1)
    sysm = HttpChatSystem(cfg, StringLength(), transport=httpx.MockTransport(boom), sleep=lambda s: None)
    with pytest.raises(BackendTimeout):
        http_chat_step(sysm, [""], ["q"])


def test_http_missing_token_is_config_error(monkeypatch):
    monkeypatch.delenv("NOPE_TOKEN", raising=False)
    rec = Recorder([ok("x")])
    with pytest.raises(ConfigError, match="NOPE_TOKEN"):
        make_http(rec, token_env="NOPE_TOKEN")
    assert rec.requests == []


def test_http_config_validation():
    with pytest.raises(ConfigError):
        HttpChatConfig(endpoint="e", model="m", timeout=0)
    with pytest.raises(ConfigError):
        HttpChatConfig(endpoint="e", model="m", retries=-1)
