"""External model backends, text readouts and feedback templates.

Backends turn a dialogue history into the next generation.  Two transports
are provided: a child process speaking line-delimited JSON, and an
OpenAI-style chat endpoint over HTTP.  Readouts map a generation string to
a measurement; feedback templates turn (requested, produced) values back
into the next user message.
"""

from __future__ import annotations

import json
import math
import os
import queue
import re
import select
import subprocess
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional

import httpx

from .errors import BackendFailure, BackendTimeout, ConfigError, InvalidSpec, ReadoutError, TemplateError
from .space import ERROR_LABEL

# ---------------------------------------------------------------------------
# readouts


_INT_RE = re.compile(r"[+-]?\d+")
_WORD_STRIP = re.compile(r"[^\w]", re.UNICODE)


@dataclass(frozen=True)
class StringLength:
    kind = "string_length"

    def __call__(self, text: str):
        return (len(text),)


@dataclass(frozen=True)
class AverageWordLength:
    """Mean letters per whitespace-separated word.

    With ``strip_punctuation`` (the default) characters that are neither
    letters nor digits do not count, so "her." has length 3.
    """

    strip_punctuation: bool = True

    kind = "average_word_length"

    def __call__(self, text: str):
        words = text.split()
        if self.strip_punctuation:
            words = [w for w in (_WORD_STRIP.sub("", w).replace("_", "") for w in words) if w]
        if not words:
            raise ReadoutError(f"no words in {text[:40]!r}")
        return (sum(len(w) for w in words) / len(words),)


@dataclass(frozen=True)
class ParityOfInteger:
    kind = "parity"
    labels = ("even", "odd", ERROR_LABEL)

    def __call__(self, text: str):
        s = text.strip()
        if not _INT_RE.fullmatch(s):
            return ERROR_LABEL
        return "even" if int(s) % 2 == 0 else "odd"


@dataclass(frozen=True)
class RegexNumber:
    """First capture group (or whole match) of ``pattern``, as a real times ``scale``."""

    pattern: str
    scale: float = 1.0

    kind = "regex_number"

    def __post_init__(self):
        try:
            re.compile(self.pattern)
        except re.error as exc:
            raise InvalidSpec(f"bad readout pattern {self.pattern!r}: {exc}") from None

    def __call__(self, text: str):
        m = re.search(self.pattern, text)
        if m is None:
            raise ReadoutError(f"pattern {self.pattern!r} not found in {text[:40]!r}")
        raw = m.group(1) if m.groups() else m.group(0)
        try:
            v = float(raw)
        except (TypeError, ValueError):
            raise ReadoutError(f"cannot parse {raw!r} as a number") from None
        if not math.isfinite(v):
            raise ReadoutError(f"non-finite measurement {raw!r}")
        return (v * self.scale,)


@dataclass(frozen=True)
class External:
    """Readout computed by a command: state text on stdin, measurement on stdout.

    A numeric stdout becomes a 1-d point, anything else a label.
    """

    command: tuple
    timeout: float = 30.0

    kind = "external"

    def __call__(self, text: str):
        try:
            res = subprocess.run(
                list(self.command), input=text.encode(), capture_output=True, timeout=self.timeout, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ReadoutError(f"external readout failed: {exc}") from None
        if res.returncode != 0:
            raise ReadoutError(
                f"external readout exited {res.returncode}: {res.stderr.decode(errors='replace')[-200:]}"
            )
        out = res.stdout.decode().strip()
        try:
            return (float(out),)
        except ValueError:
            return out


Readout = Any


def apply_readout(spec, text: str):
    return spec(text)


def readout_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "string_length":
        return StringLength()
    if kind == "average_word_length":
        return AverageWordLength(bool(d.get("strip_punctuation", True)))
    if kind == "parity":
        return ParityOfInteger()
    if kind == "regex_number":
        return RegexNumber(d["pattern"], float(d.get("scale", 1.0)))
    if kind == "external":
        cmd = d["command"]
        return External(tuple(cmd if isinstance(cmd, list) else [cmd]), float(d.get("timeout", 30.0)))
    raise InvalidSpec(f"unknown readout kind {kind!r}")


def readout_to_dict(r) -> dict:
    d = asdict(r)
    d["kind"] = r.kind
    if "command" in d:
        d["command"] = list(d["command"])
    return d


# ---------------------------------------------------------------------------
# feedback templates

REQUESTED = "{requested}"
PRODUCED = "{produced}"
COMPARATIVE = "{comparative}"


@dataclass(frozen=True)
class FeedbackTemplate:
    """``text`` with placeholders {comparative}, {requested}, {produced}.

    ``higher`` is used when the produced value exceeds the request (and on
    exact ties), ``lower`` otherwise.  For label-valued tasks ``higher``
    means "wrong" and ``lower`` is unused.
    """

    text: str
    higher: str
    lower: str
    integer: bool = False

    def __post_init__(self):
        missing = [p for p in (REQUESTED, PRODUCED, COMPARATIVE) if p not in self.text]
        if missing:
            raise TemplateError(f"template is missing placeholders {missing}: {self.text!r}")


TEMPLATES = {
    "formality": FeedbackTemplate(
        "Your answer was too {comparative}. I asked for a story of formality {requested}, "
        "and you produced a story of formality {produced}. Please try again.",
        "formal",
        "informal",
    ),
    "num_chars": FeedbackTemplate(
        "Your answer was too {comparative}. I asked for a string of {requested} characters, "
        "and you produced a string of {produced} characters. Please try again.",
        "long",
        "short",
        integer=True,
    ),
    "word_length": FeedbackTemplate(
        "Your answer was too {comparative}. I asked for an average word length of {requested} letters, "
        "and you produced an average word length of {produced} letters. Please try again.",
        "long",
        "short",
    ),
    "parity": FeedbackTemplate(
        "Your answer was {comparative}. I asked for a strictly positive {requested} integer, "
        "and you produced {produced}. Please answer with the integer only.",
        "wrong",
        "wrong",
    ),
}


def _fmt(v, integer: bool, scale: float) -> str:
    if isinstance(v, str):
        return v
    v = float(v) * scale
    if integer and v == int(v):
        return str(int(v))
    return f"{v:.2f}"


def _scalar(y):
    if isinstance(y, (tuple, list)):
        if len(y) != 1:
            raise TemplateError(f"feedback needs a scalar measurement, got {y!r}")
        return y[0]
    return y


def is_tie(u0, y) -> bool:
    y = _scalar(y)
    if isinstance(u0, str) or isinstance(y, str):
        return u0 == y
    return float(u0) == float(y)


def render_feedback(template, u0, y_prev, scale: float = 1.0) -> str:
    """Fill a feedback template from the request ``u0`` and the last measurement.

    ``template`` is a built-in id or a :class:`FeedbackTemplate`.  On an exact
    tie the ``higher`` branch is used; callers can detect ties with
    :func:`is_tie`.
    """
    if isinstance(template, str):
        if template not in TEMPLATES:
            raise TemplateError(f"unknown feedback template {template!r}; known: {sorted(TEMPLATES)}")
        template = TEMPLATES[template]
    y = _scalar(y_prev)
    if isinstance(u0, str) or isinstance(y, str):
        word = template.lower if u0 == y and template.lower != template.higher else template.higher
    else:
        word = template.higher if float(y) >= float(u0) else template.lower
    return (
        template.text.replace(COMPARATIVE, word)
        .replace(REQUESTED, _fmt(u0, template.integer, scale))
        .replace(PRODUCED, _fmt(y, template.integer, scale))
    )


@dataclass(frozen=True)
class TemplateFeedback:
    """Feedback rule for :class:`InputPolicy` built from a template."""

    template: Any
    scale: float = 1.0

    def __call__(self, u0, last_y, t):
        return render_feedback(self.template, u0, last_y, self.scale)


# ---------------------------------------------------------------------------
# dialogue history


def chat_history(states, inputs, request_template: Optional[str] = None) -> list:
    """Alternating user/assistant turns for the step producing x_t.

    ``states`` is x_0..x_{t-1} and ``inputs`` u_0..u_{t-1}.  A string x_0 is
    prefixed to the first user message; a numeric u_0 is rendered through
    ``request_template`` when given.
    """
    msgs = []
    for i, u in enumerate(inputs):
        text = u
        if i == 0 and request_template is not None and not isinstance(u, str):
            text = request_template.format(u)
        text = str(text)
        if i == 0 and isinstance(states[0], str):
            text = states[0] + text
        msgs.append({"role": "user", "text": text})
        if i + 1 < len(states):
            msgs.append({"role": "assistant", "text": str(states[i + 1])})
    return msgs


class _BackendBase:
    """Shared readout handling for text backends."""

    thread_safe = True

    def __init__(self, readout, deterministic: bool, request_template: Optional[str]):
        self.readout_spec = readout
        self.deterministic = deterministic
        self.request_template = request_template

    def readout(self, state):
        return apply_readout(self.readout_spec, state)

    def history(self, states, inputs):
        return chat_history(states, inputs, self.request_template)


# ---------------------------------------------------------------------------
# subprocess backend


@dataclass(frozen=True)
class SubprocessConfig:
    command: tuple
    cwd: Optional[str] = None
    timeout: float = 60.0
    retries: int = 0
    deterministic: bool = False
    request_template: Optional[str] = None

    def __post_init__(self):
        if not self.command:
            raise ConfigError("backend.command: must be a non-empty list")
        if not self.timeout > 0:
            raise ConfigError(f"backend.timeout: must be > 0, got {self.timeout}")
        if self.retries < 0:
            raise ConfigError(f"backend.retries: must be >= 0, got {self.retries}")


class _Child:
    def __init__(self, config: SubprocessConfig):
        self.config = config
        self.stderr = tempfile.TemporaryFile()
        self.proc = None
        self.start()

    def start(self):
        try:
            self.proc = subprocess.Popen(
                list(self.config.command),
                cwd=self.config.cwd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=self.stderr,
            )
        except OSError as exc:
            raise BackendFailure(f"cannot start backend {self.config.command!r}: {exc}") from None

    def stderr_tail(self, n: int = 2000) -> str:
        self.stderr.flush()
        self.stderr.seek(0, os.SEEK_END)
        size = self.stderr.tell()
        self.stderr.seek(max(0, size - n))
        return self.stderr.read().decode(errors="replace")

    def exchange(self, line: bytes) -> Optional[bytes]:
        """Send one request line; return the response line, or None on EOF."""
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            return None
        ready, _, _ = select.select([self.proc.stdout], [], [], self.config.timeout)
        if not ready:
            self.kill()
            raise BackendTimeout(
                f"backend did not answer within {self.config.timeout}s", stderr_tail=self.stderr_tail()
            )
        out = self.proc.stdout.readline()
        return out or None

    def kill(self):
        if self.proc and self.proc.poll() is None:
            self.proc.kill()
        if self.proc:
            self.proc.wait()

    def close(self):
        if self.proc and self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self.kill()
        self.stderr.close()


class SubprocessSystem(_BackendBase):
    """Backend speaking line-delimited JSON with a child process.

    Request: ``{"history": [{"role", "text"}, ...], "turn": t}``.
    Response: ``{"text": ...}`` or ``{"error": ...}``.  ``pool`` children
    serve concurrent rollouts; each child handles one request at a time.
    """

    def __init__(self, config: SubprocessConfig, readout, pool: int = 1):
        super().__init__(readout, config.deterministic, config.request_template)
        self.config = config
        self.restarts = 0
        self._idle = queue.Queue()
        self._children = []
        for _ in range(max(1, pool)):
            c = _Child(config)
            self._children.append(c)
            self._idle.put(c)

    def step(self, states, inputs, rng):
        req = {"history": self.history(states, inputs), "turn": len(states)}
        line = (json.dumps(req, ensure_ascii=False) + "\n").encode("utf-8")
        child = self._idle.get()
        try:
            return self._ask(child, line)
        finally:
            self._idle.put(child)

    def _ask(self, child: _Child, line: bytes) -> str:
        budget = self.config.retries
        while True:
            out = child.exchange(line)
            if out is not None:
                break
            if budget <= 0:
                tail = child.stderr_tail()
                child.kill()
                child.start()
                raise BackendFailure("backend exited without answering", stderr_tail=tail)
            budget -= 1
            self.restarts += 1
            child.kill()
            child.start()
        try:
            msg = json.loads(out.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise BackendFailure(f"malformed response line {out[:200]!r}", stderr_tail=child.stderr_tail()) from None
        if isinstance(msg, dict) and isinstance(msg.get("text"), str):
            return msg["text"]
        if isinstance(msg, dict) and "error" in msg:
            raise BackendFailure(f"backend error: {msg['error']}", stderr_tail=child.stderr_tail())
        raise BackendFailure(f"response has no text field: {out[:200]!r}", stderr_tail=child.stderr_tail())

    def close(self):
        for c in self._children:
            c.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def subprocess_step(system: SubprocessSystem, states, inputs) -> str:
    return system.step(states, inputs, None)


# ---------------------------------------------------------------------------
# HTTP chat backend

RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class HttpChatConfig:
    endpoint: str
    model: str
    token_env: Optional[str] = None
    timeout: float = 60.0
    retries: int = 2
    temperature: float = 0.7
    top_p: float = 0.9
    top_k: Optional[int] = 50
    max_tokens: int = 100
    deterministic: bool = False
    max_in_flight: int = 8
    backoff: float = 1.0
    system_prompt: Optional[str] = None
    request_template: Optional[str] = None

    def __post_init__(self):
        if not self.timeout > 0:
            raise ConfigError(f"backend.timeout: must be > 0, got {self.timeout}")
        if self.retries < 0:
            raise ConfigError(f"backend.retries: must be >= 0, got {self.retries}")
        if self.max_in_flight < 1:
            raise ConfigError("backend.max_in_flight: must be >= 1")


class HttpChatSystem(_BackendBase):
    """Chat-completions backend; the full history is sent on every turn."""

    def __init__(
        self,
        config: HttpChatConfig,
        readout,
        *,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(readout, config.deterministic, config.request_template)
        self.config = config
        self._token = None
        if config.token_env:
            self._token = os.environ.get(config.token_env)
            if not self._token:
                raise ConfigError(f"backend.token_env: environment variable {config.token_env} is not set")
        self._sleep = sleep
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._client = httpx.Client(timeout=config.timeout, transport=transport)

    def body(self, states, inputs) -> dict:
        c = self.config
        msgs = []
        if c.system_prompt:
            msgs.append({"role": "system", "content": c.system_prompt})
        msgs += [{"role": m["role"], "content": m["text"]} for m in self.history(states, inputs)]
        body = {
            "model": c.model,
            "messages": msgs,
            "temperature": 0.0 if c.deterministic else c.temperature,
            "top_p": c.top_p,
            "max_tokens": c.max_tokens,
        }
        if c.top_k is not None:
            body["top_k"] = c.top_k
        return body

    def step(self, states, inputs, rng):
        body = self.body(states, inputs)
        headers = {"Authorization": "Bearer " + self._token} if self._token else {}
        with self._gate:
            return self._post(body, headers)

    def _post(self, body, headers) -> str:
        c = self.config
        for attempt in range(c.retries + 1):
            last = attempt == c.retries
            try:
                resp = self._client.post(c.endpoint, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                if last:
                    raise BackendTimeout(f"request timed out after {c.retries + 1} attempts: {exc}") from None
            except httpx.HTTPError as exc:
                if last:
                    raise BackendFailure(f"transport error: {exc}") from None
            else:
                if resp.status_code == 200:
                    return self._parse(resp)
                if resp.status_code not in RETRY_STATUSES or last:
                    raise BackendFailure(
                        f"HTTP {resp.status_code}: {resp.text[:200]}", status=resp.status_code
                    )
            self._sleep(c.backoff * 2**attempt)
        raise AssertionError("unreachable")

    @staticmethod
    def _parse(resp) -> str:
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise BackendFailure(f"unexpected response body: {resp.text[:200]}", status=resp.status_code) from None
        if not isinstance(content, str):
            raise BackendFailure("response content is not a string", status=resp.status_code)
        return content

    def close(self):
        self._client.close()


def http_chat_step(system: HttpChatSystem, states, inputs) -> str:
    return system.step(states, inputs, None)


def backend_from_dict(d: dict, readout, parallelism: int = 1, transport=None):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "subprocess":
        cmd = d.pop("command", None)
        if isinstance(cmd, str):
            cmd = [cmd]
        args = d.pop("args", [])
        try:
            cfg = SubprocessConfig(tuple((cmd or []) + list(args)), **d)
        except TypeError as exc:
            raise ConfigError(f"backend: {exc}") from None
        return SubprocessSystem(cfg, readout, pool=parallelism)
    if kind == "http":
        try:
            cfg = HttpChatConfig(**d)
        except TypeError as exc:
            raise ConfigError(f"backend: {exc}") from None
        return HttpChatSystem(cfg, readout, transport=transport)
    raise ConfigError(f"backend.kind: unknown backend {kind!r}")
