"""Model backends: a remote chat-completions endpoint, replay, and the oracle."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

from .oracle import SolverOracle

log = logging.getLogger(__name__)

API_KEY_ENV = ("HINTFUZZ_API_KEY", "OPENAI_API_KEY")


class BackendMode(str, enum.Enum):
    REMOTE_CHAT = "RemoteChat"
    SOLVER_ORACLE = "SolverOracle"
    SCRIPTED = "Scripted"


class BackendError(RuntimeError):
    retryable = False


class BackendConfigError(BackendError):
    pass


class Timeout(BackendError):
    retryable = True


class TransportError(BackendError):
    retryable = True


class NonSuccessStatus(BackendError):
    retryable = True

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"backend answered HTTP {status}")
        self.status = status
        self.body = body
        # client errors other than throttling will not improve on retry
        self.retryable = status == 429 or status >= 500


class MissingTranscript(TransportError):
    retryable = False


@dataclass(frozen=True)
class BackendConfig:
    mode: BackendMode = BackendMode.SOLVER_ORACLE
    endpoint_url: str | None = None
    model: str = "gpt-4o"
    temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 2
    retry_delay: float = 0.5
    script_path: str | None = None
    record_path: str | None = None  # append every exchange here when set

    def __post_init__(self):
        object.__setattr__(self, "mode", BackendMode(self.mode))
        if self.timeout <= 0:
            raise BackendConfigError("timeout must be positive")
        if self.max_retries < 0:
            raise BackendConfigError("max_retries must be non-negative")
        if self.mode is BackendMode.REMOTE_CHAT and not self.endpoint_url:
            raise BackendConfigError("RemoteChat needs an endpoint URL")
        if self.mode is BackendMode.SCRIPTED and not self.script_path:
            raise BackendConfigError("Scripted needs a transcript path")

    @classmethod
    def from_spec(cls, spec: str, **kw) -> BackendConfig:
        """``solver``, ``scripted:<file>`` or ``remote:<url>``."""
        name, _, arg = spec.partition(":")
        if name == "solver":
            return cls(BackendMode.SOLVER_ORACLE, **kw)
        if name == "scripted" and arg:
            return cls(BackendMode.SCRIPTED, script_path=arg, **kw)
        if name == "remote" and arg:
            return cls(BackendMode.REMOTE_CHAT, endpoint_url=arg, **kw)
        raise BackendConfigError(f"unknown backend {spec!r}")


def prompt_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _text(prompt) -> str:
    return prompt if isinstance(prompt, str) else prompt.text


class Backend:
    def complete(self, prompt_text: str) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass


class OracleBackend(Backend):
    def __init__(self, oracle: SolverOracle | None = None):
        self.oracle = oracle or SolverOracle()

    def complete(self, prompt_text: str) -> str:
        return self.oracle.complete(prompt_text)


class ScriptedBackend(Backend):
    """Replays responses recorded as ``{prompt_sha256, response_text}`` lines."""

    def __init__(self, path):
        self.path = Path(path)
        self.responses: dict = {}
        try:
            lines = self.path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise BackendConfigError(f"cannot read transcript {path}: {e}") from e
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                self.responses.setdefault(rec["prompt_sha256"], rec["response_text"])
            except (ValueError, KeyError, TypeError) as e:
                raise BackendConfigError(f"{path}:{n}: bad transcript record ({e})") from e

    def complete(self, prompt_text: str) -> str:
        key = prompt_sha256(prompt_text)
        try:
            return self.responses[key]
        except KeyError:
            raise MissingTranscript(f"no recorded response for prompt {key[:12]}") from None


class RemoteChatBackend(Backend):
    def __init__(self, cfg: BackendConfig, api_key: str | None = None):
        self.cfg = cfg
        key = api_key if api_key is not None else next((os.environ[k] for k in API_KEY_ENV if os.environ.get(k)), None)
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = httpx.Client(timeout=cfg.timeout, headers=headers)

    def _once(self, prompt_text: str) -> str:
        payload = {
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt_text}],
        }
        try:
            r = self.client.post(self.cfg.endpoint_url, json=payload)
        except httpx.TimeoutException as e:
            raise Timeout(f"backend timed out: {e}") from e
        except httpx.HTTPError as e:
            raise TransportError(f"transport failure: {e}") from e
        if r.status_code // 100 != 2:
            raise NonSuccessStatus(r.status_code, r.text[:500])
        try:
            return r.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(f"unexpected response shape: {e}") from e

    def complete(self, prompt_text: str) -> str:
        attempt = 0
        while True:
            try:
                return self._once(prompt_text)
            except BackendError as e:
                if not e.retryable or attempt >= self.cfg.max_retries:
                    raise
                attempt += 1
                log.warning("backend call failed (%s); retry %d/%d", e, attempt, self.cfg.max_retries)
                time.sleep(self.cfg.retry_delay * attempt)

    def close(self) -> None:
        self.client.close()


class RecordingBackend(Backend):
    """Wraps a backend and appends each exchange in the replay format."""

    def __init__(self, inner: Backend, path):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._seen: set = set()

    def complete(self, prompt_text: str) -> str:
        text = self.inner.complete(prompt_text)
        key = prompt_sha256(prompt_text)
        if key not in self._seen:
            self._seen.add(key)
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps({"prompt_sha256": key, "response_text": text}, sort_keys=True) + "\n")
        return text

    def close(self) -> None:
        self.inner.close()


def make_backend(cfg: BackendConfig) -> Backend:
    if cfg.mode is BackendMode.SOLVER_ORACLE:
        backend: Backend = OracleBackend()
    elif cfg.mode is BackendMode.SCRIPTED:
        backend = ScriptedBackend(cfg.script_path)
    else:
        backend = RemoteChatBackend(cfg)
    if cfg.record_path:
        backend = RecordingBackend(backend, cfg.record_path)
    return backend


def query_backend(prompt, cfg_or_backend) -> str:
    """Send one prompt and return the response text."""
    if isinstance(cfg_or_backend, Backend):
        return cfg_or_backend.complete(_text(prompt))
    backend = make_backend(cfg_or_backend)
    try:
        return backend.complete(_text(prompt))
    finally:
        backend.close()
