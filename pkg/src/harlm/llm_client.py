"""Language-model backends: an HTTP chat-completion client and an offline mock.

Wire format (HTTP_CHAT)::

    POST <endpoint_url>
    Authorization: Bearer $HAR_LLM_API_KEY
    {"model": ..., "temperature": ..., "messages": [{"role": "system", ...},
                                                    {"role": "user", ...}]}

The reply's ``choices[0].message.content`` is the completion text.

MOCK_CENTROID never touches the network: it reads the ``<channel> <stat>:
<value>`` lines back out of the prompt and answers with the nearest class
centroid (z-scaled Euclidean distance).
"""
from __future__ import annotations

import enum
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import httpx
import numpy as np

from harlm.dataset import LabeledDataset
from harlm.features import STAT_NAMES, FeatureVector
from harlm.io import fingerprint
from harlm.prompting import STAT_LABELS, PromptTemplate, estimate_tokens, load_template, render_prompt

DEFAULT_API_KEY_ENV = "HAR_LLM_API_KEY"


class BackendKind(str, enum.Enum):
    HTTP_CHAT = "HTTP_CHAT"
    MOCK_CENTROID = "MOCK_CENTROID"


class LlmError(RuntimeError):
    pass


class LlmTransportError(LlmError):
    pass


class LlmTimeoutError(LlmTransportError):
    pass


class LlmProtocolError(LlmError):
    def __init__(self, msg: str, status: int | None = None):
        super().__init__(msg)
        self.status = status


class UnparseableResponseError(LlmError):
    def __init__(self, raw_text: str):
        super().__init__(f"no activity label found in response: {raw_text[:200]!r}")
        self.raw_text = raw_text


# --------------------------------------------------------------------------
# nearest-centroid mock
# --------------------------------------------------------------------------

_FEATURE_LINE = re.compile(r"^\s*([amg][xyz]) ([a-z_]+):\s*(-?\d+(?:\.\d+)?)\s*$", re.MULTILINE)
_LABEL_TO_STAT = {v: k for k, v in STAT_LABELS.items()}


@dataclass(frozen=True)
class CentroidModel:
    feature_names: tuple[str, ...]
    labels: tuple[str, ...]
    centroids: np.ndarray  # (K, D)
    scale: np.ndarray  # (D,)

    @classmethod
    def fit(cls, data: LabeledDataset) -> "CentroidModel":
        present = [lab for lab in data.label_vocabulary if (data.labels == lab).any()]
        cents = np.stack([data.features[data.labels == lab].mean(axis=0) for lab in present])
        sd = data.features.std(axis=0)
        return cls(
            feature_names=tuple(data.feature_names),
            labels=tuple(present),
            centroids=cents,
            scale=np.where(sd > 0, sd, 1.0),
        )

    def nearest(self, x: np.ndarray) -> str:
        d = (((x - self.centroids) / self.scale) ** 2).sum(axis=1)
        return self.labels[int(np.argmin(d))]

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "labels": list(self.labels),
            "centroids": self.centroids.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CentroidModel":
        return cls(
            feature_names=tuple(d["feature_names"]),
            labels=tuple(d["labels"]),
            centroids=np.asarray(d["centroids"], dtype=np.float64),
            scale=np.asarray(d["scale"], dtype=np.float64),
        )


def parse_feature_lines(text: str) -> dict[str, float]:
    """``{"<channel>_<stat>": value}`` for every serialized feature line in ``text``."""
    out = {}
    for ch, stat, val in _FEATURE_LINE.findall(text):
        name = _LABEL_TO_STAT.get(stat)
        if name is not None:
            out[f"{ch}_{name}"] = float(val)
    return out


def _mock_reply(model: CentroidModel, user: str) -> str:
    feats = parse_feature_lines(user)
    if "Question:" in user:
        stds = {k[:2]: v for k, v in feats.items() if k.endswith("_std")}
        if not stds:
            return "There are no sensor statistics to reason about."
        ch = max(stds, key=lambda k: (stds[k], -list(stds).index(k)))
        return (f"The {ch} channel is the most active one in this window "
                f"(std {stds[ch]:.3f}); the other channels move less.")
    if not all(n in feats for n in model.feature_names):
        return "I cannot tell which activity this is."
    x = np.array([feats[n] for n in model.feature_names])
    return f"Activity: {model.nearest(x)}"


# --------------------------------------------------------------------------
# config and client
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    endpoint_url: str = ""
    model_name: str = ""
    api_key_env_var: str = DEFAULT_API_KEY_ENV
    timeout: float = 30.0
    max_retries: int = 3
    temperature: float = 0.0
    backoff_base: float = 0.5
    requests_per_second: float | None = None
    centroids: CentroidModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.kind is BackendKind.HTTP_CHAT and not self.endpoint_url:
            raise ValueError("HTTP_CHAT backend requires endpoint_url")
        if self.kind is BackendKind.MOCK_CENTROID and self.centroids is None:
            raise ValueError("MOCK_CENTROID backend requires fitted centroids")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "kind": self.kind.value,
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "api_key_env_var": self.api_key_env_var,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "temperature": self.temperature,
            "backoff_base": self.backoff_base,
            "requests_per_second": self.requests_per_second,
        }
        if self.centroids is not None:
            d["centroids"] = self.centroids.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackendConfig":
        d = dict(d)
        if d.get("centroids") is not None:
            d["centroids"] = CentroidModel.from_dict(d["centroids"])
        return cls(**d)

    def fingerprint(self) -> str:
        # key values never enter the config, only the variable name
        return fingerprint(self.to_dict())


class _RateLimiter:
    """Process-wide minimum spacing between outgoing requests."""

    def __init__(self):
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self, rps: float | None, sleep: Callable[[float], None]) -> None:
        if not rps:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next - now
            self._next = max(now, self._next) + 1.0 / rps
        if delay > 0:
            sleep(delay)


RATE_LIMITER = _RateLimiter()


@dataclass(frozen=True)
class Completion:
    text: str
    attempts: int
    latency: float


class LlmClient:
    """Backend client; immutable after construction and safe to share across threads."""

    def __init__(
        self,
        config: BackendConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._transport = transport
        self._sleep = sleep

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env_var)
        if not key:
            raise LlmError(f"API key variable {self.config.api_key_env_var} is not set")
        return key

    def complete_ex(self, system: str, user: str) -> Completion:
        t0 = time.perf_counter()
        if self.config.kind is BackendKind.MOCK_CENTROID:
            text = _mock_reply(self.config.centroids, user)
            return Completion(text, 1, time.perf_counter() - t0)
        return self._http(system, user, t0)

    def complete(self, system: str, user: str) -> str:
        return self.complete_ex(system, user).text

    def _http(self, system: str, user: str, t0: float) -> Completion:
        cfg = self.config
        headers = {"Authorization": f"Bearer {self._api_key()}", "Content-Type": "application/json"}
        body = {
            "model": cfg.model_name,
            "temperature": cfg.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        last: Exception | None = None
        with httpx.Client(transport=self._transport, timeout=cfg.timeout) as client:
            for attempt in range(1, cfg.max_retries + 2):
                if attempt > 1:
                    self._sleep(cfg.backoff_base * 2 ** (attempt - 2))
                RATE_LIMITER.wait(cfg.requests_per_second, self._sleep)
                try:
                    resp = client.post(cfg.endpoint_url, json=body, headers=headers)
                except httpx.TimeoutException as exc:
                    last = LlmTimeoutError(f"request timed out after {cfg.timeout}s: {exc}")
                    continue
                except httpx.TransportError as exc:
                    last = LlmTransportError(f"transport error: {exc}")
                    continue
                if resp.status_code >= 500:
                    last = LlmProtocolError(f"server error {resp.status_code}", resp.status_code)
                    continue
                if not 200 <= resp.status_code < 300:
                    raise LlmProtocolError(f"unexpected status {resp.status_code}", resp.status_code)
                try:
                    text = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise LlmProtocolError(f"malformed completion body: {exc}", resp.status_code) from None
                if not isinstance(text, str):
                    raise LlmProtocolError("completion content is not a string", resp.status_code)
                return Completion(text, attempt, time.perf_counter() - t0)
        assert last is not None
        if isinstance(last, LlmProtocolError):
            raise last
        raise type(last)(f"{last} (gave up after {cfg.max_retries + 1} attempts)")


def complete(config: BackendConfig, system: str, user: str, **client_kw) -> str:
    return LlmClient(config, **client_kw).complete(system, user)


# --------------------------------------------------------------------------
# label parsing and end-to-end calls
# --------------------------------------------------------------------------


def _aliases(label: str) -> set[str]:
    base = label.lower()
    return {base, base.replace("_", " "), base.replace("_", "-"), base.replace(" ", "_"), base.replace("_", "")}


def parse_label(raw_text: str, label_set: Sequence[str]) -> str:
    """Find a label of ``label_set`` in free text.

    Case-insensitive; underscores may appear as spaces or hyphens.  The
    longest matching label wins, then the earliest match, then vocabulary order.
    """
    if not label_set:
        raise ValueError("label_set is empty")
    text = raw_text.lower()
    best = None
    for order, label in enumerate(label_set):
        for alias in _aliases(label):
            m = re.search(r"(?<![a-z0-9])" + re.escape(alias) + r"(?![a-z0-9])", text)
            if m is None:
                continue
            key = (-len(label), m.start(), order)
            if best is None or key < best[0]:
                best = (key, label)
    if best is None:
        raise UnparseableResponseError(raw_text)
    return best[1]


@dataclass
class LlmResult:
    raw_text: str
    parsed_label: str | None
    latency: float
    token_estimate_in: int
    token_estimate_out: int
    prompt: str = ""
    system: str = ""
    attempts: int = 1
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "raw_text": self.raw_text,
            "parsed_label": self.parsed_label,
            "latency": self.latency,
            "token_estimate_in": self.token_estimate_in,
            "token_estimate_out": self.token_estimate_out,
            "prompt": self.prompt,
            "system": self.system,
            "attempts": self.attempts,
            **self.extra,
        }


def _client(backend: BackendConfig | LlmClient) -> LlmClient:
    return backend if isinstance(backend, LlmClient) else LlmClient(backend)


def classify_window(
    backend: BackendConfig | LlmClient,
    template: PromptTemplate,
    fv: FeatureVector,
    label_set: Sequence[str],
    precision: int = 3,
) -> LlmResult:
    """render -> complete -> parse.  Raises UnparseableResponseError when no label is found."""
    client = _client(backend)
    prompt = render_prompt(template, fv, label_set, precision=precision)
    done = client.complete_ex(template.system_text, prompt)
    label = parse_label(done.text, label_set)
    return LlmResult(
        raw_text=done.text,
        parsed_label=label,
        latency=max(0.0, done.latency),
        token_estimate_in=estimate_tokens(template.system_text + prompt),
        token_estimate_out=estimate_tokens(done.text),
        prompt=prompt,
        system=template.system_text,
        attempts=done.attempts,
    )


def answer_question(
    backend: BackendConfig | LlmClient,
    context_fv: FeatureVector,
    question: str,
    template: PromptTemplate | None = None,
    precision: int = 3,
) -> LlmResult:
    """Free-form answer about a window; the reply is returned unparsed."""
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    template = template or load_template("qa_v1")
    client = _client(backend)
    prompt = render_prompt(template, context_fv, question=question, precision=precision)
    done = client.complete_ex(template.system_text, prompt)
    return LlmResult(
        raw_text=done.text,
        parsed_label=None,
        latency=max(0.0, done.latency),
        token_estimate_in=estimate_tokens(template.system_text + prompt),
        token_estimate_out=estimate_tokens(done.text),
        prompt=prompt,
        system=template.system_text,
        attempts=done.attempts,
    )


def load_backend_config(path) -> BackendConfig:
    with open(path, encoding="utf-8") as fh:
        return BackendConfig.from_dict(json.load(fh))
