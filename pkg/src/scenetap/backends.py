"""Wire-protocol clients for the four model roles.

Planner and judge speak a chat-completions protocol; segmentation,
inpainting, and target scoring speak small purpose-built JSON endpoints.
All roles share one transport/retry stack and differ only in schema.
Every outbound body is validated before sending and every inbound body
before use, so protocol drift fails loudly at the boundary.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import jsonschema
import requests

from .core import ImageBuffer
from .errors import (
    BackendRejected,
    BackendUnavailable,
    CapabilityUnsupported,
    ProtocolViolation,
)
from .regions import BinaryMask

ROLES = ("planner", "judge", "segment", "inpaint", "target")


class TransportError(Exception):
    """Network-level failure below the HTTP layer; always retryable."""


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    initial_backoff_ms: int = 100
    multiplier: float = 2.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.initial_backoff_ms < 0 or self.multiplier <= 0:
            raise ValueError("bad backoff parameters")

    def delay_s(self, attempt: int) -> float:
        """Sleep before retry number `attempt` (1-based)."""
        return self.initial_backoff_ms * self.multiplier ** (attempt - 1) / 1000.0


@dataclass(frozen=True)
class RoleConfig:
    base_url: str
    token_env: Optional[str] = None
    model_name: Optional[str] = None
    timeout_s: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    rate_per_s: Optional[float] = None
    burst: int = 1

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class BackendConfig:
    """Per-role connection settings; tokens come from the environment only."""

    roles: dict

    def __post_init__(self):
        for name in self.roles:
            if name not in ROLES:
                raise ValueError(f"unknown backend role {name!r}")
        object.__setattr__(self, "roles", dict(self.roles))

    def role(self, name: str) -> RoleConfig:
        if name not in self.roles:
            raise ValueError(f"no configuration for role {name!r}")
        return self.roles[name]


@dataclass(frozen=True)
class ScoreRequest:
    image: ImageBuffer
    question: str
    candidates: tuple

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.candidates) < 2:
            raise ValueError("scoring requires at least two candidates")


# ---------------------------------------------------------------- schemas

_DATA_URL_PATTERN = "^data:image/png;base64,"

_TEXT_PART = {
    "type": "object",
    "required": ["type", "text"],
    "properties": {"type": {"const": "text"}, "text": {"type": "string"}},
    "additionalProperties": False,
}
_IMAGE_PART = {
    "type": "object",
    "required": ["type", "image_url"],
    "properties": {
        "type": {"const": "image_url"},
        "image_url": {
            "type": "object",
            "required": ["url"],
            "properties": {"url": {"type": "string", "pattern": _DATA_URL_PATTERN}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

CHAT_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["model", "temperature", "messages"],
    "properties": {
        "model": {"type": "string"},
        "temperature": {"type": "number"},
        "messages": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["role", "content"],
                "properties": {
                    "role": {"enum": ["system", "user", "assistant"]},
                    "content": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"oneOf": [_TEXT_PART, _IMAGE_PART]},
                    },
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}

CHAT_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["choices"],
    "properties": {
        "choices": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["message"],
                "properties": {
                    "message": {
                        "type": "object",
                        "required": ["content"],
                        "properties": {"content": {"type": "string"}},
                    }
                },
            },
        }
    },
}

SEGMENT_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["image_png_b64"],
    "properties": {"image_png_b64": {"type": "string"}},
    "additionalProperties": False,
}
SEGMENT_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["masks"],
    "properties": {
        "masks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["mask_png_b64", "area_px"],
                "properties": {
                    "mask_png_b64": {"type": "string"},
                    "area_px": {"type": "integer", "minimum": 0},
                },
            },
        }
    },
}

INPAINT_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["image_png_b64", "mask_png_b64", "prompt", "text"],
    "properties": {
        "image_png_b64": {"type": "string"},
        "mask_png_b64": {"type": "string"},
        "prompt": {"type": "string"},
        "text": {"type": "string"},
    },
    "additionalProperties": False,
}
INPAINT_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["image_png_b64"],
    "properties": {"image_png_b64": {"type": "string"}},
}

SCORE_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["image_png_b64", "question", "candidates"],
    "properties": {
        "image_png_b64": {"type": "string"},
        "question": {"type": "string"},
        "candidates": {"type": "array", "minItems": 2, "items": {"type": "string"}},
    },
    "additionalProperties": False,
}
SCORE_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["scores"],
    "properties": {"scores": {"type": "array", "items": {"type": "number"}}},
}


# ------------------------------------------------------- message building

def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def image_part(image: ImageBuffer) -> dict:
    url = "data:image/png;base64," + image.to_png_base64()
    return {"type": "image_url", "image_url": {"url": url}}


def user_message(*parts: dict) -> dict:
    return {"role": "user", "content": list(parts)}


# ----------------------------------------------------------- infrastructure

class RateLimiter:
    """Token bucket; acquire() blocks via the injected sleep when drained."""

    def __init__(
        self,
        rate_per_s: Optional[float] = None,
        burst: int = 1,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rate_per_s is not None and rate_per_s <= 0:
            raise ValueError("rate must be positive")
        if burst < 1:
            raise ValueError("burst must be at least 1")
        self._rate = rate_per_s
        self._burst = burst
        self._clock = clock
        self._sleep = sleep
        self._tokens = float(burst)
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self._rate is None:
            return
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(
                    self._burst, self._tokens + (now - self._last) * self._rate
                )
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            self._sleep(wait)


def _sanitize(value):
    """Replace bulky strings (image payloads) with digests in audit records."""
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_sanitize(v) for v in value]
    if isinstance(value, str) and len(value) > 256:
        digest = hashlib.sha256(value.encode("utf-8")).hexdigest()[:16]
        return f"sha256:{digest}:len={len(value)}"
    return value


class AuditLog:
    """Append-only JSONL log of requests and responses; single writer."""

    def __init__(self, path: str | Path):
        self._path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(_sanitize(record), sort_keys=True)
        with self._lock:
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def _requests_transport(method, url, headers, json_body, timeout):
    try:
        resp = requests.request(
            method, url, headers=headers, json=json_body, timeout=timeout
        )
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    try:
        body = resp.json()
    except ValueError:
        body = {"raw": resp.text}
    return resp.status_code, {k.lower(): v for k, v in resp.headers.items()}, body


class _WireClient:
    """Shared transport/retry/validation stack for one role."""

    def __init__(
        self,
        cfg: RoleConfig,
        role: str,
        transport=None,
        sleep: Callable[[float], None] = time.sleep,
        audit: Optional[AuditLog] = None,
        env: Optional[dict] = None,
    ):
        self.cfg = cfg
        self.role = role
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._audit = audit
        self._env = env
        self._limiter = RateLimiter(cfg.rate_per_s, cfg.burst, sleep=sleep)
        self.service_version: str = "unknown"

    def describe(self) -> str:
        name = self.cfg.model_name or self.cfg.base_url
        return f"{name} (v={self.service_version})"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.cfg.token_env:
            env = self._env if self._env is not None else os.environ
            token = env.get(self.cfg.token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, path: str, body: dict, request_schema, response_schema) -> dict:
        try:
            jsonschema.validate(body, request_schema)
        except jsonschema.ValidationError as exc:
            raise ProtocolViolation(f"{self.role}: bad outbound body: {exc.message}")
        url = self.cfg.base_url.rstrip("/") + path
        policy = self.cfg.retry
        last_error = "no attempt made"
        for attempt in range(1, policy.max_attempts + 1):
            self._limiter.acquire()
            if self._audit:
                self._audit.append(
                    {"role": self.role, "event": "request", "url": url,
                     "attempt": attempt, "body": body}
                )
            try:
                status, headers, resp = self._transport(
                    "POST", url, self._headers(), body, self.cfg.timeout_s
                )
            except TransportError as exc:
                last_error = f"transport: {exc}"
            else:
                if self._audit:
                    self._audit.append(
                        {"role": self.role, "event": "response", "url": url,
                         "attempt": attempt, "status": status, "body": resp}
                    )
                if 200 <= status < 300:
                    try:
                        jsonschema.validate(resp, response_schema)
                    except jsonschema.ValidationError as exc:
                        raise ProtocolViolation(
                            f"{self.role}: bad response: {exc.message}"
                        )
                    version = headers.get("x-service-version")
                    if version:
                        self.service_version = version
                    return resp
                if status == 429 or status >= 500:
                    last_error = f"status {status}"
                else:
                    raise BackendRejected(status, resp)
            if attempt < policy.max_attempts:
                self._sleep(policy.delay_s(attempt))
        raise BackendUnavailable(f"{self.role} at {url}: {last_error}")


class HttpChat(_WireClient):
    """Chat-completions client for the planner, judge, and target roles."""

    def chat(self, messages: list, temperature: float = 0.0) -> str:
        body = {
            "model": self.cfg.model_name or "default",
            "temperature": temperature,
            "messages": messages,
        }
        resp = self._post(
            "/v1/chat/completions", body, CHAT_REQUEST_SCHEMA, CHAT_RESPONSE_SCHEMA
        )
        return resp["choices"][0]["message"]["content"]


class HttpSegmenter(_WireClient):
    def segment(self, image: ImageBuffer) -> list:
        body = {"image_png_b64": image.to_png_base64()}
        resp = self._post(
            "/v1/segment", body, SEGMENT_REQUEST_SCHEMA, SEGMENT_RESPONSE_SCHEMA
        )
        masks = []
        for item in resp["masks"]:
            mask = BinaryMask.from_png_base64(item["mask_png_b64"])
            if (mask.width, mask.height) != (image.width, image.height):
                raise ProtocolViolation(
                    f"segment: mask {mask.width}x{mask.height} does not match "
                    f"image {image.width}x{image.height}"
                )
            masks.append(mask)
        return masks


class HttpInpainter(_WireClient):
    def inpaint(
        self, image: ImageBuffer, mask: BinaryMask, prompt: str, text: str
    ) -> ImageBuffer:
        if (mask.width, mask.height) != (image.width, image.height):
            raise ValueError("mask dimensions must match the image")
        body = {
            "image_png_b64": image.to_png_base64(),
            "mask_png_b64": mask.to_png_base64(),
            "prompt": prompt,
            "text": text,
        }
        resp = self._post(
            "/v1/inpaint", body, INPAINT_REQUEST_SCHEMA, INPAINT_RESPONSE_SCHEMA
        )
        out = ImageBuffer.from_png_base64(resp["image_png_b64"])
        if out.size != image.size:
            raise ProtocolViolation(
                f"inpaint: output {out.size} does not match input {image.size}"
            )
        return out


class HttpTarget(_WireClient):
    """Target model client: free-text answering plus candidate scoring."""

    def answer(self, image: ImageBuffer, question: str, choices=None) -> str:
        prompt = question
        if choices:
            prompt += (
                "\nAnswer with exactly one of the following options: "
                + " or ".join(f'"{c}"' for c in choices)
                + "."
            )
        messages = [user_message(image_part(image), text_part(prompt))]
        body = {
            "model": self.cfg.model_name or "default",
            "temperature": 0.0,
            "messages": messages,
        }
        resp = self._post(
            "/v1/chat/completions", body, CHAT_REQUEST_SCHEMA, CHAT_RESPONSE_SCHEMA
        )
        return resp["choices"][0]["message"]["content"]

    def score_candidates(self, req: ScoreRequest) -> list:
        body = {
            "image_png_b64": req.image.to_png_base64(),
            "question": req.question,
            "candidates": list(req.candidates),
        }
        try:
            resp = self._post(
                "/v1/score", body, SCORE_REQUEST_SCHEMA, SCORE_RESPONSE_SCHEMA
            )
        except BackendRejected as exc:
            if exc.status == 404:
                raise CapabilityUnsupported(
                    f"target at {self.cfg.base_url} does not expose scoring"
                ) from exc
            raise
        scores = [float(s) for s in resp["scores"]]
        if len(scores) != len(req.candidates):
            raise ProtocolViolation(
                f"score: {len(scores)} scores for {len(req.candidates)} candidates"
            )
        return scores


@dataclass
class Backends:
    """The five live collaborators an attack needs (mocks or HTTP clients)."""

    planner_chat: object
    judge_chat: object
    segmenter: object
    inpainter: object
    target: object

    def provenance(self) -> dict:
        out = {}
        for name in ("planner_chat", "judge_chat", "segmenter", "inpainter", "target"):
            client = getattr(self, name)
            out[name] = getattr(client, "describe", lambda: type(client).__name__)()
        return out


def backends_from_config(
    config: BackendConfig,
    transport=None,
    sleep: Callable[[float], None] = time.sleep,
    audit: Optional[AuditLog] = None,
) -> Backends:
    def make(cls, role):
        return cls(config.role(role), role, transport=transport, sleep=sleep, audit=audit)

    return Backends(
        planner_chat=make(HttpChat, "planner"),
        judge_chat=make(HttpChat, "judge"),
        segmenter=make(HttpSegmenter, "segment"),
        inpainter=make(HttpInpainter, "inpaint"),
        target=make(HttpTarget, "target"),
    )
