"""FastAPI services exposing the scenetap wire protocols.

One app per role: segmentation, text-aware inpainting, and a scoring
and answering shim. Request bodies are validated strictly (unknown
fields rejected), schema problems return 400 with a structured error,
engine failures return 500, and every response carries the service
version header. The score service additionally declares its scoring
convention in a header on every response. Services hold no per-request
state.
"""

from __future__ import annotations

import base64
import io
from typing import Annotated, Literal, Union

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .engines import EngineError

SERVICE_VERSION = f"scenetap-sidecars/{__version__}"
VERSION_HEADER = "X-Service-Version"
CONVENTION_HEADER = "X-Scoring-Convention"

DATA_URL_PREFIX = "data:image/png;base64,"


class RequestError(Exception):
    """Well-formed JSON carrying an unusable payload; maps to HTTP 400."""


# ---------------------------------------------------------------- bodies

class SegmentBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    image_png_b64: str


class InpaintBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    image_png_b64: str
    mask_png_b64: str
    prompt: str
    text: str


class ScoreBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    image_png_b64: str
    question: str
    candidates: list[str] = Field(min_length=2)


class TextPart(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["text"]
    text: str


class ImageUrl(BaseModel):
    model_config = ConfigDict(extra="forbid")
    url: str = Field(pattern="^data:image/png;base64,")


class ImagePart(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["image_url"]
    image_url: ImageUrl


Part = Annotated[Union[TextPart, ImagePart], Field(discriminator="type")]


class ChatMessage(BaseModel):
    model_config = ConfigDict(extra="forbid")
    role: Literal["system", "user", "assistant"]
    content: list[Part] = Field(min_length=1)


class ChatBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    model: str
    temperature: float
    messages: list[ChatMessage] = Field(min_length=1)


# ---------------------------------------------------------------- codecs

def decode_image(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("RGB"))
    except Exception as exc:
        raise RequestError(f"image payload is not decodable PNG: {exc}") from exc


def decode_mask(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            gray = np.asarray(im.convert("L"))
    except Exception as exc:
        raise RequestError(f"mask payload is not decodable PNG: {exc}") from exc
    return np.where(gray >= 128, 255, 0).astype(np.uint8)


def _encode(array: np.ndarray, mode: str) -> str:
    im = Image.fromarray(array, mode=mode)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def encode_image(array: np.ndarray) -> str:
    return _encode(array.astype(np.uint8), "RGB")


def encode_mask(array: np.ndarray) -> str:
    return _encode(np.where(array > 0, 255, 0).astype(np.uint8), "L")


def run_engine(call):
    """Invoke the engine; any crash is a model failure, not a client one."""
    try:
        return call()
    except EngineError:
        raise
    except Exception as exc:
        raise EngineError(f"{type(exc).__name__}: {exc}") from exc


# ------------------------------------------------------------------- apps

def _error_body(kind: str, detail) -> dict:
    return {"error": {"type": kind, "detail": detail}}


def _base_app(role: str, engine, headers: dict) -> FastAPI:
    app = FastAPI(title=f"scenetap sidecar: {role}", docs_url=None,
                  redoc_url=None, openapi_url=None)

    @app.middleware("http")
    async def stamp_headers(request: Request, call_next):
        try:
            response = await call_next(request)
        except Exception:
            response = JSONResponse(
                _error_body("internal", "unhandled server error"),
                status_code=500,
            )
        for key, value in headers.items():
            response.headers[key] = value
        return response

    @app.exception_handler(RequestValidationError)
    async def on_schema_error(request: Request, exc: RequestValidationError):
        detail = [
            {"loc": list(e["loc"]), "msg": e["msg"], "type": e["type"]}
            for e in exc.errors()
        ]
        return JSONResponse(_error_body("schema", detail), status_code=400)

    @app.exception_handler(RequestError)
    async def on_request_error(request: Request, exc: RequestError):
        return JSONResponse(_error_body("bad_request", str(exc)),
                            status_code=400)

    @app.exception_handler(EngineError)
    async def on_engine_error(request: Request, exc: EngineError):
        return JSONResponse(_error_body("engine", str(exc)), status_code=500)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "role": role,
                "engine": getattr(engine, "name", type(engine).__name__)}

    return app


def create_segment_app(engine) -> FastAPI:
    app = _base_app("segment", engine, {VERSION_HEADER: SERVICE_VERSION})

    @app.post("/v1/segment")
    def segment(body: SegmentBody):
        image = decode_image(body.image_png_b64)
        masks = run_engine(lambda: engine.segment(image))
        items = []
        for mask in masks:
            if mask.shape != image.shape[:2]:
                raise EngineError(
                    f"engine produced a {mask.shape[1]}x{mask.shape[0]} mask "
                    f"for a {image.shape[1]}x{image.shape[0]} image"
                )
            items.append({
                "mask_png_b64": encode_mask(mask),
                "area_px": int(np.count_nonzero(mask)),
            })
        return {"masks": items}

    return app


def create_inpaint_app(engine) -> FastAPI:
    app = _base_app("inpaint", engine, {VERSION_HEADER: SERVICE_VERSION})

    @app.post("/v1/inpaint")
    def inpaint(body: InpaintBody):
        image = decode_image(body.image_png_b64)
        mask = decode_mask(body.mask_png_b64)
        if mask.shape != image.shape[:2]:
            raise RequestError(
                f"mask {mask.shape[1]}x{mask.shape[0]} does not match image "
                f"{image.shape[1]}x{image.shape[0]}"
            )
        result = run_engine(
            lambda: engine.inpaint(image, mask, body.prompt, body.text)
        )
        if result.shape != image.shape:
            raise EngineError("engine changed the image dimensions")
        return {"image_png_b64": encode_image(result)}

    return app


def _last_user_content(body: ChatBody):
    for message in reversed(body.messages):
        if message.role == "user":
            texts = [p.text for p in message.content if isinstance(p, TextPart)]
            image = None
            for part in message.content:
                if isinstance(part, ImagePart):
                    b64 = part.image_url.url[len(DATA_URL_PREFIX):]
                    image = decode_image(b64)
                    break
            return "\n".join(texts), image
    raise RequestError("no user message to answer")


def create_score_app(engine) -> FastAPI:
    convention = getattr(engine, "convention", "unspecified")
    app = _base_app("score", engine, {
        VERSION_HEADER: SERVICE_VERSION,
        CONVENTION_HEADER: convention,
    })

    @app.post("/v1/score")
    def score(body: ScoreBody):
        image = decode_image(body.image_png_b64)
        scores = run_engine(
            lambda: engine.score(image, body.question, list(body.candidates))
        )
        if len(scores) != len(body.candidates):
            raise EngineError(
                f"engine returned {len(scores)} scores for "
                f"{len(body.candidates)} candidates"
            )
        return {"scores": [float(s) for s in scores]}

    @app.post("/v1/chat/completions")
    def chat(body: ChatBody):
        question, image = _last_user_content(body)
        answer = run_engine(lambda: engine.answer(image, question))
        return {"choices": [{"message": {"content": str(answer)}}]}

    return app
