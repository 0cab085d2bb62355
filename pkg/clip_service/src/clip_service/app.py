"""HTTP scoring service.

Wire protocol (JSON over HTTP/1.1):

    POST /v1/prompts {"texts": [...]}        -> {"ids": [...], "dim": D}
    POST /v1/score   {"ids": [...],
                      "images": [{"h": H, "w": W, "data": "<base64>"}]}
                                             -> {"losses": [[per-image-per-prompt]],
                                                 "grads": ["<base64>"]}
    GET  /v1/health                          -> {"version": "1", "model": id, "dim": D}

Image payloads are base64 of H*W*3 little-endian IEEE-754 32-bit values,
row-major, RGB interleaved; gradients use the same layout. Request faults get
HTTP 400 with {"error": ...}; 503 while the model is loading.
"""

from __future__ import annotations

import base64
import threading

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .encoder import load_encoder, score_images

VERSION = "1"

app = FastAPI(title="clip-scorer-service")


class _State:
    def __init__(self):
        self.encoder = None
        self.lock = threading.Lock()
        self.prompts: dict[int, torch.Tensor] = {}
        self.by_text: dict[str, int] = {}
        self.next_id = 0


_state = _State()


@app.on_event("startup")
def _load_model():
    def worker():
        encoder = load_encoder()
        with _state.lock:
            _state.encoder = encoder

    threading.Thread(target=worker, daemon=True).start()


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


@app.exception_handler(RequestValidationError)
def _bad_request(request: Request, exc: RequestValidationError):
    # the protocol promises 400 + {"error": ...} for every request fault
    first = exc.errors()[0] if exc.errors() else {}
    loc = ".".join(str(p) for p in first.get("loc", ()))
    return _error(400, f"invalid request at {loc}: {first.get('msg', 'validation error')}")


@app.exception_handler(Exception)
def _unhandled(request: Request, exc: Exception):
    return _error(400, f"{type(exc).__name__}: {exc}")


class PromptsRequest(BaseModel):
    texts: list[str]


class ImagePayload(BaseModel):
    h: int = Field(ge=1)
    w: int = Field(ge=1)
    data: str


class ScoreRequest(BaseModel):
    ids: list[int]
    images: list[ImagePayload]


@app.get("/v1/health")
def health():
    if _state.encoder is None:
        return _error(503, "model is loading")
    return {"version": VERSION, "model": _state.encoder.model_id, "dim": _state.encoder.dim}


@app.post("/v1/prompts")
def register_prompts(req: PromptsRequest):
    if _state.encoder is None:
        return _error(503, "model is loading")
    if not req.texts:
        return _error(400, "texts must be a nonempty list")
    if any(not t for t in req.texts):
        return _error(400, "prompt texts must be nonempty")
    ids = []
    with _state.lock:
        new_texts = [t for t in req.texts if t not in _state.by_text]
        if new_texts:
            embeddings = _state.encoder.embed_texts(new_texts)
            for text, emb in zip(new_texts, embeddings):
                _state.by_text[text] = _state.next_id
                _state.prompts[_state.next_id] = emb.detach()
                _state.next_id += 1
        ids = [_state.by_text[t] for t in req.texts]
    return {"ids": ids, "dim": _state.encoder.dim}


def _decode_image(payload: ImagePayload) -> np.ndarray:
    try:
        raw = base64.b64decode(payload.data, validate=True)
    except Exception as exc:
        raise ValueError(f"invalid base64 image payload: {exc}")
    expected = payload.h * payload.w * 3 * 4
    if len(raw) != expected:
        raise ValueError(
            f"image payload has {len(raw)} bytes, expected {expected} "
            f"for {payload.h}x{payload.w}x3 float32"
        )
    img = np.frombuffer(raw, dtype="<f4").reshape(payload.h, payload.w, 3)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < -1e-6 or img.max() > 1 + 1e-6:
        raise ValueError("image values must lie in [0, 1]")
    return img


@app.post("/v1/score")
def score(req: ScoreRequest):
    if _state.encoder is None:
        return _error(503, "model is loading")
    if not req.ids:
        return _error(400, "ids must be a nonempty list")
    if not req.images:
        return _error(400, "images must be a nonempty list")
    with _state.lock:
        missing = [i for i in req.ids if i not in _state.prompts]
        if missing:
            return _error(400, f"unknown prompt ids {missing}; register them first")
        prompt_emb = torch.stack([_state.prompts[i] for i in req.ids])

    first = (req.images[0].h, req.images[0].w)
    for payload in req.images:
        if (payload.h, payload.w) != first:
            return _error(400, "all images in one request must share a resolution")
    try:
        batch = np.stack([_decode_image(p) for p in req.images])
    except ValueError as exc:
        return _error(400, str(exc))

    losses, grads = score_images(_state.encoder, batch, prompt_emb)
    return {
        "losses": [[float(v) for v in row] for row in losses],
        "grads": [
            base64.b64encode(np.ascontiguousarray(g, dtype="<f4").tobytes()).decode("ascii")
            for g in grads
        ],
    }
