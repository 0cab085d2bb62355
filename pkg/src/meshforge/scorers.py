"""Semantic scorers: map a batch of rendered images to per-image losses plus
exact per-pixel loss gradients.

Three implementations share the contract: a fixed-target MSE scorer (inverse
rendering), a seeded random-projection cosine scorer (fast differentiable
stand-in for a remote embedding model), and an HTTP client for the remote
scoring service.
"""

from __future__ import annotations

import base64
import hashlib

import numpy as np


class ScorerError(RuntimeError):
    """The scorer failed; the optimization step must be aborted, not patched."""


class ScorerUnreachableError(ScorerError):
    """Remote scorer endpoint cannot be reached."""


def cosine_loss(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative cosine similarity and its gradient w.r.t. `a`.

    Raises ScorerError on zero-norm inputs (a broken embedding, not a valid
    score of zero).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ScorerError("cosine_loss received a zero-norm embedding")
    dot = float(a @ b)
    value = -dot / (na * nb)
    grad_a = -(b / (na * nb) - dot * a / (na**3 * nb))
    return value, grad_a


def _text_seed(*parts: str | int) -> np.random.Generator:
    h = hashlib.sha256()
    for p in parts:
        chunk = str(p).encode("utf-8")
        h.update(len(chunk).to_bytes(4, "little"))
        h.update(chunk)
    words = np.frombuffer(h.digest()[:16], dtype=np.uint32)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words.tolist())))


class RandomProjectionScorer:
    """Seeded dense linear projection of pixels followed by cosine loss.

    The projection and per-prompt embeddings are pure functions of the seed,
    so scores are reproducible across processes. Projections are cached per
    image resolution.
    """

    def __init__(self, embed_dim: int = 128, seed: int = 0):
        if embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        self.embed_dim = int(embed_dim)
        self.seed = int(seed)
        self._projections: dict[tuple[int, int], np.ndarray] = {}

    def projection(self, height: int, width: int) -> np.ndarray:
        key = (height, width)
        if key not in self._projections:
            rng = _text_seed("projection", self.seed, height, width)
            p = rng.standard_normal((self.embed_dim, height * width * 3))
            self._projections[key] = (p / np.sqrt(p.shape[1])).astype(np.float64)
        return self._projections[key]

    def prompt_embedding(self, text: str) -> np.ndarray:
        rng = _text_seed("prompt", self.seed, text)
        e = rng.standard_normal(self.embed_dim)
        return e / np.linalg.norm(e)

    def score(self, images: np.ndarray, prompt_text: str):
        return self.score_with_embedding(images, self.prompt_embedding(prompt_text))

    def score_with_embedding(self, images: np.ndarray, embedding: np.ndarray):
        images = np.asarray(images, dtype=np.float64)
        b, h, w, _ = images.shape
        proj = self.projection(h, w)
        losses = np.empty(b)
        grads = np.empty_like(images)
        for i in range(b):
            z = proj @ images[i].reshape(-1)
            losses[i], gz = cosine_loss(z, embedding)
            grads[i] = (proj.T @ gz).reshape(h, w, 3)
        return losses, grads


class TargetImageScorer:
    """Mean squared error against a fixed target image."""

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)
        if self.target.ndim != 3 or self.target.shape[2] != 3:
            raise ValueError("target must be (H, W, 3)")

    def score(self, images: np.ndarray, prompt_text: str):
        images = np.asarray(images, dtype=np.float64)
        if images.shape[1:] != self.target.shape:
            raise ScorerError(
                f"image shape {images.shape[1:]} does not match target {self.target.shape}"
            )
        diff = images - self.target[None]
        losses = np.mean(diff**2, axis=(1, 2, 3))
        grads = 2.0 * diff / self.target.size
        return losses, grads


def encode_image_base64(image: np.ndarray) -> dict:
    """Wire encoding shared with the scoring service: f32-le, row-major RGB."""
    img32 = np.ascontiguousarray(image, dtype="<f4")
    return {
        "h": int(image.shape[0]),
        "w": int(image.shape[1]),
        "data": base64.b64encode(img32.tobytes()).decode("ascii"),
    }


def decode_grad_base64(blob: str, height: int, width: int) -> np.ndarray:
    raw = base64.b64decode(blob)
    expected = height * width * 3 * 4
    if len(raw) != expected:
        raise ScorerError(f"gradient payload has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(height, width, 3).astype(np.float64)


class RemoteScorer:
    """Client for the HTTP scoring service (one request per prompt batch)."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._prompt_ids: dict[str, int] = {}
        self._session = None

    def _http(self):
        import requests

        if self._session is None:
            self._session = requests.Session()
        return self._session

    def _post(self, path: str, payload: dict) -> dict:
        import requests

        try:
            resp = self._http().post(self.endpoint + path, json=payload, timeout=self.timeout)
        except requests.exceptions.RequestException as exc:
            raise ScorerUnreachableError(f"scorer endpoint {self.endpoint} unreachable: {exc}") from exc
        if resp.status_code == 503:
            raise ScorerUnreachableError("scoring service is still loading its model")
        if resp.status_code != 200:
            detail = ""
            try:
                detail = resp.json().get("error", "")
            except Exception:
                detail = resp.text[:200]
            raise ScorerError(f"scoring service returned {resp.status_code}: {detail}")
        return resp.json()

    def register(self, text: str) -> int:
        if text not in self._prompt_ids:
            out = self._post("/v1/prompts", {"texts": [text]})
            self._prompt_ids[text] = int(out["ids"][0])
        return self._prompt_ids[text]

    def score(self, images: np.ndarray, prompt_text: str):
        images = np.asarray(images, dtype=np.float64)
        pid = self.register(prompt_text)
        payload = {
            "ids": [pid],
            "images": [encode_image_base64(img) for img in images],
        }
        out = self._post("/v1/score", payload)
        losses = np.array([row[0] for row in out["losses"]], dtype=np.float64)
        b, h, w, _ = images.shape
        grads = np.stack([decode_grad_base64(g, h, w) for g in out["grads"]])
        if len(losses) != b or grads.shape[0] != b:
            raise ScorerError("scoring service returned a mismatched batch size")
        return losses, grads
