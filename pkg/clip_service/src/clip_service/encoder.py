"""Joint text/image encoders behind the scoring service.

Two backends share one interface:

* ``ClipEncoder`` wraps a pretrained CLIP from `transformers` when the weights
  are available (set CLIP_SERVICE_MODEL to pick a variant).
* ``BuiltinEncoder`` is a deterministic, fully differentiable stand-in: a
  seeded tanh CNN for images and a hashed-trigram linear map for text. It
  needs no downloads and keeps the wire contract exact, so the service stays
  usable in air-gapped environments.

Scoring happens inside the encoder so preprocessing (resize, normalization)
is part of the differentiated graph: the gradient returned to the client is
d(sum of losses)/d(input pixels) at the client's resolution.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np
import torch
import torch.nn.functional as F

torch.set_num_threads(1)  # determinism: identical requests -> identical bytes

EMBED_DIM = 512
_BUILTIN_INPUT = 64
_HASH_BINS = 2048


def _seeded(shape, seed: int, scale: float) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=gen) * scale


class BuiltinEncoder:
    """Deterministic differentiable encoder; all weights derive from a seed."""

    model_id = "builtin-tanh-cnn-v1"
    dim = EMBED_DIM

    def __init__(self, seed: int = 1234):
        def conv(cin, cout, k, s):
            w = _seeded((cout, cin, k, k), s, (2.0 / (cin * k * k)) ** 0.5)
            return w

        self.w1 = conv(3, 16, 5, seed + 1)
        self.w2 = conv(16, 32, 5, seed + 2)
        self.w3 = conv(32, 64, 3, seed + 3)
        self.w_img = _seeded((64 * 4 * 4, EMBED_DIM), seed + 4, (1.0 / (64 * 4 * 4)) ** 0.5)
        self.w_txt = _seeded((_HASH_BINS, EMBED_DIM), seed + 5, (1.0 / _HASH_BINS) ** 0.5)

    def embed_images(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W, 3) float in [0,1], grad-enabled -> (B, D) embeddings."""
        x = images.permute(0, 3, 1, 2)
        if x.shape[2] != _BUILTIN_INPUT or x.shape[3] != _BUILTIN_INPUT:
            x = F.interpolate(x, size=(_BUILTIN_INPUT, _BUILTIN_INPUT),
                              mode="bilinear", align_corners=False)
        x = x * 2.0 - 1.0
        x = torch.tanh(F.conv2d(x, self.w1, stride=2, padding=2))
        x = torch.tanh(F.conv2d(x, self.w2, stride=2, padding=2))
        x = torch.tanh(F.conv2d(x, self.w3, stride=2, padding=1))
        x = F.adaptive_avg_pool2d(x, (4, 4)).flatten(1)
        return x @ self.w_img

    def embed_texts(self, texts: list[str]) -> torch.Tensor:
        feats = torch.zeros((len(texts), _HASH_BINS))
        for i, text in enumerate(texts):
            data = text.lower().encode("utf-8")
            padded = b"\x01" + data + b"\x02"
            for j in range(len(padded) - 2):
                tri = padded[j : j + 3]
                h = int.from_bytes(hashlib.blake2s(tri, digest_size=4).digest(), "little")
                feats[i, h % _HASH_BINS] += 1.0
            norm = feats[i].norm()
            if norm > 0:
                feats[i] /= norm
        return feats @ self.w_txt


class ClipEncoder:
    """Pretrained CLIP via transformers; exact autodiff through preprocessing."""

    def __init__(self, model_name: str, local_only: bool = False):
        from transformers import CLIPModel, CLIPProcessor

        self.model = CLIPModel.from_pretrained(model_name, local_files_only=local_only)
        self.model.eval()
        processor = CLIPProcessor.from_pretrained(model_name, local_files_only=local_only)
        ip = processor.image_processor
        self.input_size = int(ip.crop_size["height"]) if hasattr(ip, "crop_size") else 224
        self.mean = torch.tensor(ip.image_mean).view(1, 3, 1, 1)
        self.std = torch.tensor(ip.image_std).view(1, 3, 1, 1)
        self.tokenizer = processor.tokenizer
        self.model_id = model_name
        self.dim = int(self.model.config.projection_dim)

    def embed_images(self, images: torch.Tensor) -> torch.Tensor:
        x = images.permute(0, 3, 1, 2)
        if x.shape[2] != self.input_size or x.shape[3] != self.input_size:
            x = F.interpolate(x, size=(self.input_size, self.input_size),
                              mode="bilinear", align_corners=False)
        x = (x - self.mean) / self.std
        return self.model.get_image_features(pixel_values=x)

    def embed_texts(self, texts: list[str]) -> torch.Tensor:
        tokens = self.tokenizer(texts, padding=True, return_tensors="pt")
        with torch.no_grad():
            return self.model.get_text_features(**tokens)


def load_encoder():
    """Pretrained CLIP when available, otherwise the builtin fallback.

    The default model is probed from the local cache only (no network stall);
    setting CLIP_SERVICE_MODEL forces a full load attempt including download.
    """
    explicit = os.environ.get("CLIP_SERVICE_MODEL")
    name = explicit or "openai/clip-vit-base-patch32"
    if name != "builtin":
        try:
            return ClipEncoder(name, local_only=explicit is None)
        except Exception:
            if explicit:
                raise
    return BuiltinEncoder()


def score_images(encoder, images: np.ndarray, prompt_embeddings: torch.Tensor):
    """Losses -cos(phi(I), phi(t)) per (image, prompt) and per-image pixel
    gradients of the prompt-summed loss.

    Returns (losses (B, P) float32, grads (B, H, W, 3) float32).
    """
    x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    x.requires_grad_(True)
    emb = encoder.embed_images(x)
    emb_n = F.normalize(emb, dim=1)
    prompts_n = F.normalize(prompt_embeddings, dim=1)
    losses = -(emb_n @ prompts_n.T)          # (B, P)
    losses.sum().backward()
    grad = x.grad.detach().numpy().astype(np.float32)
    return losses.detach().numpy().astype(np.float32), grad
