"""Embedding backends.

Two encoders share one tiny interface: `encode_images(list[Path]) -> array`
and `encode_texts(list[str]) -> array`, both returning unit-norm float32
rows.

The default `hash` encoder is fully offline and deterministic: every input
is reduced to a digest that seeds a fixed-dimension Gaussian draw. It knows
nothing about semantics, which is fine for wiring tests and pipeline dry
runs. The `clip` encoder loads a real vision-language backbone lazily and
is only usable where torch, open_clip and the weights are installed.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_CLIP_MODEL = "ViT-L-14"


class EncoderError(RuntimeError):
    pass


class UndecodableImage(ValueError):
    pass


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.sqrt((rows * rows).sum(axis=1, keepdims=True))
    norms[norms == 0.0] = 1.0
    return (rows / norms).astype(np.float32)


class HashEncoder:
    """Deterministic stand-in encoder: digest -> seeded Gaussian -> unit row."""

    name = "hash"

    def __init__(self, dim: int = 64):
        self.dim = dim

    def _row_from_digest(self, payload: bytes, kind: str) -> np.ndarray:
        digest = hashlib.sha256(kind.encode() + b"\x00" + payload).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dim)

    def encode_images(self, paths) -> np.ndarray:
        rows = []
        for path in paths:
            # decode first so corrupt files fail here, like a real encoder
            try:
                with Image.open(path) as img:
                    pixels = img.convert("RGB").tobytes()
            except Exception as exc:
                raise UndecodableImage(f"{path}: {exc}") from exc
            rows.append(self._row_from_digest(pixels, "image"))
        return _normalize_rows(np.asarray(rows).reshape(len(rows), self.dim))

    def encode_texts(self, texts) -> np.ndarray:
        rows = [self._row_from_digest(t.encode("utf-8"), "text") for t in texts]
        return _normalize_rows(np.asarray(rows).reshape(len(rows), self.dim))


class ClipEncoder:
    """Frozen vision-language backbone via open_clip; loaded on first use."""

    def __init__(self, model: str = DEFAULT_CLIP_MODEL, pretrained: str = "openai",
                 device: str = "cpu", batch_size: int = 32):
        try:
            import torch
            import open_clip
        except ImportError as exc:
            raise EncoderError(
                "the clip encoder needs torch and open_clip_torch installed "
                "(pip install 'lance-extract[clip]')") from exc
        self._torch = torch
        self.name = f"clip:{model}:{pretrained}"
        self.batch_size = batch_size
        self.device = device
        self.model, _, self.preprocess = open_clip.create_model_and_transforms(
            model, pretrained=pretrained, device=device)
        self.model.eval()
        self.tokenizer = open_clip.get_tokenizer(model)

    def encode_images(self, paths) -> np.ndarray:
        torch = self._torch
        rows = []
        batch = []
        def flush():
            if not batch:
                return
            with torch.no_grad():
                feats = self.model.encode_image(torch.stack(batch).to(self.device))
            rows.append(feats.cpu().numpy())
            batch.clear()
        for path in paths:
            try:
                with Image.open(path) as img:
                    batch.append(self.preprocess(img.convert("RGB")))
            except Exception as exc:
                raise UndecodableImage(f"{path}: {exc}") from exc
            if len(batch) >= self.batch_size:
                flush()
        flush()
        return _normalize_rows(np.vstack(rows))

    def encode_texts(self, texts) -> np.ndarray:
        torch = self._torch
        rows = []
        for start in range(0, len(texts), self.batch_size):
            tokens = self.tokenizer(texts[start:start + self.batch_size]).to(self.device)
            with torch.no_grad():
                feats = self.model.encode_text(tokens)
            rows.append(feats.cpu().numpy())
        return _normalize_rows(np.vstack(rows))


def make_encoder(identifier: str, dim: int = 64):
    """`hash` (default, offline) or `clip[:model[:pretrained]]`."""
    if identifier == "hash":
        return HashEncoder(dim=dim)
    if identifier == "clip" or identifier.startswith("clip:"):
        parts = identifier.split(":")
        model = parts[1] if len(parts) > 1 else DEFAULT_CLIP_MODEL
        pretrained = parts[2] if len(parts) > 2 else "openai"
        return ClipEncoder(model=model, pretrained=pretrained)
    raise EncoderError(f"unknown encoder {identifier!r} (use 'hash' or 'clip[:model]')")
