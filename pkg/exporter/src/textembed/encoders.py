"""Text encoders the exporter can run.

Two families:

* ``hashed-ngram`` -- a self-contained deterministic featurizer. Every
  token (stemmed unigram or word bigram) maps to a fixed pseudo-random
  Gaussian direction derived from sha256 of the token text, and a
  description embeds as the weighted sum of its token directions. No
  downloads, no floating-point ambiguity across runs: byte-identical
  exports forever. This is the encoder behind the checked-in fixtures.

* any other model id -- treated as a pretrained CLIP-style checkpoint and
  run through `transformers` (requires the ``clip`` extra and network or a
  local cache the first time).
"""

from __future__ import annotations

import hashlib
import math
import re
from typing import Sequence

import numpy as np

HASHED_MODEL_ID = "hashed-ngram"
HASHED_MODEL_VERSION = "1"

_WORD_RE = re.compile(r"[a-z0-9]+")

_STOPWORDS = frozenset(
    """a an and are as at be by for from has have in into is it its of on or
    that the their there this to with while often usually commonly typically
    you can one""".split()
)

_BIGRAM_WEIGHT = 0.5


def _stem(word: str) -> str:
    # plural folding only: "chairs" -> "chair", but "glass" stays
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def _token_direction(token: str, dim: int) -> np.ndarray:
    """Fixed Gaussian direction for a token, via sha256 + Box-Muller.

    Each 32-byte digest of "<token>|<block>" yields four unit-uniform
    64-bit draws, turned into four normals. Independent of numpy's RNG, so
    the mapping can never drift between library versions.
    """
    vals: list[float] = []
    block = 0
    while len(vals) < dim:
        digest = hashlib.sha256(f"{token}|{block}".encode("utf-8")).digest()
        for k in (0, 16):
            u1 = (int.from_bytes(digest[k : k + 8], "big") + 1) / (2**64 + 2)
            u2 = (int.from_bytes(digest[k + 8 : k + 16], "big") + 1) / (2**64 + 2)
            r = math.sqrt(-2.0 * math.log(u1))
            vals.append(r * math.cos(2.0 * math.pi * u2))
            vals.append(r * math.sin(2.0 * math.pi * u2))
        block += 1
    return np.asarray(vals[:dim], dtype=np.float64)


class HashedNgramEncoder:
    """Deterministic bag-of-ngrams featurizer (see module docstring)."""

    def __init__(self, dim: int = 512):
        if dim < 4:
            raise ValueError(f"dim must be >= 4, got {dim}")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    @property
    def model_id(self) -> str:
        return HASHED_MODEL_ID

    @property
    def version(self) -> str:
        return HASHED_MODEL_VERSION

    def _direction(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            vec = _token_direction(token, self.dim)
            self._cache[token] = vec
        return vec

    def encode_one(self, text: str) -> np.ndarray:
        words = [_stem(w) for w in _WORD_RE.findall(text.lower())]
        acc = np.zeros(self.dim, dtype=np.float64)
        total = 0.0
        for w in words:
            if w in _STOPWORDS:
                continue
            acc += self._direction(w)
            total += 1.0
        for w1, w2 in zip(words, words[1:]):
            acc += _BIGRAM_WEIGHT * self._direction(f"{w1} {w2}")
            total += _BIGRAM_WEIGHT
        if total == 0.0:
            return acc
        return acc / math.sqrt(total)

    def encode(self, texts: Sequence[str], batch_size: int = 0) -> np.ndarray:
        return np.stack([self.encode_one(t) for t in texts])


class ClipTextEncoder:
    """Pretrained joint vision-language text tower via `transformers`.

    Loads lazily so the heavyweight deps are only needed when actually
    used. Descriptions longer than the tokenizer limit are truncated; the
    affected texts are recorded in `truncations` for the file metadata.
    """

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoTokenizer, CLIPTextModelWithProjection
        except ImportError as exc:  # pragma: no cover - exercised only without extras
            raise RuntimeError(
                "the CLIP export path needs the 'clip' extra (torch + transformers)"
            ) from exc
        self._torch = torch
        self.model_id = model_id
        self.device = device
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = CLIPTextModelWithProjection.from_pretrained(model_id).to(device).eval()
        self.version = getattr(self.model.config, "transformers_version", "unknown")
        self.dim = int(self.model.config.projection_dim)
        self.truncations: list[str] = []

    def encode(self, texts: Sequence[str], batch_size: int = 32) -> np.ndarray:
        torch = self._torch
        out: list[np.ndarray] = []
        limit = self.tokenizer.model_max_length
        for start in range(0, len(texts), batch_size):
            chunk = list(texts[start : start + batch_size])
            for t in chunk:
                if len(self.tokenizer(t, truncation=False)["input_ids"]) > limit:
                    self.truncations.append(t)
            tokens = self.tokenizer(
                chunk, padding=True, truncation=True, return_tensors="pt"
            ).to(self.device)
            with torch.no_grad():
                feats = self.model(**tokens).text_embeds
            out.append(feats.cpu().double().numpy())
        return np.vstack(out)


def build_encoder(model_id: str, dim: int = 512, device: str = "cpu"):
    if model_id == HASHED_MODEL_ID:
        return HashedNgramEncoder(dim=dim)
    return ClipTextEncoder(model_id, device=device)
