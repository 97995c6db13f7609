"""Synthetic paired image/caption data generated from a shared latent.

Each image draws a latent ``z`` on the unit sphere of R^latent_dim.  Image
tokens are ``A z`` plus isotropic noise, caption tokens are ``B z`` plus
independent noise (one draw per caption), where ``A`` and ``B`` are random
matrices with orthonormal columns fixed per dataset.  Captions of image ``i``
are stored contiguously at indices ``i*C .. i*C + C - 1``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from .numcore import make_rng

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class LatentSpec:
    latent_dim: int
    image_dim: int = 16
    text_dim: int = 16
    captions_per_image: int = 5
    noise: float = 0.3
    image_tokens: int = 4
    text_tokens: int = 4
    n_train: int = 800
    n_val: int = 100
    n_test: int = 100

    def __post_init__(self):
        for name in ("latent_dim", "image_dim", "text_dim", "captions_per_image",
                     "image_tokens", "text_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def n_images(self) -> int:
        return self.n_train + self.n_val + self.n_test


@dataclass(frozen=True)
class PairDataset:
    spec: LatentSpec
    seed: int
    latents: np.ndarray  # (n_images, latent_dim)
    image_map: np.ndarray  # (image_dim, latent_dim)
    text_map: np.ndarray  # (text_dim, latent_dim)
    images: np.ndarray  # (n_images, image_tokens, image_dim)
    captions: np.ndarray  # (n_images * C, text_tokens, text_dim)
    caption_image: np.ndarray  # (n_images * C,) ground-truth image of each caption

    def split_images(self, split: str) -> np.ndarray:
        s = self.spec
        bounds = {"train": (0, s.n_train), "val": (s.n_train, s.n_train + s.n_val),
                  "test": (s.n_train + s.n_val, s.n_images)}
        if split not in bounds:
            raise ValueError(f"unknown split {split!r}")
        lo, hi = bounds[split]
        return np.arange(lo, hi)

    def captions_of(self, image_ids) -> np.ndarray:
        c = self.spec.captions_per_image
        image_ids = np.asarray(image_ids)
        return (image_ids[:, None] * c + np.arange(c)[None, :]).ravel()

    @cached_property
    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in (self.latents, self.image_map, self.text_map, self.images, self.captions,
                  self.caption_image.astype(np.int64)):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    g = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # make the factorization unique
    return q if rows >= cols else q.T


def generate(spec: LatentSpec, seed: int) -> PairDataset:
    rng = make_rng(seed, "dataset")
    n, c = spec.n_images, spec.captions_per_image
    a = _orthonormal_columns(rng, spec.image_dim, spec.latent_dim)
    b = _orthonormal_columns(rng, spec.text_dim, spec.latent_dim)
    z = rng.standard_normal((n, spec.latent_dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    img_noise = rng.standard_normal((n, spec.image_tokens, spec.image_dim))
    txt_noise = rng.standard_normal((n * c, spec.text_tokens, spec.text_dim))
    images = (z @ a.T)[:, None, :] + spec.noise * img_noise
    owner = np.repeat(np.arange(n), c)
    captions = (z @ b.T)[owner][:, None, :] + spec.noise * txt_noise
    return PairDataset(spec, seed, z, a, b, images, captions, owner)


@dataclass(frozen=True)
class Batch:
    images: np.ndarray  # image ids
    captions: np.ndarray  # caption ids; captions[k] belongs to images[k]


def batches(dataset: PairDataset, split: str, size: int, seed: int, epoch: int = 0) -> list[Batch]:
    """One epoch of shuffled batches with one random caption per image.

    A trailing batch with fewer than two pairs is dropped.
    """
    if size < 2:
        raise ValueError("batch size must be >= 2")
    ids = dataset.split_images(split)
    if ids.size == 0:
        raise ValueError(f"split {split!r} is empty")
    rng = make_rng(seed, "batches", split, epoch)
    order = ids[rng.permutation(ids.size)]
    pick = rng.integers(0, dataset.spec.captions_per_image, size=ids.size)
    caps = order * dataset.spec.captions_per_image + pick
    out = []
    for lo in range(0, ids.size, size):
        if ids.size - lo < 2:
            break
        out.append(Batch(order[lo:lo + size], caps[lo:lo + size]))
    return out


def test_pairs(dataset: PairDataset, split: str = "test"):
    """Gallery for full retrieval over a split.

    Returns ``(image_ids, caption_ids, truth)`` where ``truth[j]`` is the
    gallery row (image position) owning gallery column ``j``.
    """
    ids = dataset.split_images(split)
    if ids.size == 0:
        raise ValueError(f"split {split!r} is empty")
    caps = dataset.captions_of(ids)
    truth = np.repeat(np.arange(ids.size), dataset.spec.captions_per_image)
    return ids, caps, truth


test_pairs.__test__ = False  # keep pytest from collecting the name


def export(dataset: PairDataset) -> str:
    """JSON manifest; arrays are regenerated from (spec, seed) on load."""
    return json.dumps({"format": "boostmatch-dataset/1", "spec": asdict(dataset.spec),
                       "seed": dataset.seed, "checksum": dataset.checksum}, sort_keys=True)


def load_manifest(text: str) -> PairDataset:
    doc = json.loads(text)
    if doc.get("format") != "boostmatch-dataset/1":
        raise ValueError(f"not a dataset manifest: format={doc.get('format')!r}")
    ds = generate(LatentSpec(**doc["spec"]), doc["seed"])
    if ds.checksum != doc["checksum"]:
        raise ValueError("regenerated dataset does not match the manifest checksum")
    return ds
