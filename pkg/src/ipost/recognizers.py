"""Item classifier and face authenticator built on trained networks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import NetworkGraph
from .tensor import DTYPE, ShapeError

DEFAULT_THRESHOLD = 0.6


def similarity_index(distance: float) -> float:
    """``1 / (1 + distance)``: 1 for a perfect match, falling toward 0."""
    if distance < 0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    if math.isinf(distance):
        return 0.0
    return 1.0 / (1.0 + distance)


@dataclass(frozen=True)
class MatchResult:
    identity: str | None  # set only when accepted
    best_distance: float
    similarity: float
    nearest: str | None = None

    @property
    def accepted(self) -> bool:
        return self.identity is not None


@dataclass(frozen=True)
class ItemPrediction:
    label: str
    probability: float
    distribution: dict[str, float]


@dataclass
class EmbeddingGallery:
    """Enrolled identities, each with one or more unit-norm embeddings."""

    accept_threshold: float = DEFAULT_THRESHOLD
    entries: dict[str, list[np.ndarray]] = field(default_factory=dict)

    @property
    def dim(self) -> int | None:
        for embs in self.entries.values():
            return embs[0].shape[0]
        return None

    def identities(self) -> list[str]:
        return sorted(self.entries)

    def add(self, identity: str, embeddings) -> "EmbeddingGallery":
        """Append embeddings for ``identity``; earlier entries are kept as is."""
        if not identity or any(ch.isspace() for ch in identity):
            raise ValueError("identity must be a nonempty, whitespace-free label")
        embeddings = [np.asarray(e, dtype=DTYPE) for e in embeddings]
        if not embeddings:
            raise ValueError("need at least one embedding to enroll")
        dim = self.dim
        for e in embeddings:
            if e.ndim != 1 or (dim is not None and e.shape[0] != dim):
                raise ShapeError(f"embedding shape {e.shape} does not match gallery dimension {dim}")
            if abs(np.linalg.norm(e) - 1.0) > 1e-5:
                raise ValueError("gallery embeddings must have unit L2 norm")
            dim = e.shape[0]
        stored = self.entries.setdefault(identity, [])
        for e in embeddings:
            e = e.copy()
            e.setflags(write=False)
            stored.append(e)
        return self

    def matrix(self):
        """Stacked embeddings and the owning identity of each row, identities
        in lexicographic order."""
        names, rows = [], []
        for name in self.identities():
            for e in self.entries[name]:
                names.append(name)
                rows.append(e)
        return (np.stack(rows) if rows else np.zeros((0, 0))), names


def _check_eval(net: NetworkGraph):
    if net.mode != "eval":
        raise ValueError("recognizers need the network in eval mode")


def embed_faces(net: NetworkGraph, images) -> np.ndarray:
    """Embed a batch of face images ``(N, C, H, W)``."""
    if not net.is_embedding:
        raise ValueError("face embedding needs an l2norm-headed network")
    _check_eval(net)
    images = np.asarray(images, dtype=DTYPE)
    if images.shape[1:] != net.input_shape:
        raise ShapeError(f"image shape {images.shape[1:]} does not match network input {net.input_shape}")
    return net.predict(images)


def embed_face(net: NetworkGraph, image) -> np.ndarray:
    image = np.asarray(image, dtype=DTYPE)
    if image.shape != net.input_shape:
        raise ShapeError(f"image shape {image.shape} does not match network input {net.input_shape}")
    return embed_faces(net, image[None])[0]


def enroll(gallery: EmbeddingGallery, identity: str, images, net: NetworkGraph) -> EmbeddingGallery:
    """Embed ``images`` and append them under ``identity``."""
    images = np.asarray(images, dtype=DTYPE)
    if images.ndim == len(net.input_shape):
        images = images[None]
    if len(images) == 0:
        raise ValueError("need at least one image to enroll")
    return gallery.add(identity, list(embed_faces(net, images)))


def match_embeddings(gallery: EmbeddingGallery, probes) -> list[MatchResult]:
    """Nearest-neighbour match of each probe row against every stored embedding."""
    probes = np.atleast_2d(np.asarray(probes, dtype=DTYPE))
    stored, names = gallery.matrix()
    if not names:
        return [MatchResult(None, math.inf, 0.0) for _ in probes]
    if probes.shape[1] != stored.shape[1]:
        raise ShapeError(f"probe dimension {probes.shape[1]} != gallery dimension {stored.shape[1]}")
    d = np.sqrt(np.maximum(((probes[:, None, :] - stored[None, :, :]) ** 2).sum(-1), 0.0))
    # rows are sorted by identity, so argmin's first-hit rule picks the
    # lexicographically lowest identity on exact ties
    best = d.argmin(axis=1)
    out = []
    for row, i in enumerate(best):
        dist = float(d[row, i])
        name = names[i]
        accepted = dist <= gallery.accept_threshold
        out.append(MatchResult(name if accepted else None, dist, similarity_index(dist), name))
    return out


def match_face(gallery: EmbeddingGallery, probe) -> MatchResult:
    return match_embeddings(gallery, np.asarray(probe, dtype=DTYPE)[None])[0]


def classify_items(net: NetworkGraph, images) -> list[ItemPrediction]:
    if not net.is_classifier:
        raise ValueError("item classification needs a softmax-headed network")
    _check_eval(net)
    images = np.asarray(images, dtype=DTYPE)
    if images.shape[1:] != net.input_shape:
        raise ShapeError(f"image shape {images.shape[1:]} does not match network input {net.input_shape}")
    probs = net.predict(images)
    labels = net.labels
    out = []
    for row in probs:
        k = int(np.argmax(row))
        out.append(ItemPrediction(labels[k], float(row[k]), {l: float(p) for l, p in zip(labels, row)}))
    return out


def classify_item(net: NetworkGraph, image) -> ItemPrediction:
    image = np.asarray(image, dtype=DTYPE)
    if image.shape != net.input_shape:
        raise ShapeError(f"image shape {image.shape} does not match network input {net.input_shape}")
    return classify_items(net, image[None])[0]
