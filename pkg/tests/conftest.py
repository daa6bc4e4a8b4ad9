import time

import numpy as np
import pytest

from ipost.pipeline import FaceRecipe, ItemRecipe, enroll_fresh, train_face_embedder, train_item_classifier
from ipost.recognizers import EmbeddingGallery


def conv_bruteforce(x, k, b, stride=1):
    """Direct loop evaluation of a valid cross-correlation."""
    c, h, w = x.shape
    o, _, kh, kw = k.shape
    ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                win = x[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[oc, i, j] = np.sum(win * k[oc]) + b[oc]
    return out


def maxpool_bruteforce(x, window, stride):
    c, h, w = x.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.zeros((c, ho, wo))
    idx = np.zeros((c, ho, wo), dtype=int)
    for ch in range(c):
        for i in range(ho):
            for j in range(wo):
                best, best_idx = -np.inf, -1
                for di in range(window):
                    for dj in range(window):
                        r, col = i * stride + di, j * stride + dj
                        if x[ch, r, col] > best:
                            best, best_idx = x[ch, r, col], ch * h * w + r * w + col
                out[ch, i, j] = best
                idx[ch, i, j] = best_idx
    return out, idx


def numerical_grad(f, x, eps=1e-3):
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        grad[i] = (fp - fm) / (2 * eps)
    return grad


def rel_error(a, b):
    """Max relative error with a small absolute floor."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Trained:
    """Models shared by the slow tests; each is trained once per session."""

    def __init__(self):
        self._item = None
        self._face = None

    @property
    def item(self):
        if self._item is None:
            start = time.perf_counter()
            net, history = train_item_classifier(ItemRecipe())
            self._item = (net, history, time.perf_counter() - start)
        return self._item

    @property
    def face(self):
        if self._face is None:
            recipe = FaceRecipe()
            start = time.perf_counter()
            net, gallery, history = train_face_embedder(recipe)
            seconds = time.perf_counter() - start
            sim_gallery = EmbeddingGallery(gallery.accept_threshold,
                                           {k: list(v) for k, v in gallery.entries.items()})
            enroll_fresh(sim_gallery, net, recipe, 20)
            self._face = (net, gallery, sim_gallery, history, seconds)
        return self._face


@pytest.fixture(scope="session")
def trained():
    return Trained()
