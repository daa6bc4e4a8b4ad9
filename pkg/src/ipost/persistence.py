"""Plain-text checkpoint and gallery files.

Checkpoint layout::

    ipost-checkpoint 1
    input C H W
    labels <label> ...          (empty after "labels" for embedding nets)
    layers N
    <kind> <hyperparameters...>  (N lines)
    shape: <extents...> | <values...>   (one line per parameter tensor)

Gallery layout::

    ipost-gallery 1
    threshold <value>
    dim D
    identities K
    identity <label> <count>
    shape: D | <values...>             (count lines)
    ...

Values are written with 17 significant digits so a load/save cycle is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .layers import LayerSpec, NetworkGraph
from .recognizers import EmbeddingGallery
from .tensor import DTYPE

CHECKPOINT_MAGIC = "ipost-checkpoint 1"
GALLERY_MAGIC = "ipost-gallery 1"


class FormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return "%.17g" % x


def _tensor_line(arr: np.ndarray) -> str:
    shape = " ".join(str(e) for e in arr.shape)
    return f"shape: {shape} | " + " ".join(_fmt(v) for v in arr.ravel()) + "\n"


def _parse_tensor(line: str, where: str) -> np.ndarray:
    if not line.startswith("shape:") or "|" not in line:
        raise FormatError(f"{where}: expected 'shape: ... | values'")
    head, _, body = line[len("shape:"):].partition("|")
    try:
        shape = tuple(int(t) for t in head.split())
        values = [float(t) for t in body.split()]
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None
    if len(values) != int(np.prod(shape)):
        raise FormatError(f"{where}: {len(values)} values for declared shape {shape}")
    return np.array(values, dtype=DTYPE).reshape(shape)


def dumps_checkpoint(net: NetworkGraph) -> str:
    out = [CHECKPOINT_MAGIC + "\n",
           "input " + " ".join(str(e) for e in net.input_shape) + "\n",
           "labels" + "".join(" " + l for l in (net.labels or [])) + "\n",
           f"layers {len(net.layers)}\n"]
    for spec in net.layers:
        hp = spec.hyperparams()
        out.append(" ".join([spec.kind] + [_fmt(v) if isinstance(v, float) else str(v) for v in hp]) + "\n")
    for spec, p in zip(net.layers, net.params):
        for name in ("W", "b"):
            if name in p:
                out.append(_tensor_line(p[name]))
    return "".join(out)


def save_checkpoint(net: NetworkGraph, path):
    Path(path).write_bytes(dumps_checkpoint(net).encode("ascii"))


def loads_checkpoint(text: str) -> NetworkGraph:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 4 or lines[0] != CHECKPOINT_MAGIC:
        raise FormatError("malformed header: missing checkpoint magic")
    try:
        key, *dims = lines[1].split()
        assert key == "input"
        input_shape = tuple(int(d) for d in dims)
        key, *labels = lines[2].split()
        assert key == "labels"
        key, count = lines[3].split()
        assert key == "layers"
        n_layers = int(count)
    except (AssertionError, ValueError):
        raise FormatError("malformed header") from None

    layers = []
    for i in range(n_layers):
        pos = 4 + i
        if pos >= len(lines):
            raise FormatError(f"layer {i}: header truncated")
        try:
            layers.append(LayerSpec.from_tokens(lines[pos].split()))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"layer {i}: malformed header line: {exc}") from None

    pos = 4 + n_layers
    params = []
    for i, spec in enumerate(layers):
        p = {}
        if spec.has_params:
            for name in ("W", "b"):
                if pos >= len(lines):
                    raise FormatError(f"layer {i}: missing parameter {name} (file truncated)")
                p[name] = _parse_tensor(lines[pos], f"layer {i} parameter {name}")
                pos += 1
        params.append(p)
    if pos != len(lines):
        raise FormatError(f"{len(lines) - pos} unexpected trailing lines")
    try:
        return NetworkGraph(layers, params, input_shape, labels or None)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def load_checkpoint(path) -> NetworkGraph:
    return loads_checkpoint(Path(path).read_bytes().decode("ascii"))


def dumps_gallery(gallery: EmbeddingGallery) -> str:
    out = [GALLERY_MAGIC + "\n",
           f"threshold {_fmt(gallery.accept_threshold)}\n",
           f"dim {gallery.dim or 0}\n",
           f"identities {len(gallery.entries)}\n"]
    for name in gallery.identities():
        embs = gallery.entries[name]
        out.append(f"identity {name} {len(embs)}\n")
        out.extend(_tensor_line(e) for e in embs)
    return "".join(out)


def save_gallery(gallery: EmbeddingGallery, path):
    Path(path).write_bytes(dumps_gallery(gallery).encode("utf-8"))


def loads_gallery(text: str) -> EmbeddingGallery:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 4 or lines[0] != GALLERY_MAGIC:
        raise FormatError("malformed header: missing gallery magic")
    try:
        threshold = float(lines[1].split()[1])
        dim = int(lines[2].split()[1])
        n_ids = int(lines[3].split()[1])
    except (IndexError, ValueError):
        raise FormatError("malformed gallery header") from None
    gallery = EmbeddingGallery(accept_threshold=threshold)
    pos = 4
    for k in range(n_ids):
        if pos >= len(lines):
            raise FormatError(f"identity block {k}: file truncated")
        parts = lines[pos].split()
        if len(parts) != 3 or parts[0] != "identity":
            raise FormatError(f"identity block {k}: expected 'identity <label> <count>'")
        name, count = parts[1], int(parts[2])
        pos += 1
        embs = []
        for j in range(count):
            if pos >= len(lines):
                raise FormatError(f"identity {name}: embedding {j} missing (file truncated)")
            e = _parse_tensor(lines[pos], f"identity {name} embedding {j}")
            if e.shape != (dim,):
                raise FormatError(f"identity {name} embedding {j}: shape {e.shape} != ({dim},)")
            embs.append(e)
            pos += 1
        gallery.add(name, embs)
    if pos != len(lines):
        raise FormatError(f"{len(lines) - pos} unexpected trailing lines")
    return gallery


def load_gallery(path) -> EmbeddingGallery:
    return loads_gallery(Path(path).read_bytes().decode("utf-8"))
