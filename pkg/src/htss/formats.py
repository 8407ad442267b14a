"""On-disk formats: rasters, checkpoints, label files, manifests.

Binary layouts are little-endian throughout.

Raster file:  magic "HTSSRAST", u32 dtype code (1 = float32, 2 =
uint16), u32 rank, rank x u32 dims, then the row-major payload.

Array container (used for checkpoints): magic "HTSSCKPT", u32 version,
u32 array count, then per array u32 rank, rank x u32 dims and a float64
payload.

Weak label file: text, one "class_index x_min y_min x_max y_max" line
per box, then a single "tags:" line listing tag class indices.

Label spaces, manifests, and taxonomy exports are JSON documents with
sorted keys so that a rerun writes byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .annotations import WeakLabel
from .errors import FormatError
from .taxonomy import (
    RELATION_KINDS,
    SUPERVISION_KINDS,
    LabelSpace,
    RelationTable,
    Taxonomy,
)

RASTER_MAGIC = b"HTSSRAST"
CKPT_MAGIC = b"HTSSCKPT"
CKPT_VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<u2")}
_CODE_OF = {np.dtype(np.float32): 1, np.dtype(np.uint16): 2}


def write_raster(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    code = _CODE_OF.get(array.dtype)
    if code is None:
        raise FormatError(path, f"raster dtype must be float32 or uint16, got {array.dtype}")
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<II", code, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.astype(_DTYPE_CODES[code], copy=False).tobytes())


def read_raster(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != RASTER_MAGIC:
            raise FormatError(path, f"bad raster magic {magic!r}")
        code, rank = struct.unpack("<II", fh.read(8))
        if code not in _DTYPE_CODES:
            raise FormatError(path, f"unknown raster dtype code {code}")
        if not 1 <= rank <= 4:
            raise FormatError(path, f"unsupported raster rank {rank}")
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        dtype = _DTYPE_CODES[code]
        count = int(np.prod(dims))
        payload = fh.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise FormatError(path, "truncated raster payload")
        if fh.read(1):
            raise FormatError(path, "trailing bytes after raster payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_array_file(path, arrays: list[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(arrays)))
        for array in arrays:
            array = np.ascontiguousarray(array, dtype="<f8")
            fh.write(struct.pack("<I", array.ndim))
            fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
            fh.write(array.tobytes())


def read_array_file(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CKPT_MAGIC:
            raise FormatError(path, f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise FormatError(path, f"unsupported checkpoint version {version}")
        arrays = []
        for _ in range(count):
            (rank,) = struct.unpack("<I", fh.read(4))
            if not 1 <= rank <= 4:
                raise FormatError(path, f"unsupported array rank {rank}")
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(dims))
            payload = fh.read(8 * n)
            if len(payload) != 8 * n:
                raise FormatError(path, "truncated checkpoint payload")
            arrays.append(np.frombuffer(payload, dtype="<f8").reshape(dims).copy())
        if fh.read(1):
            raise FormatError(path, "trailing bytes after checkpoint payload")
    return arrays


def write_weak_label(path, label: WeakLabel) -> None:
    lines = [f"{c} {x0} {y0} {x1} {y1}" for c, x0, y0, x1, y1 in label.boxes]
    lines.append("tags: " + " ".join(str(t) for t in label.tags))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_weak_label(path) -> WeakLabel:
    boxes = []
    tags: tuple[int, ...] = ()
    saw_tags = False
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("tags:"):
            if saw_tags:
                raise FormatError(path, f"line {ln}: duplicate tags record")
            saw_tags = True
            rest = line[len("tags:"):].split()
            try:
                tags = tuple(int(t) for t in rest)
            except ValueError:
                raise FormatError(path, f"line {ln}: non-integer tag") from None
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(path, f"line {ln}: expected 5 fields, got {len(parts)}")
        try:
            boxes.append(tuple(int(p) for p in parts))
        except ValueError:
            raise FormatError(path, f"line {ln}: non-integer box field") from None
    if not saw_tags:
        raise FormatError(path, "missing tags record")
    return WeakLabel(boxes=tuple(boxes), tags=tags)


def _dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc}") from None


def write_label_space(path, space: LabelSpace) -> None:
    _dump_json(path, {"dataset_id": space.dataset_id,
                      "supervision": space.supervision,
                      "classes": list(space.classes)})


def read_label_space(path) -> LabelSpace:
    doc = _load_json(path)
    for key in ("dataset_id", "supervision", "classes"):
        if key not in doc:
            raise FormatError(path, f"label space missing key {key!r}")
    if doc["supervision"] not in SUPERVISION_KINDS:
        raise FormatError(path, f"unknown supervision kind {doc['supervision']!r}")
    return LabelSpace(dataset_id=doc["dataset_id"],
                      classes=tuple(doc["classes"]),
                      supervision=doc["supervision"])


def write_relations(path, triples) -> None:
    lines = [f"{kind}\t{subject}\t{obj}" for kind, subject, obj in sorted(set(triples))]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_relations(path) -> RelationTable:
    triples = []
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(path, f"line {ln}: expected kind<TAB>subject<TAB>object")
        kind, subject, obj = parts
        if kind not in RELATION_KINDS:
            raise FormatError(path, f"line {ln}: unknown relation kind {kind!r}")
        triples.append((kind, subject, obj))
    return RelationTable.from_triples(triples)


def write_taxonomy(path, t: Taxonomy, spaces) -> None:
    doc = {
        "atoms": list(t.atoms),
        "groups": {
            sp.dataset_id: {
                sp.classes[m]: [t.atom_name(a)
                                for a in sorted(t.groups[(sp.dataset_id, m)])]
                for m in range(sp.num_classes + 1)
            }
            for sp in spaces
        },
    }
    _dump_json(path, doc)


def write_manifest(path, doc: dict) -> None:
    _dump_json(path, doc)


def read_manifest(path) -> dict:
    doc = _load_json(path)
    for key in ("dataset_id", "supervision", "granularity", "label_space", "records"):
        if key not in doc:
            raise FormatError(path, f"manifest missing key {key!r}")
    return doc
