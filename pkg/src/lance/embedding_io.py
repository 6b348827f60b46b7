"""File formats shared across the toolkit and with the extraction tool.

Three surfaces: the binary array container for embedding matrices, the JSON
dataset manifest, and plain-text banks of concepts or domain descriptors.
All parsing is pure; loading the same file twice yields equal objects.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyBank,
    FormatError,
    ManifestError,
    ShapeError,
    UnsupportedFormat,
)
from .numerics import as_matrix

_MAGIC = b"\x93NUMPY"
_HEADER_ALIGN = 64


def write_array_file(m, path) -> None:
    """Write a float32 matrix as a v1.0 array container.

    Layout: 6-byte magic, version bytes 1.0, little-endian uint16 header
    length, ASCII header dict, space padding plus a trailing newline so the
    payload starts on a 64-byte boundary, then the row-major little-endian
    float32 payload.
    """
    m = as_matrix(m)
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': (%d, %d), }" % m.shape
    base = len(_MAGIC) + 2 + 2
    pad = (-(base + len(header) + 1)) % _HEADER_ALIGN
    header_bytes = (header + " " * pad + "\n").encode("latin1")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(b"\x01\x00")
        f.write(struct.pack("<H", len(header_bytes)))
        f.write(header_bytes)
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_array_file(path) -> np.ndarray:
    """Read a v1.0 array container written by :func:`write_array_file`.

    Only the exact dialect we emit is accepted: version 1.0, little-endian
    float32, C order, explicit 2-D shape. Anything else is rejected with an
    error naming the offending field, so a bad hand-off from the extraction
    tool fails loudly instead of silently reinterpreting bytes.
    """
    data = Path(path).read_bytes()
    if len(data) < len(_MAGIC) or data[: len(_MAGIC)] != _MAGIC:
        raise FormatError(f"{path}: not an array file")
    if len(data) < len(_MAGIC) + 4:
        raise FormatError(f"{path}: truncated before header")
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise UnsupportedFormat(f"{path}: version {major}.{minor}, expected 1.0")
    (header_len,) = struct.unpack("<H", data[8:10])
    header_end = 10 + header_len
    if len(data) < header_end:
        raise FormatError(
            f"{path}: header says {header_len} bytes but only "
            f"{len(data) - 10} present")
    try:
        meta = ast.literal_eval(data[10:header_end].decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparseable header ({exc})") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise UnsupportedFormat(f"{path}: header fields {sorted(meta)!r}" if isinstance(meta, dict)
                                else f"{path}: header is not a dict")
    if meta["descr"] != "<f4":
        raise UnsupportedFormat(f"{path}: dtype {meta['descr']!r}, expected '<f4'")
    if meta["fortran_order"] is not False:
        raise UnsupportedFormat(f"{path}: layout fortran_order={meta['fortran_order']!r}")
    shape = meta["shape"]
    if (not isinstance(shape, tuple) or len(shape) != 2
            or not all(isinstance(s, int) and s >= 0 for s in shape)):
        raise UnsupportedFormat(f"{path}: shape {shape!r}, expected a 2-D tuple")
    rows, cols = shape
    expected = rows * cols * 4
    payload = data[header_end:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


@dataclass(frozen=True)
class ManifestItem:
    id: str
    embedding_row: int
    label: int
    domain: str


@dataclass(frozen=True)
class DatasetManifest:
    """Which embedding row is which sample, and how domains partition them."""

    items: tuple[ManifestItem, ...]
    class_names: tuple[str, ...]
    domain_names: tuple[str, ...]
    train_domain: str

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def items_for_domain(self, domain: str) -> list[ManifestItem]:
        return [it for it in self.items if it.domain == domain]

    def rows_and_labels(self, domain: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Embedding-row indices and labels, optionally restricted to one domain."""
        picked = self.items if domain is None else self.items_for_domain(domain)
        rows = np.array([it.embedding_row for it in picked], dtype=np.int64)
        labels = np.array([it.label for it in picked], dtype=np.int64)
        return rows, labels

    def validate_rows(self, n_rows: int) -> None:
        for it in self.items:
            if it.embedding_row >= n_rows:
                raise ManifestError(
                    f"item {it.id!r}: embedding_row {it.embedding_row} out of "
                    f"range for a {n_rows}-row matrix")

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "domain_names": list(self.domain_names),
            "train_domain": self.train_domain,
            "items": [
                {"id": it.id, "embedding_row": it.embedding_row,
                 "label": it.label, "domain": it.domain}
                for it in self.items
            ],
        }


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ManifestError(message)


def parse_manifest(doc: dict, source: str = "manifest") -> DatasetManifest:
    _require(isinstance(doc, dict), f"{source}: top level must be an object")
    for key in ("class_names", "domain_names", "train_domain", "items"):
        _require(key in doc, f"{source}: missing field {key!r}")
    class_names = doc["class_names"]
    domain_names = doc["domain_names"]
    _require(isinstance(class_names, list) and class_names
             and all(isinstance(c, str) for c in class_names),
             f"{source}: class_names must be a nonempty list of strings")
    _require(isinstance(domain_names, list) and domain_names
             and all(isinstance(d, str) for d in domain_names),
             f"{source}: domain_names must be a nonempty list of strings")
    train_domain = doc["train_domain"]
    _require(train_domain in domain_names,
             f"{source}: train_domain {train_domain!r} not in domain_names")
    _require(isinstance(doc["items"], list), f"{source}: items must be a list")

    items = []
    seen_rows: set[int] = set()
    for pos, raw in enumerate(doc["items"]):
        where = f"{source}: items[{pos}]"
        _require(isinstance(raw, dict), f"{where} must be an object")
        for key, kind in (("id", str), ("embedding_row", int), ("label", int), ("domain", str)):
            _require(key in raw, f"{where}: missing field {key!r}")
            _require(isinstance(raw[key], kind) and not isinstance(raw[key], bool),
                     f"{where}: field {key!r} must be {kind.__name__}")
        _require(0 <= raw["label"] < len(class_names),
                 f"{where}: label out of range ({raw['label']} with "
                 f"{len(class_names)} classes)")
        _require(raw["domain"] in domain_names,
                 f"{where}: domain {raw['domain']!r} not in domain_names")
        _require(raw["embedding_row"] >= 0,
                 f"{where}: embedding_row must be >= 0")
        _require(raw["embedding_row"] not in seen_rows,
                 f"{where}: duplicate embedding_row {raw['embedding_row']}")
        seen_rows.add(raw["embedding_row"])
        items.append(ManifestItem(id=raw["id"], embedding_row=raw["embedding_row"],
                                  label=raw["label"], domain=raw["domain"]))
    return DatasetManifest(items=tuple(items), class_names=tuple(class_names),
                           domain_names=tuple(domain_names), train_domain=train_domain)


def load_manifest(path) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    return parse_manifest(doc, source=str(path))


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=1) + "\n",
                          encoding="utf-8")


@dataclass
class TextBank:
    """Ordered, deduplicated list of concept texts or domain descriptors."""

    entries: list[str]
    embeddings: np.ndarray | None = None
    duplicate_count: int = 0

    def __post_init__(self):
        if any(not e for e in self.entries):
            raise EmptyBank("text bank contains an empty entry")
        if len(set(self.entries)) != len(self.entries):
            raise EmptyBank("text bank entries must be unique")
        if self.embeddings is not None and len(self.embeddings) != len(self.entries):
            raise ShapeError(
                f"{len(self.entries)} entries but {len(self.embeddings)} embedding rows")

    def __len__(self) -> int:
        return len(self.entries)


def load_text_bank(path) -> TextBank:
    """One entry per line; blank lines and '#' comments skipped, duplicates dropped."""
    text = Path(path).read_text(encoding="utf-8")
    entries: list[str] = []
    seen: set[str] = set()
    duplicates = 0
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line in seen:
            duplicates += 1
            continue
        seen.add(line)
        entries.append(line)
    if not entries:
        raise EmptyBank(f"{path}: no entries")
    return TextBank(entries=entries, duplicate_count=duplicates)


def save_text_bank(entries, path) -> None:
    lines = entries.entries if isinstance(entries, TextBank) else list(entries)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
