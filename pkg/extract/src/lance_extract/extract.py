"""Extraction job: images + texts in, the classifier toolkit's files out.

Emits exactly the files the training CLI consumes:

- images.npy, manifest.json   image embeddings + item metadata
- concepts.txt, concepts.npy  concept texts + their embeddings, same order
- prompts.npy, prompts.json   (descriptor + training-domain) x class prompt
                              embeddings with the sidecar

Every embedding row is unit-normalized here, at the single normalization
site, so the consumer can trust unit rows. This tool only writes files; all
modeling stays on the other side of the format boundary. Before returning,
the job re-reads everything it wrote and checks counts and norms.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import UndecodableImage, make_encoder

log = logging.getLogger("lance_extract")

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
DEFAULT_TEMPLATE = "a {domain} of a {class}"


class ExtractError(RuntimeError):
    pass


def render_prompt(template: str, domain_descriptor: str, class_name: str) -> str:
    """{domain}/{class} substitution, matching the consumer's template rules."""
    if "{domain}" not in template or "{class}" not in template:
        raise ExtractError(f"template {template!r} needs {{domain}} and {{class}}")
    return template.replace("{domain}", domain_descriptor).replace("{class}", class_name)


def load_lines(path) -> list[str]:
    """One entry per line, '#' comments and blanks skipped, order-preserving dedup."""
    entries = []
    seen = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line in seen:
            continue
        seen.add(line)
        entries.append(line)
    if not entries:
        raise ExtractError(f"{path}: no entries")
    return entries


@dataclass
class ExtractionJob:
    image_root: Path | None          # root/<domain>/<class>/*.jpg|png
    concept_file: Path
    descriptor_file: Path
    train_domain: str
    output_dir: Path
    image_manifest: Path | None = None   # CSV alternative: path,label,domain[,id]
    template: str = DEFAULT_TEMPLATE
    encoder: str = "hash"
    encoder_dim: int = 64            # hash encoder only; real encoders fix their own


@dataclass
class _Item:
    id: str
    path: Path
    class_name: str
    domain: str


def _items_from_directory(root: Path) -> list[_Item]:
    items = []
    domains = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not domains:
        raise ExtractError(f"{root}: no domain directories")
    for domain in domains:
        class_dirs = sorted(p.name for p in (root / domain).iterdir() if p.is_dir())
        if not class_dirs:
            raise ExtractError(f"{root / domain}: no class directories")
        for cls in class_dirs:
            files = sorted(p for p in (root / domain / cls).iterdir()
                           if p.suffix.lower() in IMAGE_SUFFIXES)
            if not files:
                raise ExtractError(f"{root / domain / cls}: declared but holds no images")
            for f in files:
                items.append(_Item(id=f"{domain}/{cls}/{f.name}", path=f,
                                   class_name=cls, domain=domain))
    return items


def _items_from_csv(path: Path) -> list[_Item]:
    items = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            try:
                image = Path(row["path"])
                cls = row["class"]
                domain = row["domain"]
            except KeyError as exc:
                raise ExtractError(f"{path}: missing CSV column {exc}") from exc
            items.append(_Item(id=row.get("id") or str(image), path=image,
                               class_name=cls, domain=domain))
    if not items:
        raise ExtractError(f"{path}: no rows")
    return items


def _save_array(m: np.ndarray, path) -> None:
    np.save(path, np.ascontiguousarray(m, dtype=np.float32))


def extract(job: ExtractionJob) -> Path:
    if job.image_root is None and job.image_manifest is None:
        raise ExtractError("need an image root directory or a CSV manifest")
    items = (_items_from_csv(Path(job.image_manifest)) if job.image_manifest
             else _items_from_directory(Path(job.image_root)))
    class_names = sorted({it.class_name for it in items})
    domain_names = sorted({it.domain for it in items})
    if job.train_domain not in domain_names:
        raise ExtractError(f"train domain {job.train_domain!r} not among image "
                           f"domains {domain_names}")

    concepts = load_lines(job.concept_file)
    descriptors = load_lines(job.descriptor_file)
    encoder = make_encoder(job.encoder, dim=job.encoder_dim)

    # Images: skip anything the encoder cannot decode, but an entirely
    # undecodable (domain, class) cell is an error upstream data is broken.
    kept: list[_Item] = []
    rows = []
    for item in items:
        try:
            rows.append(encoder.encode_images([item.path])[0])
        except UndecodableImage as exc:
            log.warning("skipping undecodable image %s (%s)", item.id, exc)
            continue
        kept.append(item)
    for domain in domain_names:
        for cls in sorted({it.class_name for it in items if it.domain == domain}):
            if not any(it.domain == domain and it.class_name == cls for it in kept):
                raise ExtractError(f"every image of {domain}/{cls} was undecodable")
    image_matrix = np.asarray(rows, dtype=np.float32)

    concept_matrix = encoder.encode_texts(concepts)

    prompt_texts = []
    for descriptor in descriptors + [job.train_domain]:
        for cls in class_names:
            prompt_texts.append(render_prompt(job.template, descriptor, cls))
    prompt_matrix = encoder.encode_texts(prompt_texts)

    out = Path(job.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _save_array(image_matrix, out / "images.npy")
    _save_array(concept_matrix, out / "concepts.npy")
    _save_array(prompt_matrix, out / "prompts.npy")
    (out / "concepts.txt").write_text("\n".join(concepts) + "\n", encoding="utf-8")
    manifest = {
        "class_names": class_names,
        "domain_names": domain_names,
        "train_domain": job.train_domain,
        "items": [
            {"id": it.id, "embedding_row": row, "label": class_names.index(it.class_name),
             "domain": it.domain}
            for row, it in enumerate(kept)
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n",
                                       encoding="utf-8")
    sidecar = {
        "template": job.template,
        "train_descriptor": job.train_domain,
        "descriptors": descriptors,
        "class_names": class_names,
        "encoder": getattr(encoder, "name", job.encoder),
    }
    (out / "prompts.json").write_text(json.dumps(sidecar, indent=1) + "\n",
                                      encoding="utf-8")

    _validate_output(out, n_images=len(kept), n_concepts=len(concepts),
                     n_prompts=(len(descriptors) + 1) * len(class_names))
    return out


def _validate_output(out: Path, n_images: int, n_concepts: int, n_prompts: int) -> None:
    """Re-read every emitted file and check counts and unit norms."""
    for name, expected in (("images.npy", n_images), ("concepts.npy", n_concepts),
                           ("prompts.npy", n_prompts)):
        matrix = np.load(out / name)
        if matrix.dtype != np.float32 or matrix.ndim != 2:
            raise ExtractError(f"{name}: wrong dtype/shape after write")
        if len(matrix) != expected:
            raise ExtractError(f"{name}: wrote {len(matrix)} rows, expected {expected}")
        norms = np.sqrt((matrix.astype(np.float64) ** 2).sum(axis=1))
        if len(norms) and float(np.abs(norms - 1.0).max()) > 1e-5:
            raise ExtractError(f"{name}: rows are not unit-norm after write")
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    if len(manifest["items"]) != n_images:
        raise ExtractError("manifest item count does not match the image matrix")
