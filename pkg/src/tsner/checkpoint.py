"""JSON checkpoints with base64 float64 payloads.

A checkpoint is one JSON object::

    {"format_version": 1, "kind": "tagger", "config": {...},
     "blocks": [{"name": "E", "shape": [V, m], "sha256": "...", "data": "<base64>"}, ...],
     "provenance": {"seed": 0, "config_digest": "..."}}

Payloads are the row-major little-endian float64 bytes of each block, so a
round trip is bit-exact.  Serialisation is deterministic (sorted keys, no
timestamps).
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path
from typing import Mapping

import numpy as np

from tsner.errors import (
    CheckpointFormatError,
    CheckpointIntegrityError,
    CheckpointShapeError,
    CheckpointVersionError,
)
from tsner.tagger import TaggerConfig, TaggerParams

FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


def config_digest(obj) -> str:
    """sha256 of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _encode_block(name: str, arr: np.ndarray) -> dict:
    raw = np.ascontiguousarray(arr, dtype=_LE_F64).tobytes()
    return {
        "name": name,
        "shape": list(arr.shape),
        "sha256": hashlib.sha256(raw).hexdigest(),
        "data": base64.b64encode(raw).decode("ascii"),
    }


def _decode_block(block: dict) -> tuple[str, np.ndarray]:
    try:
        name = block["name"]
        shape = tuple(int(s) for s in block["shape"])
        digest = block["sha256"]
        raw = base64.b64decode(block["data"].encode("ascii"), validate=True)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CheckpointFormatError(f"malformed parameter block: {exc}") from exc
    if hashlib.sha256(raw).hexdigest() != digest:
        raise CheckpointIntegrityError(f"block {name!r}: payload digest mismatch")
    n = int(np.prod(shape)) if shape else 1
    if len(raw) != n * _LE_F64.itemsize:
        raise CheckpointShapeError(name, f"payload holds {len(raw) // 8} values, shape {list(shape)} needs {n}")
    return name, np.frombuffer(raw, dtype=_LE_F64).astype(np.float64).reshape(shape)


def dump_blocks(kind: str, config: dict, blocks: Mapping[str, np.ndarray], provenance: dict | None = None) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "blocks": [_encode_block(k, np.asarray(v)) for k, v in blocks.items()],
        "provenance": provenance or {},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def parse_blocks(text: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint document; returns ``(header, blocks)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"not a complete JSON document: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CheckpointFormatError("missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {doc['format_version']!r} (expected {FORMAT_VERSION})"
        )
    if not isinstance(doc.get("blocks"), list) or not isinstance(doc.get("config"), dict):
        raise CheckpointFormatError("missing blocks or config")
    blocks = dict(_decode_block(b) for b in doc["blocks"])
    header = {k: doc.get(k) for k in ("format_version", "kind", "config", "provenance")}
    return header, blocks


def save_checkpoint(params: TaggerParams, path, seed: int | None = None, digest: str | None = None) -> None:
    cfg = params.config
    config = {
        "vocab_size": cfg.vocab_size,
        "emb_dim": cfg.emb_dim,
        "radius": cfg.radius,
        "hidden": cfg.hidden,
        "n_labels": cfg.n_labels,
    }
    text = dump_blocks("tagger", config, params.named(), {"seed": seed, "config_digest": digest})
    Path(path).write_text(text, encoding="utf-8")


def load_checkpoint(path, expected: TaggerConfig | None = None) -> TaggerParams:
    """Load tagger parameters, checking every block against the stored config.

    If ``expected`` is given the blocks must also fit that config; a mismatch
    raises :class:`CheckpointShapeError` naming the first offending block.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError(f"not UTF-8 text: {exc}") from exc
    header, blocks = parse_blocks(text)
    if header["kind"] != "tagger":
        raise CheckpointFormatError(f"expected a tagger checkpoint, found kind {header['kind']!r}")
    try:
        stored = TaggerConfig(**header["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"bad tagger config: {exc}") from exc
    target = expected if expected is not None else stored
    shapes = target.shapes()
    for name in TaggerParams.NAMES:
        if name not in blocks:
            raise CheckpointFormatError(f"missing parameter block {name!r}")
        if blocks[name].shape != shapes[name]:
            raise CheckpointShapeError(name, f"stored shape {list(blocks[name].shape)}, expected {list(shapes[name])}")
    extra = sorted(set(blocks) - set(TaggerParams.NAMES))
    if extra:
        raise CheckpointFormatError(f"unexpected parameter blocks {extra}")
    return TaggerParams(*(blocks[n] for n in TaggerParams.NAMES))


def checkpoint_provenance(path) -> dict:
    header, _ = parse_blocks(Path(path).read_text(encoding="utf-8"))
    return header["provenance"] or {}


def save_langid_checkpoint(params, path, seed: int | None = None, digest: str | None = None) -> None:
    config = {"vocab_size": params.Eg.shape[0], "emb_dim": params.Eg.shape[1], "rank": params.U.shape[0],
              "n_languages": params.n_languages}
    Path(path).write_text(dump_blocks("langid", config, params.named(), {"seed": seed, "config_digest": digest}),
                          encoding="utf-8")


def load_langid_checkpoint(path):
    from tsner.ensemble import LangIdParams

    header, blocks = parse_blocks(Path(path).read_text(encoding="utf-8"))
    if header["kind"] != "langid":
        raise CheckpointFormatError(f"expected a langid checkpoint, found kind {header['kind']!r}")
    cfg = header["config"]
    try:
        V, m, d, K = cfg["vocab_size"], cfg["emb_dim"], cfg["rank"], cfg["n_languages"]
    except KeyError as exc:
        raise CheckpointFormatError(f"langid config lacks {exc}") from exc
    shapes = {"Eg": (V, m), "U": (d, m), "V": (d, m), "P": (m, K)}
    for name, shape in shapes.items():
        if name not in blocks:
            raise CheckpointFormatError(f"missing parameter block {name!r}")
        if blocks[name].shape != shape:
            raise CheckpointShapeError(name, f"stored shape {list(blocks[name].shape)}, expected {list(shape)}")
    return LangIdParams(blocks["Eg"], blocks["U"], blocks["V"], blocks["P"])
