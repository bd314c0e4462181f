"""Canonical JSON encoding shared by model and index files.

Arrays are stored as base64 of their little-endian bytes, so files are
compact, exact, and byte-identical for identical content.
"""
from __future__ import annotations

import base64
import hashlib
import json

import numpy as np


class FormatError(ValueError):
    pass


class UnsupportedVersionError(FormatError):
    pass


def encode_array(arr) -> dict:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f8")
    elif arr.dtype.kind in "iub":
        arr = arr.astype("<i8")
    else:
        raise TypeError(f"cannot encode array of dtype {arr.dtype}")
    return {
        "dtype": arr.dtype.str,
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii"),
    }


def decode_array(obj: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(obj["data"], validate=True)
        arr = np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"corrupt array section: {exc}") from None
    return arr.astype(arr.dtype.newbyteorder("="))


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def fingerprint(obj) -> str:
    return hashlib.sha256(canonical_dumps(obj).encode("ascii")).hexdigest()[:16]


def write_document(path, kind: str, version: int, header: dict, body: dict) -> None:
    doc = {"kind": kind, "format_version": version, "header": header, "body": body}
    with open(path, "w", encoding="ascii") as fh:
        fh.write(canonical_dumps(doc))
        fh.write("\n")


def read_document(path, kind: str, supported_version: int) -> tuple[dict, dict]:
    try:
        with open(path, encoding="ascii") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a valid {kind} file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise FormatError(f"{path}: not a {kind} file")
    version = doc.get("format_version")
    if version != supported_version:
        raise UnsupportedVersionError(
            f"{path}: {kind} format_version {version} is not supported (this build reads version {supported_version})"
        )
    try:
        return doc["header"], doc["body"]
    except KeyError as exc:
        raise FormatError(f"{path}: missing section {exc}") from None
