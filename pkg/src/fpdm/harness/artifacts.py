"""On-disk artifacts: atomic JSON/CSV/NPZ writes, PGM maps with sidecars, and hash checks.

Every artifact records the hash of the config that produced it. JSON files
carry a ``config_hash`` key, CSV files start with a ``# config_hash=`` line,
and PGM files carry it in a header comment and in their sidecar.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..phantom import atomic_write_bytes


class PrerequisiteError(RuntimeError):
    """A required input artifact is missing, corrupt, or from another config."""


class EmptyInputError(PrerequisiteError):
    pass


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


# JSON and CSV

def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable, allow_nan=True)


def write_json(path, doc: dict, config_hash: str) -> Path:
    path = Path(path)
    atomic_write_bytes(path, dumps(dict(doc, config_hash=config_hash)).encode())
    return path


def read_json(path, config_hash: str | None = None, what: str = "artifact") -> dict:
    path = Path(path)
    if not path.exists():
        raise PrerequisiteError(f"missing {what}: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise PrerequisiteError(f"corrupt {what} {path}: {exc}") from exc
    if config_hash is not None and doc.get("config_hash") != config_hash:
        raise PrerequisiteError(
            f"{what} {path} was produced by config {doc.get('config_hash')!r}, current config is {config_hash!r}")
    return doc


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], config_hash: str) -> Path:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path = Path(path)
    atomic_write_bytes(path, buf.getvalue().encode())
    return path


def read_csv(path) -> tuple[str, list[dict]]:
    """Returns ``(config_hash, rows)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# config_hash="):
        raise PrerequisiteError(f"{path} has no config hash line")
    return lines[0].split("=", 1)[1], list(csv.DictReader(lines[1:]))


def write_npz(path, config_hash: str, **arrays) -> Path:
    buf = io.BytesIO()
    np.savez(buf, config_hash=np.array(config_hash), **arrays)
    path = Path(path)
    atomic_write_bytes(path, buf.getvalue())
    return path


def read_npz(path, config_hash: str, what: str = "arrays") -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise PrerequisiteError(f"missing {what}: {path}")
    with np.load(path) as z:
        if str(z["config_hash"]) != config_hash:
            raise PrerequisiteError(f"{what} {path} belongs to config {z['config_hash']}, not {config_hash}")
        return {k: z[k] for k in z.files if k != "config_hash"}


# PGM

def _pgm_bytes(pixels: np.ndarray, maxval: int, config_hash: str) -> bytes:
    h, w = pixels.shape
    header = f"P5\n# config_hash {config_hash}\n{w} {h}\n{maxval}\n".encode()
    dtype = ">u2" if maxval > 255 else "u1"
    return header + pixels.astype(dtype).tobytes()


def quantize16(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(v.shape, dtype=np.uint16), lo, hi
    q = np.rint((v - lo) / (hi - lo) * 65535.0)
    return np.clip(q, 0, 65535).astype(np.uint16), lo, hi


def dequantize16(q: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.full(q.shape, lo)
    return lo + q.astype(np.float64) / 65535.0 * (hi - lo)


def write_map_pgm(path, values: np.ndarray, config_hash: str) -> Path:
    """16-bit map plus a ``.json`` sidecar holding the min/max needed to de-quantize."""
    path = Path(path)
    q, lo, hi = quantize16(values)
    atomic_write_bytes(path, _pgm_bytes(q, 65535, config_hash))
    sidecar = {"min": lo, "max": hi, "maxval": 65535, "shape": list(q.shape)}
    write_json(path.with_suffix(".json"), sidecar, config_hash)
    return path


def write_mask_pgm(path, mask: np.ndarray, config_hash: str) -> Path:
    path = Path(path)
    atomic_write_bytes(path, _pgm_bytes(np.where(np.asarray(mask, dtype=bool), 255, 0), 255, config_hash))
    return path


def read_pgm(path) -> tuple[np.ndarray, int, str | None]:
    """Returns ``(pixels, maxval, config_hash)`` for a binary PGM."""
    data = Path(path).read_bytes()
    pos = 0
    tokens: list[bytes] = []
    config_hash = None
    while len(tokens) < 4:
        if pos >= len(data):
            raise PrerequisiteError(f"truncated PGM header in {path}")
        if data[pos:pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comment = data[pos + 1:end].decode().strip().split()
            if len(comment) == 2 and comment[0] == "config_hash":
                config_hash = comment[1]
            pos = end + 1
        elif data[pos:pos + 1].isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    pos += 1  # the single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise PrerequisiteError(f"{path} is not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    need = w * h * np.dtype(dtype).itemsize
    if len(data) - pos != need:
        raise PrerequisiteError(f"{path}: expected {need} pixel bytes, found {len(data) - pos}")
    return np.frombuffer(data[pos:], dtype=dtype).reshape(h, w), maxval, config_hash


def read_map_pgm(path) -> np.ndarray:
    q, maxval, _ = read_pgm(path)
    side = json.loads(Path(path).with_suffix(".json").read_text())
    if maxval != 65535:
        raise PrerequisiteError(f"{path} is not a 16-bit map")
    return dequantize16(q, side["min"], side["max"])


def read_mask_pgm(path) -> np.ndarray:
    q, _, _ = read_pgm(path)
    return q > 0
