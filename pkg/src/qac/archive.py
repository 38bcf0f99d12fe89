"""Single-file model archives.

Layout (all little-endian):

    8 bytes  magic ``QACMODEL``
    u32      format version
    u64      header length, then that many bytes of UTF-8 JSON holding the
             model config, the vocabulary symbols, and the tensor manifest
    tensors  in manifest order: u32 name length, name, u8 dtype code
             (0 = float32, 1 = float64), u8 ndim, u64 dims, raw C-order data
    u32      CRC-32 of everything before the trailer

Loading verifies magic, version, and checksum; tensors round-trip
bit-exactly. Archives default to float32 payloads because models train and
serve in float32; float64 models (gradient-check builds) keep their width.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .errors import ArchiveError
from .model import ModelConfig, Parameters, UserEmbeddings

MAGIC = b"QACMODEL"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class ModelArchive:
    params: Parameters
    users: UserEmbeddings
    vocab: Vocabulary
    config: ModelConfig


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    code = _CODES_BY_KIND[np.dtype(arr.dtype)]
    arr = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code])
    raw_name = name.encode("utf-8")
    head = struct.pack("<I", len(raw_name)) + raw_name
    head += struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return head + arr.tobytes()


def save_model(
    params: Parameters,
    users: UserEmbeddings,
    vocab: Vocabulary,
    config: ModelConfig,
    path: str | Path,
) -> None:
    tensors = dict(params.tensors())
    tensors["U"] = users.matrix
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "vocabulary": vocab.symbols[3:],
        "tensors": list(tensors),
    }
    raw_header = json.dumps(header).encode("utf-8")
    body = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(raw_header)), raw_header]
    for name, arr in tensors.items():
        body.append(_pack_tensor(name, arr))
    blob = b"".join(body)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob)))


def load_model(path: str | Path) -> ModelArchive:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 16:
        raise ArchiveError(f"{path}: file too short to be a model archive")
    if data[: len(MAGIC)] != MAGIC:
        raise ArchiveError(f"{path}: bad magic, not a model archive")
    blob, trailer = data[:-4], data[-4:]
    (stored_crc,) = struct.unpack("<I", trailer)
    if zlib.crc32(blob) != stored_crc:
        raise ArchiveError(f"{path}: checksum mismatch (truncated or corrupt)")

    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise ArchiveError(
            f"{path}: archive format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    (header_len,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
    pos += header_len

    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in header["tensors"]:
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            code, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos) if ndim else ()
            pos += 8 * ndim
            dtype = _DTYPE_CODES[code]
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            arr = np.frombuffer(blob[pos : pos + n_bytes], dtype=dtype).reshape(shape)
            pos += n_bytes
            tensors[name] = arr.copy()
    except (struct.error, KeyError, ValueError) as exc:
        raise ArchiveError(f"{path}: malformed tensor section") from exc
    if pos != len(blob):
        raise ArchiveError(f"{path}: trailing bytes after tensor section")

    config = ModelConfig(**header["config"]).validate()
    vocab = Vocabulary(header["vocabulary"])
    users = UserEmbeddings(tensors.pop("U"))
    params = Parameters(**tensors)
    return ModelArchive(params=params, users=users, vocab=vocab, config=config)
