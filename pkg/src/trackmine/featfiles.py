"""On-disk formats for feature / embedding vectors.

Binary layout: magic b"TMEB", dim as u32 LE, count as u64 LE, then per
record a u32 LE key length, the UTF-8 key bytes, and dim little-endian
float32 values. CSV alternative: header-free rows of id,v0,...,v{dim-1}.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .embedding import EmbeddingRecord

MAGIC = b"TMEB"


def write_embeddings_bin(path, records: list[EmbeddingRecord]) -> None:
    if records:
        dim = len(records[0].vector)
        if any(len(r.vector) != dim for r in records):
            raise ValueError("all vectors must share one dimension")
    else:
        dim = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", dim, len(records)))
        for r in records:
            key = r.key.encode("utf-8")
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(np.asarray(r.vector, dtype="<f4").tobytes())


def read_embeddings_bin(path) -> list[EmbeddingRecord]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        dim, count = struct.unpack("<IQ", fh.read(12))
        records = []
        for _ in range(count):
            (key_len,) = struct.unpack("<I", fh.read(4))
            key = fh.read(key_len).decode("utf-8")
            vec = np.frombuffer(fh.read(4 * dim), dtype="<f4").astype(np.float64)
            records.append(EmbeddingRecord(key=key, vector=vec))
    return records


def write_embeddings_csv(path, records: list[EmbeddingRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for r in records:
            writer.writerow([r.key] + [repr(float(v)) for v in r.vector])


def read_embeddings_csv(path) -> list[EmbeddingRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            records.append(
                EmbeddingRecord(
                    key=row[0], vector=np.array([float(v) for v in row[1:]])
                )
            )
    return records


def read_embeddings(path) -> list[EmbeddingRecord]:
    """Dispatch on extension: .csv is text, everything else binary."""
    if Path(path).suffix.lower() == ".csv":
        return read_embeddings_csv(path)
    return read_embeddings_bin(path)


def write_embeddings(path, records: list[EmbeddingRecord]) -> None:
    if Path(path).suffix.lower() == ".csv":
        write_embeddings_csv(path, records)
    else:
        write_embeddings_bin(path, records)
