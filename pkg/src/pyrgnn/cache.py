"""Binary on-disk cache for pooling pyramids.

File layout (all little-endian):

    header   '<4sHBBII'  magic b'PYRP', version, method code, flags,
                         number of adjacencies, number of pooling matrices
    matrix   '<IIQ'      rows, cols, nnz; then int32 row indices,
                         int32 column indices, float64 values
    degrees  (flag bit 0) per level: uint8 present marker, then
                         '<I' length and float64 values when present

Adjacencies come first, then pooling matrices, then the optional degree
vectors, then a trailing '<I' input vertex count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .graph import as_csr
from .pooling import GraphPyramid, PoolMethod

log = logging.getLogger(__name__)

CACHE_ENV = "PYRGNN_CACHE_DIR"
MAGIC = b"PYRP"
VERSION = 1
HEADER = struct.Struct("<4sHBBII")
MATRIX_HEADER = struct.Struct("<IIQ")
UINT32 = struct.Struct("<I")
METHOD_CODES = {m: i for i, m in enumerate(PoolMethod)}
FLAG_DEGREES = 1

assert HEADER.size == 16


class CacheFormatError(ValueError):
    pass


def _write_matrix(fh, matrix):
    coo = sp.coo_matrix(matrix)
    fh.write(MATRIX_HEADER.pack(coo.shape[0], coo.shape[1], coo.nnz))
    fh.write(coo.row.astype("<i4").tobytes())
    fh.write(coo.col.astype("<i4").tobytes())
    fh.write(coo.data.astype("<f8").tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise CacheFormatError("truncated pyramid cache file")
    return data


def _read_matrix(fh):
    rows, cols, nnz = MATRIX_HEADER.unpack(_read_exact(fh, MATRIX_HEADER.size))
    r = np.frombuffer(_read_exact(fh, 4 * nnz), dtype="<i4")
    c = np.frombuffer(_read_exact(fh, 4 * nnz), dtype="<i4")
    v = np.frombuffer(_read_exact(fh, 8 * nnz), dtype="<f8")
    return as_csr(sp.coo_matrix((v, (r, c)), shape=(rows, cols)))


def save_pyramid(path, pyramid: GraphPyramid) -> None:
    has_degrees = any(d is not None for d in pyramid.degrees)
    flags = FLAG_DEGREES if has_degrees else 0
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(
            HEADER.pack(
                MAGIC,
                VERSION,
                METHOD_CODES[pyramid.method],
                flags,
                len(pyramid.adjacencies),
                len(pyramid.pool_matrices),
            )
        )
        for matrix in (*pyramid.adjacencies, *pyramid.pool_matrices):
            _write_matrix(fh, matrix)
        if has_degrees:
            for d in pyramid.degrees:
                if d is None:
                    fh.write(b"\x00")
                else:
                    fh.write(b"\x01")
                    fh.write(UINT32.pack(len(d)))
                    fh.write(np.asarray(d, dtype="<f8").tobytes())
        fh.write(UINT32.pack(pyramid.n_input))
    os.replace(tmp, path)


def load_pyramid(path) -> GraphPyramid:
    with open(path, "rb") as fh:
        magic, version, method_code, flags, n_adj, n_pool = HEADER.unpack(_read_exact(fh, HEADER.size))
        if magic != MAGIC:
            raise CacheFormatError(f"{path}: not a pyramid cache file")
        if version != VERSION:
            raise CacheFormatError(f"{path}: unsupported cache version {version}")
        method = list(PoolMethod)[method_code]
        adjacencies = tuple(_read_matrix(fh) for _ in range(n_adj))
        pools = tuple(_read_matrix(fh) for _ in range(n_pool))
        degrees = [None] * n_adj
        if flags & FLAG_DEGREES:
            for l in range(n_adj):
                if _read_exact(fh, 1) == b"\x01":
                    (length,) = UINT32.unpack(_read_exact(fh, 4))
                    degrees[l] = np.frombuffer(_read_exact(fh, 8 * length), dtype="<f8").copy()
        (n_input,) = UINT32.unpack(_read_exact(fh, 4))
    return GraphPyramid(adjacencies, pools, method, tuple(degrees), n_input)


def cache_key(dataset_id, graph_id, method, levels, delta, seed) -> str:
    payload = json.dumps(
        [str(dataset_id), int(graph_id), PoolMethod.parse(method).value, int(levels), float(delta), int(seed)]
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:32]


class PyramidCache:
    """Directory of cached pyramids; a ``None`` directory disables caching."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    @classmethod
    def from_env(cls, directory=None) -> "PyramidCache":
        return cls(directory or os.environ.get(CACHE_ENV) or None)

    @property
    def enabled(self) -> bool:
        return self.directory is not None

    def path(self, key) -> Path:
        return self.directory / f"{key}.pyr"

    def get(self, key) -> Optional[GraphPyramid]:
        if not self.enabled:
            return None
        path = self.path(key)
        if not path.exists():
            return None
        try:
            return load_pyramid(path)
        except (CacheFormatError, OSError, struct.error) as exc:
            log.warning("ignoring unreadable cache entry %s: %s", path, exc)
            return None

    def put(self, key, pyramid: GraphPyramid) -> None:
        if self.enabled:
            save_pyramid(self.path(key), pyramid)
