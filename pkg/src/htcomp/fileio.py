"""Tables, CSV output, the binary weight container and run manifests.

Weight file layout (all integers unsigned 32-bit little-endian)::

    b"HTWT" | version=1 | L | (rows_l, cols_l) * L | payload_1 ... payload_L

Each payload is the row-major ``<f8`` encoding of one layer.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError
from .network import FcnWeights

MAGIC = b"HTWT"
FORMAT_VERSION = 1


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.columns = list(self.columns)
        if not self.columns:
            raise DomainError("a table needs at least one column")
        self.rows = [tuple(r) for r in self.rows]
        for r in self.rows:
            self._check(r)

    def _check(self, row):
        if len(row) != len(self.columns):
            raise DomainError(f"row has {len(row)} cells, table has {len(self.columns)} columns")

    def append(self, row):
        row = tuple(row)
        self._check(row)
        self.rows.append(row)

    def column(self, name) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for r in self.rows:
            buf.write(",".join(_cell(v) for v in r) + "\n")
        return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        # repr gives the shortest string that round-trips
        return repr(float(v))
    s = str(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def _atomic_write(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(table: Table, path):
    _atomic_write(path, table.to_csv().encode("utf-8"))


def read_csv(path) -> Table:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [tuple(r) for r in reader]
    return Table(header, rows)


def encode_weights(net: FcnWeights) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, net.depth)]
    for W in net.layers:
        parts.append(struct.pack("<II", *W.shape))
    for W in net.layers:
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_weights(data: bytes) -> FcnWeights:
    if len(data) < 12:
        raise FormatError("file too short for the header", len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", 0)
    version, L = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    if L < 1:
        raise FormatError("layer count must be positive", 8)
    off = 12
    if len(data) < off + 8 * L:
        raise FormatError("truncated layer shape table", len(data))
    shapes = [struct.unpack_from("<II", data, off + 8 * i) for i in range(L)]
    off += 8 * L
    for i in range(1, L):
        if shapes[i][1] != shapes[i - 1][0]:
            raise FormatError(
                f"shape chain broken: layer {i} has {shapes[i][1]} columns, "
                f"layer {i - 1} has {shapes[i - 1][0]} rows",
                12 + 8 * i,
            )
    expected = off + 8 * sum(r * c for r, c in shapes)
    if len(data) != expected:
        raise FormatError(f"payload length mismatch: expected {expected} bytes, got {len(data)}", min(len(data), expected))
    layers = []
    for r, c in shapes:
        layers.append(np.frombuffer(data, dtype="<f8", count=r * c, offset=off).reshape(r, c).astype(float))
        off += 8 * r * c
    try:
        return FcnWeights(layers)
    except DomainError as exc:
        raise FormatError(str(exc), 12) from exc


def write_weight_file(net: FcnWeights, path):
    _atomic_write(path, encode_weights(net))


def read_weight_file(path) -> FcnWeights:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())


def manifest_path(out_path) -> str:
    return os.fspath(out_path) + ".manifest.json"


def write_manifest(out_path, manifest: dict) -> str:
    path = manifest_path(out_path)
    _atomic_write(path, (json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n").encode("utf-8"))
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dict__"):
        return vars(o)
    return str(o)
