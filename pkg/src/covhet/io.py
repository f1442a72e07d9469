"""On-disk formats: the binary dataset file, JSON reports and CSV tables.

Dataset layout (little-endian)::

    magic      6 bytes  b"CVHET1"
    header     u32 version, u64 n, u32 N, u32 n_res, u32 ctf_count,
               f64 sigma2, u8 has_labels
    ctf table  ctf_count x 5 f64 (defocus um, wavelength A, Cs mm,
               amplitude contrast, pixel size A); all zeros = no CTF
    records    n x [9 f64 rotation (row-major), u32 ctf index,
               i32 label (-1 if absent), q x (f64 re, f64 im)]
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .estimation import Dataset
from .freqbasis import build_disc2
from .imaging import CTFParams

MAGIC = b"CVHET1"
VERSION = 1
_HEADER = struct.Struct("<IQIIIdB")


def record_dtype(q: int) -> np.dtype:
    return np.dtype([("rotation", "<f8", (9,)), ("ctf", "<u4"), ("label", "<i4"), ("coeffs", "<f8", (2 * q,))])


def dataset_to_bytes(d: Dataset) -> bytes:
    has_labels = d.labels is not None
    header = MAGIC + _HEADER.pack(VERSION, d.n, d.N, d.n_res, len(d.ctf_bank), float(d.sigma2), int(has_labels))
    table = np.array([c.astuple() for c in d.ctf_bank], dtype="<f8")
    rec = np.zeros(d.n, dtype=record_dtype(d.disc.q))
    rec["rotation"] = d.rotations.reshape(d.n, 9)
    rec["ctf"] = d.ctf_indices
    rec["label"] = d.labels if has_labels else -1
    rec["coeffs"] = np.ascontiguousarray(d.images).view(np.float64).reshape(d.n, -1)
    return header + table.tobytes() + rec.tobytes()


def dataset_from_bytes(buf: bytes) -> Dataset:
    if buf[: len(MAGIC)] != MAGIC:
        raise DataError("not a dataset file (bad magic)")
    off = len(MAGIC)
    if len(buf) < off + _HEADER.size:
        raise DataError("truncated header")
    version, n, N, n_res, ctf_count, sigma2, has_labels = _HEADER.unpack_from(buf, off)
    if version != VERSION:
        raise DataError(f"unsupported dataset version {version}")
    off += _HEADER.size
    try:
        q = build_disc2(n_res).q
    except ValueError as exc:
        raise DataError(f"bad n_res in header: {exc}") from exc
    dtype = record_dtype(q)
    expected = off + 40 * ctf_count + n * dtype.itemsize
    if len(buf) != expected:
        raise DataError(f"dataset file has {len(buf)} bytes, expected {expected}")
    table = np.frombuffer(buf, dtype="<f8", count=5 * ctf_count, offset=off).reshape(ctf_count, 5)
    off += 40 * ctf_count
    rec = np.frombuffer(buf, dtype=dtype, count=n, offset=off)
    try:
        bank = tuple(CTFParams(*map(float, row)) for row in table)
    except ValueError as exc:
        raise DataError(f"bad CTF table: {exc}") from exc
    images = rec["coeffs"].astype(np.float64).view(complex).reshape(n, q)
    labels = rec["label"].astype(np.int64) if has_labels else None
    return Dataset(
        images=images,
        rotations=rec["rotation"].astype(np.float64).reshape(n, 3, 3),
        ctf_indices=rec["ctf"].astype(np.int64),
        ctf_bank=bank,
        sigma2=sigma2,
        n_res=n_res,
        N=N,
        labels=labels,
    )


def write_dataset(d: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(d))


def read_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


@dataclass
class ResultsReport:
    """Everything a run reports; serializes to JSON without loss."""

    n: int
    n_res: int
    sigma2: float
    eigenvalues: list[float]
    num_classes: int
    gap_ratio: float
    gap_index: int
    cg_residuals: dict[str, list[float]]
    alpha: Optional[list[list[float]]] = None
    labels: Optional[list[int]] = None
    accuracy: Optional[float] = None
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_timings: bool = True) -> dict:
        out = asdict(self)
        if not include_timings:
            out.pop("timings")
        return {k: v for k, v in out.items() if v is not None}

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ResultsReport":
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ResultsReport":
        return cls.from_dict(json.loads(text))


def histogram_rows(values, bins: Optional[int] = None) -> list[tuple[float, int]]:
    """(bin centre, count) pairs with ``ceil(sqrt(n))`` bins by default."""
    values = np.asarray(values, dtype=float)
    if bins is None:
        bins = max(1, int(np.ceil(np.sqrt(values.size))))
    counts, edges = np.histogram(values, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return [(float(c), int(k)) for c, k in zip(centers, counts)]


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def read_labels_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "label" not in reader.fieldnames:
            raise DataError(f"{path}: no 'label' column")
        rows = list(reader)
    try:
        return np.array([int(r["label"]) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
