"""Dataset schema, metadata/descriptor file IO, and query reachability filtering.

A dataset is an ordered list of image records plus a row-aligned float32
descriptor matrix. Metadata travels as CSV (header
``image_id,sequence_id,frame_index,lat,lon``), descriptors as EMB1 binary:
4-byte magic ``EMB1``, u32-le row count, u32-le dim, then rows*dim float32-le
values in row-major order.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .spatial import LatLonGrid

METADATA_HEADER = ["image_id", "sequence_id", "frame_index", "lat", "lon"]

EMB1_MAGIC = b"EMB1"
_EMB1_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class ImageRecord:
    """One image's identity, sequence membership, frame position, and GPS fix."""

    image_id: str
    sequence_id: str
    frame_index: int
    lat: float
    lon: float


@dataclass
class SplitStats:
    n_sequences: int
    n_images: int


@dataclass
class Dataset:
    """Row-aligned records + descriptors for one split (support or query)."""

    records: list[ImageRecord]
    descriptors: np.ndarray
    role: str = "support"

    def __post_init__(self):
        if self.role not in ("support", "query"):
            raise InputError(f"role must be 'support' or 'query', got {self.role!r}")
        check_descriptors(self.descriptors)
        if len(self.records) != self.descriptors.shape[0]:
            raise InputError(
                f"{len(self.records)} records but {self.descriptors.shape[0]} descriptor rows")

    @property
    def n_images(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int:
        return int(self.descriptors.shape[1])

    def stats(self) -> SplitStats:
        return SplitStats(
            n_sequences=len({r.sequence_id for r in self.records}),
            n_images=len(self.records),
        )

    def lats(self) -> np.ndarray:
        return np.array([r.lat for r in self.records], dtype=np.float64)

    def lons(self) -> np.ndarray:
        return np.array([r.lon for r in self.records], dtype=np.float64)

    def with_descriptors(self, descriptors: np.ndarray) -> "Dataset":
        """Same records with a replacement descriptor matrix (row-aligned)."""
        return Dataset(records=self.records, descriptors=descriptors, role=self.role)


def check_descriptors(arr: np.ndarray) -> None:
    """Validate a descriptor matrix: 2-D, floating, all values finite."""
    if not isinstance(arr, np.ndarray) or arr.ndim != 2:
        raise InputError("descriptors must be a 2-D array")
    if not np.issubdtype(arr.dtype, np.floating):
        raise InputError(f"descriptors must be floating point, got dtype {arr.dtype}")
    if arr.size and not np.isfinite(arr).all():
        raise InputError("descriptors contain non-finite values")


def validate_records(records: Sequence[ImageRecord]) -> None:
    """Enforce record invariants: unique ids, unique and strictly increasing
    (sequence_id, frame_index) in listed order, GPS ranges."""
    seen_ids: set[str] = set()
    last_frame: dict[str, int] = {}
    for rec in records:
        if rec.image_id in seen_ids:
            raise InputError(f"duplicate image_id {rec.image_id!r}")
        seen_ids.add(rec.image_id)
        if rec.frame_index < 0:
            raise InputError(f"image {rec.image_id!r}: negative frame_index {rec.frame_index}")
        prev = last_frame.get(rec.sequence_id)
        if prev is not None and rec.frame_index <= prev:
            raise InputError(
                f"sequence {rec.sequence_id!r}: frame_index {rec.frame_index} "
                f"not strictly increasing after {prev}")
        last_frame[rec.sequence_id] = rec.frame_index
        if not (-90.0 <= rec.lat <= 90.0):
            raise InputError(f"image {rec.image_id!r}: latitude {rec.lat} outside [-90, 90]")
        if not (-180.0 <= rec.lon <= 180.0):
            raise InputError(f"image {rec.image_id!r}: longitude {rec.lon} outside [-180, 180]")


def load_metadata(path: str | Path) -> list[ImageRecord]:
    """Read image records from a metadata CSV, in file order.

    Errors name the offending line (1-based, header is line 1).
    """
    path = Path(path)
    records: list[ImageRecord] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, expected header "
                             f"{','.join(METADATA_HEADER)}") from None
        if header != METADATA_HEADER:
            raise InputError(f"{path}: bad header {header!r}, expected {METADATA_HEADER!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise InputError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            image_id, sequence_id, frame_s, lat_s, lon_s = row
            try:
                frame_index = int(frame_s)
                lat = float(lat_s)
                lon = float(lon_s)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            records.append(ImageRecord(image_id, sequence_id, frame_index, lat, lon))
    try:
        validate_records(records)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None
    return records


def write_metadata(path: str | Path, records: Iterable[ImageRecord]) -> None:
    """Write records as metadata CSV (LF line endings, lossless float repr)."""
    with Path(path).open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METADATA_HEADER)
        for r in records:
            writer.writerow([r.image_id, r.sequence_id, r.frame_index,
                             repr(float(r.lat)), repr(float(r.lon))])


def load_descriptors(path: str | Path, expected_rows: int | None) -> np.ndarray:
    """Decode an EMB1 file into a float32 matrix, checking the row count."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _EMB1_HEADER.size:
        raise InputError(f"{path}: file too short for an EMB1 header")
    magic, rows, dim = _EMB1_HEADER.unpack_from(blob)
    if magic != EMB1_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}, expected {EMB1_MAGIC!r}")
    payload = blob[_EMB1_HEADER.size:]
    expected_bytes = rows * dim * 4
    if len(payload) != expected_bytes:
        raise InputError(f"{path}: payload holds {len(payload) // 4} floats, "
                         f"header promises {rows * dim}")
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
    if expected_rows is not None and rows != expected_rows:
        raise InputError(f"{path}: {rows} descriptor rows, expected {expected_rows}")
    if data.size and not np.isfinite(data).all():
        bad = int(np.count_nonzero(~np.isfinite(data)))
        raise InputError(f"{path}: {bad} non-finite descriptor values")
    return data


def write_descriptors(path: str | Path, descriptors: np.ndarray) -> None:
    """Encode a descriptor matrix to EMB1 (float32 little-endian, row-major)."""
    check_descriptors(descriptors)
    rows, dim = descriptors.shape
    with Path(path).open("wb") as fh:
        fh.write(_EMB1_HEADER.pack(EMB1_MAGIC, rows, dim))
        fh.write(np.ascontiguousarray(descriptors, dtype="<f4").tobytes())


def load_dataset(metadata_path: str | Path, descriptors_path: str | Path,
                 role: str) -> Dataset:
    records = load_metadata(metadata_path)
    descriptors = load_descriptors(descriptors_path, expected_rows=len(records))
    return Dataset(records=records, descriptors=descriptors, role=role)


def filter_reachable_queries(query: Dataset, support: Dataset,
                             radius_m: float = 25.0) -> Dataset:
    """Keep only query records within radius_m (great-circle) of some support
    record; descriptor rows follow in lockstep, order preserved."""
    if radius_m <= 0.0:
        raise InputError(f"radius must be positive, got {radius_m}")
    if support.n_images == 0:
        raise InputError("cannot filter queries against an empty support set")
    if query.n_images == 0:
        return Dataset(records=[], descriptors=query.descriptors[:0], role=query.role)
    grid = LatLonGrid(support.lats(), support.lons(), cell_m=radius_m)
    nearest = grid.min_distance_within_reach_m(query.lats(), query.lons())
    keep = nearest <= radius_m
    records = [r for r, k in zip(query.records, keep) if k]
    return Dataset(records=records, descriptors=query.descriptors[keep], role=query.role)
