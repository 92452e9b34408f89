"""File formats: single-cloud text files, XYZ molecular files, JSONL datasets.

Text format: first line "N d", then N lines of d space-separated reals.
Dataset format: JSON lines, one object {"points": [[...], ...]} per cloud.
All permutation mappings written to files are 0-based.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .cloud import PointCloud, as_points
from .errors import ParseError


def read_cloud_text(path) -> PointCloud:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ParseError(f"{path}: empty point-cloud file")
    header = lines[0].split()
    if len(header) != 2:
        raise ParseError(f"{path}: expected header 'N d', got {lines[0]!r}")
    try:
        n, d = int(header[0]), int(header[1])
    except ValueError as exc:
        raise ParseError(f"{path}: bad header {lines[0]!r}") from exc
    if len(lines) - 1 != n:
        raise ParseError(f"{path}: header says {n} points, found {len(lines) - 1}")
    rows = []
    for ln in lines[1:]:
        vals = ln.split()
        if len(vals) != d:
            raise ParseError(f"{path}: expected {d} values per line, got {ln!r}")
        try:
            rows.append([float(v) for v in vals])
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric value in {ln!r}") from exc
    return PointCloud(np.asarray(rows))


def write_cloud_text(path, cloud) -> None:
    pts = as_points(cloud)
    lines = [f"{pts.shape[0]} {pts.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def read_xyz(path, elements: Sequence[str]) -> PointCloud:
    """Read an XYZ molecular file.

    Element symbols are mapped to a one-hot block appended to the 3
    coordinates, in the order given by ``elements``, so d = 3 + len(elements).
    """
    if not elements:
        raise ParseError("an element table is required to read XYZ files")
    index = {sym: k for k, sym in enumerate(elements)}
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise ParseError(f"{path}: truncated XYZ file")
    try:
        n = int(lines[0].split()[0])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: bad atom count line {lines[0]!r}") from exc
    body = lines[2 : 2 + n]
    if len(body) != n:
        raise ParseError(f"{path}: expected {n} atom lines, found {len(body)}")
    rows = []
    for ln in body:
        parts = ln.split()
        if len(parts) < 4:
            raise ParseError(f"{path}: bad atom line {ln!r}")
        sym = parts[0]
        if sym not in index:
            raise ParseError(f"{path}: element {sym!r} not in the element table")
        try:
            coords = [float(v) for v in parts[1:4]]
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric coordinate in {ln!r}") from exc
        onehot = [0.0] * len(elements)
        onehot[index[sym]] = 1.0
        rows.append(coords + onehot)
    return PointCloud(np.asarray(rows))


def read_cloud(path, elements: Sequence[str] | None = None) -> PointCloud:
    """Read a cloud file, dispatching on extension (.xyz vs text format)."""
    if str(path).endswith(".xyz"):
        return read_xyz(path, elements or ())
    return read_cloud_text(path)


def read_dataset(path) -> list[PointCloud]:
    clouds = []
    for lineno, ln in enumerate(Path(path).read_text().splitlines(), start=1):
        ln = ln.strip()
        if not ln:
            continue
        try:
            obj = json.loads(ln)
            clouds.append(PointCloud(np.asarray(obj["points"], dtype=float)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: bad dataset record") from exc
    if not clouds:
        raise ParseError(f"{path}: empty dataset")
    return clouds


def write_dataset(path, clouds) -> None:
    with open(path, "w") as fh:
        for cloud in clouds:
            fh.write(json.dumps({"points": as_points(cloud).tolist()}) + "\n")
