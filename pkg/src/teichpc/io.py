"""File IO: xyz / ascii-ply / csv clouds plus boundary, corner and landmark
sidecar files.

Sidecar conventions for an input ``dir/name.xyz``:
  dir/name.boundary       one boundary index per line, cycle order
  dir/name.corners        four indices on one line (whitespace separated)
  dir/name.landmarks.csv  rows ``index,u,v`` (targets), ``index_src,index_dst``
                          (correspondences) or bare ``index`` (feature points)
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import ParseError

__all__ = ["load_cloud", "save_cloud", "load_landmarks", "load_boundary"]

_FORMATS = ("xyz", "ply-ascii", "csv")


def _sniff_format(path: Path) -> str:
    suf = path.suffix.lower()
    if suf == ".xyz" or suf == ".txt":
        return "xyz"
    if suf == ".ply":
        return "ply-ascii"
    if suf == ".csv":
        return "csv"
    raise ParseError(f"cannot infer format from suffix {suf!r}", path=path)


def _parse_rows(lines, path, sep=None):
    pts, width = [], None
    for ln, raw in lines:
        parts = raw.split(sep) if sep else raw.split()
        try:
            row = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"bad coordinate: {exc}", path=path, line=ln) from None
        if width is None:
            width = len(row)
            if width not in (2, 3):
                raise ParseError(f"expected 2 or 3 coordinates, got {width}",
                                 path=path, line=ln)
        elif len(row) != width:
            raise ParseError(f"inconsistent column count ({len(row)} vs {width})",
                             path=path, line=ln)
        pts.append(row)
    return np.asarray(pts, dtype=np.float64)


def _read_xyz(path: Path) -> np.ndarray:
    lines = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            lines.append((ln, s))
    return _parse_rows(lines, path)


def _read_csv_points(path: Path) -> np.ndarray:
    lines = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            if ln == len(lines) + 1 and any(c.isalpha() for c in s):
                continue  # header row
            lines.append((ln, s))
    return _parse_rows(lines, path, sep=",")


def _read_ply_ascii(path: Path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing ply magic", path=path, line=1)
    nvert, props, in_vertex, fmt_ok = None, [], False, False
    body_at = None
    for ln, raw in enumerate(lines[1:], start=2):
        s = raw.strip()
        if s.startswith("format"):
            if "ascii" not in s:
                raise ParseError("only ascii ply is supported", path=path, line=ln)
            fmt_ok = True
        elif s.startswith("element"):
            parts = s.split()
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                nvert = int(parts[2])
        elif s.startswith("property") and in_vertex:
            props.append(s.split()[-1])
        elif s == "end_header":
            body_at = ln
            break
    if not fmt_ok or nvert is None or body_at is None:
        raise ParseError("incomplete ply header", path=path)
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise ParseError("vertex element lacks x/y/z properties", path=path) from None
    pts = np.empty((nvert, 3))
    for i in range(nvert):
        ln = body_at + 1 + i
        if ln > len(lines):
            raise ParseError("vertex list truncated", path=path, line=len(lines))
        parts = lines[ln - 1].split()
        try:
            pts[i] = [float(parts[c]) for c in cols]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad vertex line: {exc}", path=path, line=ln) from None
    return pts


def load_boundary(path) -> np.ndarray:
    path = Path(path)
    out = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            try:
                out.append(int(s))
            except ValueError:
                raise ParseError("boundary sidecar expects one integer per line",
                                 path=path, line=ln) from None
    return np.asarray(out, dtype=np.int64)


def load_corners(path) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        toks = fh.read().split()
    try:
        vals = [int(t) for t in toks]
    except ValueError:
        raise ParseError("corners sidecar expects 4 integers", path=path) from None
    if len(vals) != 4:
        raise ParseError(f"corners sidecar expects 4 integers, got {len(vals)}", path=path)
    return np.asarray(vals, dtype=np.int64)


def load_landmarks(path):
    """Parse a landmark csv. Returns (mode, payload) with mode one of
    'targets' ([(index, (u, v)), ...]), 'pairs' ([(i, j), ...]) or
    'features' ([index, ...])."""
    path = Path(path)
    rows = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            if not rows and any(c.isalpha() for c in s):
                continue
            parts = [p.strip() for p in s.split(",")]
            rows.append((ln, parts))
    if not rows:
        raise ParseError("empty landmark file", path=path)
    width = len(rows[0][1])
    for ln, parts in rows:
        if len(parts) != width:
            raise ParseError("inconsistent landmark column count", path=path, line=ln)
    try:
        if width == 3:
            return "targets", [(int(p[0]), (float(p[1]), float(p[2]))) for _, p in rows]
        if width == 2:
            return "pairs", [(int(p[0]), int(p[1])) for _, p in rows]
        if width == 1:
            return "features", [int(p[0]) for _, p in rows]
    except ValueError as exc:
        raise ParseError(f"bad landmark value: {exc}", path=path) from None
    raise ParseError(f"landmark rows must have 1-3 columns, got {width}", path=path)


def load_cloud(path, format: str | None = None, *, boundary_path=None,
               landmarks_path=None, corners_path=None, min_points: int = 10) -> PointCloud:
    """Load a cloud plus any sidecar annotations found next to it."""
    path = Path(path)
    if not path.exists():
        raise ParseError("file not found", path=path)
    fmt = format or _sniff_format(path)
    if fmt not in _FORMATS:
        raise ParseError(f"unknown format {fmt!r} (want one of {_FORMATS})", path=path)
    if fmt == "xyz":
        pts = _read_xyz(path)
    elif fmt == "csv":
        pts = _read_csv_points(path)
    else:
        pts = _read_ply_ascii(path)
    if pts.shape[0] < min_points:
        raise ParseError(f"need at least {min_points} points, got {pts.shape[0]}", path=path)

    def sidecar(explicit, name):
        if explicit is not None:
            return Path(explicit)
        cand = path.parent / name
        return cand if cand.exists() else None

    stem = path.stem
    bpath = sidecar(boundary_path, f"{stem}.boundary")
    cpath = sidecar(corners_path, f"{stem}.corners")
    lpath = sidecar(landmarks_path, f"{stem}.landmarks.csv")

    boundary = load_boundary(bpath) if bpath else None
    corners = load_corners(cpath) if cpath else None
    landmarks = ()
    if lpath:
        mode, payload = load_landmarks(lpath)
        if mode == "targets":
            landmarks = tuple(payload)
        elif mode == "features":
            landmarks = tuple((i, None) for i in payload)
        else:
            raise ParseError("pairwise landmark files apply to registration "
                             "commands, not single clouds", path=lpath)
    return PointCloud(points=pts, boundary=boundary, corners=corners,
                      landmarks=landmarks)


def save_cloud(cloud: PointCloud, path, format: str | None = None) -> None:
    """Write coordinates with 17 significant digits (bit-exact round trip)."""
    path = Path(path)
    fmt = format or _sniff_format(path)
    if fmt == "ply-ascii":
        raise ParseError("ply output is not supported; use xyz or csv", path=path)
    sep = "," if fmt == "csv" else " "
    with open(path, "w") as fh:
        if fmt == "csv":
            fh.write(",".join("xyz"[: cloud.dim]) + "\n")
        for row in cloud.points:
            fh.write(sep.join(f"{v:.17g}" for v in row) + "\n")
