"""Readers and writers: PFM, Middlebury FLO, PPM (P6), PGM (P5), camera JSON, track/match CSV."""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from .camgeo import Camera
from .curation import TrackSet
from .depthalign import MatchSet
from .errors import (
    BadMagic,
    DimensionOverflow,
    DomainError,
    HeaderMismatch,
    InvalidCamera,
    InvalidRotation,
    RowParseError,
    SchemaError,
    TruncatedPayload,
)

FLO_MAGIC = 202021.25
MAX_SIDE = 100_000


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc.strerror}", stage="ingest") from exc


# -- PFM ---------------------------------------------------------------------

_PFM_HEADER = re.compile(rb"^(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def read_pfm(path) -> np.ndarray:
    """Returns float32 ``(H, W)`` for ``Pf`` or ``(H, W, 3)`` for ``PF``, top row first."""
    data = _read_bytes(path)
    if data[:2] not in (b"Pf", b"PF"):
        raise BadMagic(f"{path}: not a PFM file")
    m = _PFM_HEADER.match(data[:256])
    if m is None:
        raise TruncatedPayload(f"{path}: incomplete PFM header")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    if w > MAX_SIDE or h > MAX_SIDE:
        raise DimensionOverflow(f"{path}: {w}x{h}")
    n = w * h * channels
    payload = data[m.end():]
    if len(payload) < 4 * n:
        raise TruncatedPayload(f"{path}: expected {4 * n} payload bytes, got {len(payload)}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype, count=n).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(arr.reshape(shape)).copy()


def write_pfm(path, raster) -> None:
    """Little-endian PFM, rows stored bottom-up."""
    a = np.asarray(raster)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim == 2:
        magic = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {a.shape}")
    h, w = a.shape[:2]
    body = np.ascontiguousarray(np.flipud(a).astype("<f4")).tobytes()
    Path(path).write_bytes(magic + b"\n%d %d\n-1.0\n" % (w, h) + body)


# -- FLO ---------------------------------------------------------------------

def read_flo(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 12:
        raise TruncatedPayload(f"{path}: shorter than the FLO header")
    magic = np.frombuffer(data[:4], "<f4")[0]
    if magic != np.float32(FLO_MAGIC):
        raise BadMagic(f"{path}: bad FLO magic {magic}")
    w, h = (int(x) for x in np.frombuffer(data[4:12], "<i4"))
    if not (0 < w <= MAX_SIDE and 0 < h <= MAX_SIDE):
        raise DimensionOverflow(f"{path}: {w}x{h}")
    if len(data) != 12 + 8 * w * h:
        raise TruncatedPayload(f"{path}: expected {12 + 8 * w * h} bytes, got {len(data)}")
    return np.frombuffer(data[12:], "<f4").reshape(h, w, 2).copy()


def write_flo(path, flow) -> None:
    f = np.asarray(flow)
    if f.ndim != 3 or f.shape[2] != 2:
        raise ValueError(f"flow must be H x W x 2, got {f.shape}")
    h, w = f.shape[:2]
    header = np.array([FLO_MAGIC], "<f4").tobytes() + np.array([w, h], "<i4").tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(f.astype("<f4")).tobytes())


# -- PPM / PGM ------------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    data = _read_bytes(path)
    if data[:2] != magic:
        raise BadMagic(f"{path}: expected {magic.decode()} header")
    pos = 2
    fields = []
    for _ in range(3):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise TruncatedPayload(f"{path}: incomplete header")
        fields.append(m.group(1))
        pos = m.end()
    try:
        w, h, maxval = (int(x) for x in fields)
    except ValueError:
        raise BadMagic(f"{path}: malformed header") from None
    if maxval != 255:
        raise BadMagic(f"{path}: only 8-bit (maxval 255) supported, got {maxval}")
    if w > MAX_SIDE or h > MAX_SIDE:
        raise DimensionOverflow(f"{path}: {w}x{h}")
    pos += 1  # single whitespace before the raster
    n = w * h * channels
    if len(data) - pos < n:
        raise TruncatedPayload(f"{path}: expected {n} raster bytes, got {len(data) - pos}")
    arr = np.frombuffer(data, np.uint8, count=n, offset=pos)
    return arr.reshape((h, w, channels) if channels > 1 else (h, w)).copy()


def _write_pnm(path, arr: np.ndarray, magic: bytes) -> None:
    h, w = arr.shape[:2]
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes())


def to_uint8(img) -> np.ndarray:
    a = np.asarray(img)
    if a.dtype == np.uint8:
        return a
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def read_ppm(path) -> np.ndarray:
    """8-bit RGB as uint8 ``(H, W, 3)``."""
    return _read_pnm(path, b"P6", 3)


def write_ppm(path, img) -> None:
    """Accepts uint8 or floats in [0, 1] (quantised to nearest level)."""
    a = to_uint8(img)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"PPM needs H x W x 3, got {a.shape}")
    _write_pnm(path, a, b"P6")


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5", 1)


def write_pgm(path, img) -> None:
    a = np.asarray(img)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    a = to_uint8(a)
    if a.ndim != 2:
        raise ValueError(f"PGM needs H x W, got {a.shape}")
    _write_pnm(path, a, b"P5")


def load_image(path) -> np.ndarray:
    """PPM as float64 in [0, 1]."""
    return read_ppm(path).astype(np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    return read_pgm(path) >= 128


def write_mask(path, mask) -> None:
    write_pgm(path, np.asarray(mask, dtype=bool))


# -- cameras ---------------------------------------------------------------------

def _number_list(value, n: int, pointer: str) -> list[float]:
    if not isinstance(value, list) or len(value) != n:
        raise SchemaError(pointer, f"expected a list of {n} numbers")
    for i, x in enumerate(value):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise SchemaError(f"{pointer}/{i}", "expected a finite number")
    return [float(x) for x in value]


def cameras_from_json(data) -> list[Camera]:
    if not isinstance(data, dict) or "views" not in data:
        raise SchemaError("/views", "missing")
    views = data["views"]
    if not isinstance(views, list):
        raise SchemaError("/views", "expected a list")
    cams = []
    for i, v in enumerate(views):
        if not isinstance(v, dict):
            raise SchemaError(f"/views/{i}", "expected an object")
        for key in ("K", "T"):
            if key not in v:
                raise SchemaError(f"/views/{i}/{key}", "missing")
        K = _number_list(v["K"], 9, f"/views/{i}/K")
        T = _number_list(v["T"], 16, f"/views/{i}/T")
        try:
            cams.append(Camera(np.array(K).reshape(3, 3), np.array(T).reshape(4, 4)))
        except InvalidRotation as exc:
            raise InvalidRotation(f"/views/{i}/T: {exc}") from None
        except InvalidCamera as exc:
            raise SchemaError(f"/views/{i}", str(exc)) from None
    return cams


def cameras_to_json(cams) -> dict:
    return {"views": [{"K": c.K.ravel().tolist(), "T": c.T.ravel().tolist()} for c in cams]}


def read_camera_json(path) -> list[Camera]:
    try:
        data = json.loads(_read_bytes(path))
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from None
    return cameras_from_json(data)


def write_camera_json(path, cams) -> None:
    Path(path).write_text(json.dumps(cameras_to_json(cams), indent=2))


# -- CSV -------------------------------------------------------------------------

TRACK_HEADER = ["track_id", "frame", "x", "y", "visible"]
MATCH_HEADER = ["src_x", "src_y", "anchor_view", "dst_x", "dst_y", "src_depth"]


def _csv_rows(path, header: list[str]):
    text = _read_bytes(path).decode("utf-8")
    reader = csv.reader(text.splitlines())
    first = next(reader, None)
    if first is None or [c.strip() for c in first] != header:
        raise HeaderMismatch(f"{path}: expected header {','.join(header)}")
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise RowParseError(line, f"expected {len(header)} fields, got {len(row)}")
        yield line, [c.strip() for c in row]


def _int(s: str, line: int, name: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise RowParseError(line, f"{name}={s!r} is not an integer") from None


def _float(s: str, line: int, name: str) -> float:
    try:
        x = float(s)
    except ValueError:
        raise RowParseError(line, f"{name}={s!r} is not a number") from None
    if not math.isfinite(x):
        raise RowParseError(line, f"{name} is not finite")
    return x


def read_tracks_csv(path) -> TrackSet:
    entries: dict[int, dict[int, tuple[float, float, bool]]] = {}
    for line, (tid, frame, x, y, vis) in _csv_rows(path, TRACK_HEADER):
        tid_i = _int(tid, line, "track_id")
        frame_i = _int(frame, line, "frame")
        if frame_i < 0:
            raise RowParseError(line, "frame must be >= 0")
        xf, yf = _float(x, line, "x"), _float(y, line, "y")
        if vis not in ("0", "1"):
            raise RowParseError(line, f"visible={vis!r} must be 0 or 1")
        track = entries.setdefault(tid_i, {})
        if frame_i in track:
            raise RowParseError(line, f"duplicate (track_id={tid_i}, frame={frame_i})")
        track[frame_i] = (xf, yf, vis == "1")
    ids = list(entries)
    n_frames = 1 + max((max(t) for t in entries.values()), default=-1)
    pos = np.zeros((len(ids), n_frames, 2))
    vis = np.zeros((len(ids), n_frames), dtype=bool)
    for i, tid in enumerate(ids):
        for f, (x, y, v) in entries[tid].items():
            pos[i, f] = (x, y)
            vis[i, f] = v
    return TrackSet(ids, pos, vis)


def write_tracks_csv(path, tracks: TrackSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACK_HEADER)
        for i, tid in enumerate(tracks.ids):
            for f in range(tracks.positions.shape[1]):
                x, y = tracks.positions[i, f]
                w.writerow([tid, f, repr(float(x)), repr(float(y)), int(tracks.visible[i, f])])


def read_matches_csv(path) -> MatchSet:
    cols = [[] for _ in MATCH_HEADER]
    for line, row in _csv_rows(path, MATCH_HEADER):
        vals = [_float(row[0], line, "src_x"), _float(row[1], line, "src_y"),
                _int(row[2], line, "anchor_view"), _float(row[3], line, "dst_x"),
                _float(row[4], line, "dst_y"), _float(row[5], line, "src_depth")]
        for c, v in zip(cols, vals):
            c.append(v)
    return MatchSet(np.column_stack([cols[0], cols[1]]) if cols[0] else np.zeros((0, 2)),
                    np.array(cols[2], dtype=np.int64),
                    np.column_stack([cols[3], cols[4]]) if cols[3] else np.zeros((0, 2)),
                    np.array(cols[5]))


def write_matches_csv(path, matches: MatchSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MATCH_HEADER)
        for (sx, sy), view, (dx, dy), d in zip(matches.src_px, matches.anchor_view,
                                               matches.dst_px, matches.src_depth):
            w.writerow([repr(float(sx)), repr(float(sy)), int(view), repr(float(dx)),
                        repr(float(dy)), repr(float(d))])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
