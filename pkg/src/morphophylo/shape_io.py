"""Specimen images -> binary masks -> one resampled outline per specimen."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ContractError, InputError

REC601 = (0.299, 0.587, 0.114)
IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass
class GrayImage:
    data: np.ndarray  # (height, width) uint8

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class BinaryMask:
    bits: np.ndarray  # (height, width) bool, True = foreground

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass
class Contour:
    """Closed polyline of (x, y) points; the last point connects to the first."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ContractError("a contour needs at least 3 (x, y) points")
        if not np.all(np.isfinite(pts)):
            raise ContractError("non-finite contour coordinates")
        self.points = pts

    def __len__(self):
        return len(self.points)

    def signed_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def perimeter(self) -> float:
        seg = np.diff(np.vstack([self.points, self.points[:1]]), axis=0)
        return float(np.hypot(seg[:, 0], seg[:, 1]).sum())


def rec601_luminance(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.float64)
    lum = REC601[0] * rgb[..., 0] + REC601[1] * rgb[..., 1] + REC601[2] * rgb[..., 2]
    return np.floor(lum + 0.5).clip(0, 255).astype(np.uint8)


def _read_pgm(raw: bytes, path) -> np.ndarray:
    kind = raw[:2]
    tokens: list[bytes] = []
    pos = 2
    # header: width, height, maxval, separated by whitespace and # comments
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise InputError(f"{path}: truncated PGM header")
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(raw[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise InputError(f"{path}: malformed PGM header") from None
    if width <= 0 or height <= 0:
        raise InputError(f"{path}: zero-dimension image")
    if not 0 < maxval < 65536:
        raise InputError(f"{path}: invalid PGM maxval {maxval}")
    count = width * height
    if kind == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = raw[pos:pos + count * dtype.itemsize]
        if len(body) < count * dtype.itemsize:
            raise InputError(f"{path}: truncated PGM data")
        values = np.frombuffer(body, dtype=dtype).astype(np.float64)
    else:
        try:
            values = np.array([int(t) for t in raw[pos:].split()[:count]], dtype=np.float64)
        except ValueError:
            raise InputError(f"{path}: malformed PGM data") from None
        if values.size < count:
            raise InputError(f"{path}: truncated PGM data")
    if maxval != 255:
        values = np.floor(values * 255.0 / maxval + 0.5)
    return values.clip(0, 255).astype(np.uint8).reshape(height, width)


def load_grayscale(path) -> GrayImage:
    """Read a PNG or PGM (P2/P5) file; colour is reduced with Rec. 601 weights."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: unreadable file ({exc.strerror})") from None
    if not raw:
        raise InputError(f"{path}: unreadable file (empty)")
    if raw[:2] in (b"P2", b"P5"):
        return GrayImage(_read_pgm(raw, path))
    if not raw.startswith(b"\x89PNG\r\n\x1a\n"):
        raise InputError(f"{path}: unsupported format (PNG or PGM expected)")
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise InputError(f"{path}: zero-dimension image")
            if im.mode == "L":
                data = np.asarray(im, dtype=np.uint8)
            elif im.mode in ("I;16", "I;16B", "I"):
                data = np.floor(np.asarray(im, dtype=np.float64) * 255.0 / 65535.0 + 0.5).astype(np.uint8)
            elif im.mode == "LA":
                data = np.asarray(im.getchannel("L"), dtype=np.uint8)
            else:
                data = rec601_luminance(np.asarray(im.convert("RGB")))
    except InputError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types on bad files
        raise InputError(f"{path}: unreadable file ({exc})") from None
    return GrayImage(np.ascontiguousarray(data))


def binarize_mask(img: GrayImage, threshold: float = 250) -> BinaryMask:
    """3x3 box blur with replicated borders, then foreground iff blurred < threshold."""
    if img.width < 3 or img.height < 3:
        raise ContractError("image smaller than the 3x3 blur kernel")
    padded = np.pad(img.data.astype(np.float64), 1, mode="edge")
    h, w = img.data.shape
    total = np.zeros((h, w))
    for dr in range(3):
        for dc in range(3):
            total += padded[dr:dr + h, dc:dc + w]
    return BinaryMask(total / 9.0 < threshold)


# clockwise on screen (rows grow downward), starting west
_DIRS = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def _moore_trace(fg: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Outer boundary of the component containing `start` (its top-left pixel).

    `fg` must carry a one-pixel background border so neighbours never fall
    outside the array.
    """
    r0, c0 = start
    back = 0  # west of the start pixel is background by choice of start
    path = [start]
    first_move = None
    r, c = r0, c0
    while True:
        nxt = None
        for k in range(1, 9):
            d = (back + k) % 8
            rr, cc = r + _DIRS[d][0], c + _DIRS[d][1]
            if fg[rr, cc]:
                nxt = (rr, cc)
                prev = (back + k - 1) % 8
                break
        if nxt is None:
            return path  # isolated pixel
        if (r, c) == (r0, c0):
            if first_move is None:
                first_move = nxt
            elif nxt == first_move:
                return path[:-1]
        # new backtrack: the background neighbour examined just before nxt,
        # expressed as a direction from nxt
        br, bc = r + _DIRS[prev][0] - nxt[0], c + _DIRS[prev][1] - nxt[1]
        back = _DIRS.index((br, bc))
        r, c = nxt
        path.append(nxt)


def _orient(points: np.ndarray) -> np.ndarray:
    c = Contour(points)
    if c.signed_area() < 0:
        return np.vstack([points[:1], points[:0:-1]])
    return points


def extract_contours(mask: BinaryMask) -> list[Contour]:
    """One outer contour per 8-connected foreground component, holes ignored.

    Contours are ordered by each component's first pixel in raster order.
    Components too small to enclose any area are dropped.
    """
    if not mask.bits.any():
        raise ContractError("no foreground")
    labels, count = ndimage.label(mask.bits, structure=np.ones((3, 3), dtype=bool))
    padded = np.pad(labels, 1)
    flat = labels.ravel()
    first = {}
    for idx in np.flatnonzero(flat):
        lab = int(flat[idx])
        if lab not in first:
            first[lab] = idx
            if len(first) == count:
                break
    contours = []
    for lab, idx in sorted(first.items(), key=lambda kv: kv[1]):
        r, c = divmod(int(idx), mask.width)
        pix = _moore_trace(padded == lab, (r + 1, c + 1))
        if len(pix) < 3:
            continue
        pts = np.array([(cc - 1, rr - 1) for rr, cc in pix], dtype=np.float64)
        if abs(Contour(pts).signed_area()) <= 0:
            continue
        contours.append(Contour(_orient(pts)))
    if not contours:
        raise ContractError("no contour with at least 3 points and nonzero area")
    return contours


def largest_contour(contours: list[Contour]) -> Contour:
    if not contours:
        raise ContractError("empty contour list")
    best = contours[0]
    best_area = abs(best.signed_area())
    for c in contours[1:]:
        area = abs(c.signed_area())
        if area > best_area:
            best, best_area = c, area
    return best


def resample_contour(c: Contour, n_points: int = 1024) -> Contour:
    """`n_points` points equally spaced by arc length, starting at the first point."""
    if n_points < 3:
        raise ContractError("resampling needs at least 3 points")
    pts = np.vstack([c.points, c.points[:1]])
    seg = np.hypot(*np.diff(pts, axis=0).T)
    keep = np.concatenate([[True], seg > 0])
    pts = pts[keep]
    s = np.concatenate([[0.0], np.cumsum(seg[seg > 0])])
    total = s[-1]
    if total <= 0:
        raise ContractError("zero-perimeter contour")
    t = np.arange(n_points) * (total / n_points)
    return Contour(np.column_stack([np.interp(t, s, pts[:, 0]), np.interp(t, s, pts[:, 1])]))


def outline_from_image(img: GrayImage, threshold: float = 250, n_points: int = 1024) -> Contour:
    return resample_contour(largest_contour(extract_contours(binarize_mask(img, threshold))), n_points)


CONTOUR_HEADER = "# contour v1 n="


def write_contour(c: Contour, path) -> None:
    lines = [f"{CONTOUR_HEADER}{len(c)}"]
    lines += [f"{x!r},{y!r}" for x, y in c.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_contour(path) -> Contour:
    try:
        lines = Path(path).read_text().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: unreadable contour file ({exc})") from None
    if not lines or not lines[0].startswith(CONTOUR_HEADER):
        raise InputError(f"{path}: missing '# contour v1' header")
    try:
        n = int(lines[0][len(CONTOUR_HEADER):])
        pts = [tuple(float(v) for v in ln.split(",")) for ln in lines[1:] if ln.strip()]
    except ValueError:
        raise InputError(f"{path}: malformed contour file") from None
    if len(pts) != n or any(len(p) != 2 for p in pts):
        raise InputError(f"{path}: header says {n} points, found {len(pts)}")
    try:
        return Contour(np.array(pts))
    except ContractError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_mask_png(mask: BinaryMask, path) -> None:
    """Foreground black on a white background, like the source segmentations."""
    Image.fromarray(np.where(mask.bits, 0, 255).astype(np.uint8), mode="L").save(path)


def iter_dataset(root, suffixes=IMAGE_SUFFIXES):
    """Yield (path, species, specimen) for `<root>/<split>/<species>/<file>`."""
    root = Path(root)
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in suffixes):
        yield path, path.parent.name, path.stem
