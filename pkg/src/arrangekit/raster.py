"""CPU raycast renderer: instance maps, highlight renders and annotations."""

from __future__ import annotations

import colorsys
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .scene import Scene, pixel_rays

DEFAULT_RESOLUTION = 512
NEUTRAL = (128, 128, 128)
BACKGROUND = (0, 0, 0)
GRID_COLOR = (255, 255, 0)
LABEL_COLOR = (255, 255, 255)
ARROW_COLOR = (255, 0, 0)
_CHUNK = 65536


@dataclass(frozen=True, eq=False)
class InstanceMap:
    index: np.ndarray  # (H, W) int32, 0 = background, k = scene.objects[k-1]
    depth: np.ndarray  # (H, W) float64 ray distance, inf on background

    @property
    def width(self) -> int:
        return self.index.shape[1]

    @property
    def height(self) -> int:
        return self.index.shape[0]

    def mask(self, k: int) -> np.ndarray:
        return self.index == k


@dataclass(frozen=True)
class AnnotationSpec:
    divisions: int = 0
    labels: bool = True
    arrows: tuple = field(default_factory=tuple)  # ((x0, y0), (x1, y1)) pairs

    def __post_init__(self):
        if self.divisions < 0:
            raise ValueError("grid divisions must be >= 0")
        arrows = tuple((tuple(map(float, a)), tuple(map(float, b))) for a, b in self.arrows)
        if not np.all(np.isfinite(np.array(arrows, dtype=float))):
            raise ValueError("arrow endpoints must be finite")
        object.__setattr__(self, "arrows", arrows)


def pixel_centers(width: int, height: int) -> np.ndarray:
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def render_instance_map(scene: Scene, width: int = DEFAULT_RESOLUTION, height: int = DEFAULT_RESOLUTION) -> InstanceMap:
    if width < 1 or height < 1:
        raise ValueError("resolution must be at least 1x1")
    cache = scene.__dict__.setdefault("_imap_cache", {})
    if (width, height) in cache:
        return cache[(width, height)]
    n = width * height
    index = np.zeros(n, dtype=np.int32)
    depth = np.full(n, np.inf)
    if scene.objects:
        geo = scene.geometry
        px = pixel_centers(width, height)
        origin = scene.camera.position
        for s in range(0, n, _CHUNK):
            d = pixel_rays(scene.camera, px[s:s + _CHUNK])
            t, obj, _ = geo.cast(np.broadcast_to(origin, d.shape), d)
            index[s:s + _CHUNK] = obj + 1
            depth[s:s + _CHUNK] = t
    imap = InstanceMap(index.reshape(height, width), depth.reshape(height, width))
    imap.index.setflags(write=False)
    imap.depth.setflags(write=False)
    cache[(width, height)] = imap
    return imap


def palette(k: int) -> tuple[int, int, int]:
    h = (k * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(h, 0.55, 0.9)
    return int(r * 255), int(g * 255), int(b * 255)


def render_highlight(
    scene: Scene,
    names: Sequence[str],
    colors: Sequence[Sequence[int]],
    width: int = DEFAULT_RESOLUTION,
    height: int = DEFAULT_RESOLUTION,
) -> np.ndarray:
    if len(names) != len(colors):
        raise ValueError("names and colors must have the same length")
    ids = [scene.index_of(n) + 1 for n in names]
    imap = render_instance_map(scene, width, height)
    lut = np.zeros((len(scene.objects) + 1, 3), dtype=np.uint8)
    lut[1:] = NEUTRAL
    for k, c in zip(ids, colors):
        lut[k] = np.clip(np.asarray(c, int), 0, 255)
    return lut[imap.index]


def render_color(scene: Scene, width: int = DEFAULT_RESOLUTION, height: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """Flat per-instance palette render, used as the agents' view of the scene."""
    imap = render_instance_map(scene, width, height)
    lut = np.zeros((len(scene.objects) + 1, 3), dtype=np.uint8)
    for k in range(1, len(scene.objects) + 1):
        lut[k] = palette(k)
    return lut[imap.index]


# ---------------------------------------------------------------------------
# annotation
# ---------------------------------------------------------------------------

# 5x7 bitmap glyphs, one string per row, '#' = ink
_GLYPHS = {
    "0": [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    "1": ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    "2": [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    "3": ["#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "],
    "4": ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    "5": ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    "6": ["  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "],
    "7": ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    "8": [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    "9": [" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "],
    ".": ["     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "],
    ",": ["     ", "     ", "     ", "     ", " ##  ", "  #  ", " #   "],
}
_GLYPH_BITS = {ch: np.array([[c == "#" for c in row] for row in rows]) for ch, rows in _GLYPHS.items()}


def _put(img, x, y, color):
    h, w = img.shape[:2]
    x = np.asarray(x)
    y = np.asarray(y)
    ok = (x >= 0) & (x < w) & (y >= 0) & (y < h)
    img[y[ok], x[ok]] = color


def draw_text(img: np.ndarray, text: str, x: int, y: int, color=LABEL_COLOR) -> None:
    for ch in text:
        bits = _GLYPH_BITS.get(ch)
        if bits is not None:
            ys, xs = np.nonzero(bits)
            _put(img, xs + x, ys + y, color)
        x += 6


def _line_pixels(x0, y0, x1, y1):
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    t = np.linspace(0.0, 1.0, max(n, 2))
    return np.rint(x0 + (x1 - x0) * t).astype(int), np.rint(y0 + (y1 - y0) * t).astype(int)


def draw_line(img, x0, y0, x1, y1, color, thickness=1):
    xs, ys = _line_pixels(x0, y0, x1, y1)
    r = thickness // 2
    for dx in range(-r, thickness - r):
        for dy in range(-r, thickness - r):
            _put(img, xs + dx, ys + dy, color)


def draw_dot(img, x, y, radius, color):
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    keep = xx**2 + yy**2 <= radius**2
    _put(img, int(round(x)) + xx[keep], int(round(y)) + yy[keep], color)


def draw_arrow(img, p0, p1, color=ARROW_COLOR, head=12.0):
    h, w = img.shape[:2]
    x0, y0 = p0[0] * w, p0[1] * h
    x1, y1 = p1[0] * w, p1[1] * h
    d = np.hypot(x1 - x0, y1 - y0)
    if d < 1.0:
        draw_dot(img, x1, y1, 4, color)
        return
    draw_line(img, x0, y0, x1, y1, color, thickness=2)
    ux, uy = (x1 - x0) / d, (y1 - y0) / d
    for ang in (0.45, -0.45):
        c, s = np.cos(ang), np.sin(ang)
        bx = -(c * ux - s * uy) * head
        by = -(s * ux + c * uy) * head
        draw_line(img, x1, y1, x1 + bx, y1 + by, color, thickness=2)


def grid_positions(size: int, divisions: int) -> list[int]:
    """Pixel row/column of each interior grid line."""
    return [min(int(i * size / divisions), size - 1) for i in range(1, divisions)]


def annotate(image: np.ndarray, spec: AnnotationSpec, dash: tuple[int, int] = (6, 4)) -> np.ndarray:
    img = np.array(image, dtype=np.uint8, copy=True)
    if img.size == 0:
        raise ValueError("image is empty")
    h, w = img.shape[:2]
    if spec.divisions > 0:
        on, off = dash
        xs_pos = grid_positions(w, spec.divisions)
        ys_pos = grid_positions(h, spec.divisions)
        run_x = np.arange(w)[(np.arange(w) % (on + off)) < on]
        run_y = np.arange(h)[(np.arange(h) % (on + off)) < on]
        for py in ys_pos:
            _put(img, run_x, np.full(len(run_x), py), GRID_COLOR)
        for px in xs_pos:
            _put(img, np.full(len(run_y), px), run_y, GRID_COLOR)
        if spec.labels:
            for i, px in enumerate(xs_pos, start=1):
                for j, py in enumerate(ys_pos, start=1):
                    text = f"{i / spec.divisions:.2f},{j / spec.divisions:.2f}"
                    draw_text(img, text, px + 2, py + 2)
    for a, b in spec.arrows:
        draw_arrow(img, a, b)
    return img


# ---------------------------------------------------------------------------
# file output
# ---------------------------------------------------------------------------


def png_bytes(image: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_png(image: np.ndarray, path) -> None:
    Path(path).write_bytes(png_bytes(image))


def pgm_bytes(imap: InstanceMap) -> bytes:
    maxval = 255 if imap.index.max(initial=0) < 256 else 65535
    header = f"P5\n{imap.width} {imap.height}\n{maxval}\n".encode()
    dtype = np.uint8 if maxval == 255 else ">u2"
    return header + imap.index.astype(dtype).tobytes()


def write_pgm(imap: InstanceMap, path) -> None:
    Path(path).write_bytes(pgm_bytes(imap))


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    maxval = int(parts[2])
    dtype = np.uint8 if maxval < 256 else ">u2"
    return np.frombuffer(parts[3], dtype=dtype).reshape(h, w).astype(np.int32)
