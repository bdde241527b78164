"""
Static bird's-eye-view figures of boxes on the ground plane.

The SVG output is the primary figure: one ``<polygon>`` per box footprint,
ground truth drawn with stroke class ``gt`` and detections with stroke class
``det``, plus a short heading tick per box. An optional coverage layer shades
the grid columns seen by at least one view. Output bytes depend only on the
input, so figures can be diffed between runs.

Orientation: world +x (forward) points up the page and world +y (left)
points to the left of the page.

A raster PNG of the same figure can be produced with Pillow.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from src.core.errors import ValidationError
from src.core.geometry import Box3D, box_corners
from src.core.suppression import Detection
from src.core.voxelgrid import VoxelGridSpec

logger = logging.getLogger(__name__)

GT_CLASS = "gt"
DET_CLASS = "det"
COVERAGE_CLASS = "coverage"

GT_COLOR = (44, 160, 44)
DET_COLOR = (214, 39, 40)
COVERAGE_COLOR = (31, 119, 180)

STYLE = (
    f".{GT_CLASS}{{fill:none;stroke:#2ca02c;stroke-width:2}}"
    f".{DET_CLASS}{{fill:none;stroke:#d62728;stroke-width:1.5;stroke-dasharray:4 2}}"
    f".{COVERAGE_CLASS}{{fill:#1f77b4;stroke:none}}"
)

DEFAULT_PIXELS_PER_METER = 10.0
DEFAULT_MARGIN = 1.0


@dataclass(frozen=True)
class BevFrame:
    """
    World-to-page mapping of a BEV figure.

    Attributes:
        x_min, x_max, y_min, y_max (float): Ground-plane window in meters
        scale (float): Pixels per meter
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    scale: float = DEFAULT_PIXELS_PER_METER

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValidationError(f"Empty BEV window x=[{self.x_min}, {self.x_max}] y=[{self.y_min}, {self.y_max}]")
        if not self.scale > 0:
            raise ValidationError(f"Scale must be positive, got {self.scale}")

    @property
    def width(self) -> int:
        return int(round((self.y_max - self.y_min) * self.scale))

    @property
    def height(self) -> int:
        return int(round((self.x_max - self.x_min) * self.scale))

    def to_page(self, x: float, y: float) -> Tuple[float, float]:
        return ((self.y_max - y) * self.scale, (self.x_max - x) * self.scale)

    @classmethod
    def from_grid(cls, spec: VoxelGridSpec, scale: float = DEFAULT_PIXELS_PER_METER) -> "BevFrame":
        return cls(spec.x_min, spec.x_max, spec.y_min, spec.y_max, scale)

    @classmethod
    def fit(
        cls,
        boxes: Sequence[Box3D],
        margin: float = DEFAULT_MARGIN,
        scale: float = DEFAULT_PIXELS_PER_METER
    ) -> "BevFrame":
        """Smallest window holding every footprint plus ``margin`` meters."""
        if not boxes:
            return cls(-10.0, 10.0, -10.0, 10.0, scale)
        corners = np.concatenate([box_corners(b)[:4, :2] for b in boxes])
        lo = corners.min(axis=0) - margin
        hi = corners.max(axis=0) + margin
        return cls(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]), scale)


def _fmt(v: float) -> str:
    text = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if text == "-0" else text


def _footprint(frame: BevFrame, box: Box3D) -> List[Tuple[float, float]]:
    return [frame.to_page(float(x), float(y)) for x, y in box_corners(box)[:4, :2]]


def _heading(frame: BevFrame, box: Box3D) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    corners = box_corners(box)
    front = 0.5 * (corners[0, :2] + corners[3, :2])
    return frame.to_page(box.x, box.y), frame.to_page(float(front[0]), float(front[1]))


def _coverage_cells(
    frame: BevFrame,
    spec: VoxelGridSpec,
    coverage: np.ndarray
) -> List[Tuple[float, float, float, float, float]]:
    """Page rectangles (u, v, w, h, opacity) of covered grid columns, ix-major order."""
    if coverage.shape != (spec.nx, spec.ny):
        raise ValidationError(f"Coverage shape {coverage.shape} does not match grid {(spec.nx, spec.ny)}")
    peak = float(coverage.max()) if coverage.size else 0.0
    cells = []
    if peak <= 0:
        return cells
    side = spec.s * frame.scale
    for ix, iy in zip(*np.nonzero(coverage)):
        x_hi = spec.x_min + (ix + 1) * spec.s
        y_hi = spec.y_min + (iy + 1) * spec.s
        u, v = frame.to_page(x_hi, y_hi)
        cells.append((u, v, side, side, 0.15 + 0.45 * float(coverage[ix, iy]) / peak))
    return cells


def render_bev_svg(
    gts: Sequence[Box3D] = (),
    dets: Sequence[Detection] = (),
    frame: Optional[BevFrame] = None,
    spec: Optional[VoxelGridSpec] = None,
    coverage: Optional[np.ndarray] = None,
    title: str = ""
) -> str:
    """
    Render ground truth and detections as an SVG document.

    Args:
        gts: Ground-truth boxes, drawn with class ``gt``
        dets: Detections, drawn with class ``det`` and their score in a tooltip
        frame: Page window; fitted to the boxes when omitted
        spec: Grid the coverage array belongs to
        coverage: Per-column visibility counts (see ``coverage_bev``)
        title: Optional figure title

    Returns:
        str: SVG document
    """
    if frame is None:
        frame = BevFrame.fit(list(gts) + [d.box for d in dets])
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{frame.width}" height="{frame.height}" '
        f'viewBox="0 0 {frame.width} {frame.height}">',
        f"<style>{STYLE}</style>",
    ]
    if title:
        lines.append(f"<title>{_escape(title)}</title>")
    if coverage is not None:
        if spec is None:
            raise ValidationError("Coverage shading needs the grid spec")
        lines.append(f'<g class="{COVERAGE_CLASS}">')
        for u, v, w, h, opacity in _coverage_cells(frame, spec, coverage):
            lines.append(
                f'<rect x="{_fmt(u)}" y="{_fmt(v)}" width="{_fmt(w)}" height="{_fmt(h)}" '
                f'fill-opacity="{_fmt(opacity)}"/>'
            )
        lines.append("</g>")
    for box in gts:
        lines.extend(_box_elements(frame, box, GT_CLASS))
    for det in dets:
        lines.extend(_box_elements(frame, det.box, DET_CLASS, f"class {det.class_id} score {det.score:.3f}"))
    lines.append("</svg>")
    logger.debug(f"Rendered BEV with {len(gts)} gt and {len(dets)} detections")
    return "\n".join(lines) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _box_elements(frame: BevFrame, box: Box3D, css_class: str, tooltip: str = "") -> List[str]:
    points = " ".join(f"{_fmt(u)},{_fmt(v)}" for u, v in _footprint(frame, box))
    (u0, v0), (u1, v1) = _heading(frame, box)
    body = f"<title>{_escape(tooltip)}</title>" if tooltip else ""
    polygon = f'<polygon class="{css_class}" points="{points}"/>' if not body else (
        f'<polygon class="{css_class}" points="{points}">{body}</polygon>'
    )
    tick = f'<line class="{css_class}" x1="{_fmt(u0)}" y1="{_fmt(v0)}" x2="{_fmt(u1)}" y2="{_fmt(v1)}"/>'
    return [polygon, tick]


def save_bev_svg(svg: str, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg, encoding="utf-8")
    return path


def render_bev_png(
    gts: Sequence[Box3D] = (),
    dets: Sequence[Detection] = (),
    frame: Optional[BevFrame] = None,
    spec: Optional[VoxelGridSpec] = None,
    coverage: Optional[np.ndarray] = None
) -> Image.Image:
    """Raster version of ``render_bev_svg`` on a white RGB canvas."""
    if frame is None:
        frame = BevFrame.fit(list(gts) + [d.box for d in dets])
    img = Image.new("RGB", (max(frame.width, 1), max(frame.height, 1)), (255, 255, 255))
    if coverage is not None:
        if spec is None:
            raise ValidationError("Coverage shading needs the grid spec")
        overlay = Image.new("RGBA", img.size, (0, 0, 0, 0))
        shade = ImageDraw.Draw(overlay)
        for u, v, w, h, opacity in _coverage_cells(frame, spec, coverage):
            shade.rectangle([u, v, u + w, v + h], fill=COVERAGE_COLOR + (int(255 * opacity),))
        img = Image.alpha_composite(img.convert("RGBA"), overlay).convert("RGB")
    draw = ImageDraw.Draw(img)
    for boxes, color, width in (
        (list(gts), GT_COLOR, 2),
        ([d.box for d in dets], DET_COLOR, 1),
    ):
        for box in boxes:
            draw.polygon(_footprint(frame, box), outline=color, width=width)
            draw.line(list(_heading(frame, box)), fill=color, width=width)
    return img


def save_bev_png(img: Image.Image, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
    return path
