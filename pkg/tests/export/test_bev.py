import numpy as np
import pytest

from src.core.errors import ValidationError
from src.core.geometry import Box3D
from src.core.suppression import Detection
from src.core.voxelgrid import VoxelGridSpec
from src.export.bev import (
    DET_COLOR,
    GT_COLOR,
    BevFrame,
    render_bev_png,
    render_bev_svg,
    save_bev_png,
    save_bev_svg,
)

SQUARE = Box3D(5.0, 5.0, 0.0, 4.0, 1.0, 4.0)
FRAME = BevFrame(0.0, 10.0, 0.0, 10.0, scale=10.0)


class TestFrame:
    def test_forward_is_up_and_left_is_left(self):
        assert FRAME.to_page(10.0, 10.0) == (0.0, 0.0)
        assert FRAME.to_page(0.0, 0.0) == (100.0, 100.0)
        u_far, v_far = FRAME.to_page(9.0, 5.0)
        u_near, v_near = FRAME.to_page(1.0, 5.0)
        assert v_far < v_near
        assert u_far == u_near

    def test_fit_covers_boxes_with_margin(self, car_box):
        frame = BevFrame.fit([car_box], margin=1.0)
        assert frame.x_min < car_box.x - car_box.l / 2
        assert frame.x_max > car_box.x + car_box.l / 2
        assert frame.y_max - frame.y_min > car_box.w + 2.0 - 1e-9

    def test_fit_without_boxes(self):
        assert BevFrame.fit([]) == BevFrame(-10.0, 10.0, -10.0, 10.0)

    def test_from_grid(self):
        spec = VoxelGridSpec.from_limits((0.0, 6.4, -3.2, 3.2, -1.0, 1.0), 0.4)
        frame = BevFrame.from_grid(spec, scale=5.0)
        assert (frame.width, frame.height) == (32, 32)

    def test_rejects_empty_window(self):
        with pytest.raises(ValidationError):
            BevFrame(1.0, 1.0, 0.0, 1.0)


class TestSvg:
    def test_one_polygon_per_box(self, car_box, scored_cars):
        svg = render_bev_svg([car_box, car_box.translated(dy=4.0)], scored_cars)
        assert svg.count('<polygon class="gt"') == 2
        assert svg.count('<polygon class="det"') == 3
        assert svg.count("<line ") == 5
        assert svg.startswith("<svg ")
        assert svg.rstrip().endswith("</svg>")

    def test_detection_tooltip(self, scored_cars):
        svg = render_bev_svg([], scored_cars[:1])
        assert "<title>class 0 score 0.900</title>" in svg

    def test_axis_aligned_square_coordinates(self):
        svg = render_bev_svg([SQUARE], frame=FRAME)
        assert 'points="30,30 30,70 70,70 70,30"' in svg

    def test_output_is_byte_identical(self, car_box, scored_cars):
        first = render_bev_svg([car_box], scored_cars, title="run <1>")
        second = render_bev_svg([car_box], scored_cars, title="run <1>")
        assert first == second
        assert "<title>run &lt;1&gt;</title>" in first

    def test_coverage_layer(self):
        spec = VoxelGridSpec.from_limits((0.0, 10.0, 0.0, 10.0, 0.0, 1.0), 1.0)
        coverage = np.zeros((10, 10), dtype=np.uint32)
        coverage[2, 3] = 1
        coverage[4, 4] = 2
        svg = render_bev_svg([SQUARE], frame=FRAME, spec=spec, coverage=coverage)
        assert svg.count("<rect ") == 2
        assert 'fill-opacity="0.6"' in svg

    def test_coverage_needs_spec(self):
        with pytest.raises(ValidationError):
            render_bev_svg([SQUARE], frame=FRAME, coverage=np.ones((10, 10)))

    def test_coverage_shape_must_match(self):
        spec = VoxelGridSpec.from_limits((0.0, 10.0, 0.0, 10.0, 0.0, 1.0), 1.0)
        with pytest.raises(ValidationError):
            render_bev_svg([SQUARE], frame=FRAME, spec=spec, coverage=np.ones((5, 5)))

    def test_save(self, tmp_path):
        path = save_bev_svg(render_bev_svg([SQUARE]), tmp_path / "figs" / "bev.svg")
        assert path.read_text(encoding="utf-8").count("<polygon") == 1


class TestPng:
    def test_canvas_and_colors(self):
        img = render_bev_png([SQUARE], [Detection(SQUARE.translated(dx=1.0), 0.5)], frame=FRAME)
        assert img.size == (100, 100)
        assert img.mode == "RGB"
        colors = set(img.getdata())
        assert GT_COLOR in colors
        assert DET_COLOR in colors
        assert img.getpixel((5, 5)) == (255, 255, 255)

    def test_coverage_tints_background(self):
        spec = VoxelGridSpec.from_limits((0.0, 10.0, 0.0, 10.0, 0.0, 1.0), 1.0)
        coverage = np.zeros((10, 10), dtype=np.uint32)
        coverage[9, 9] = 1
        img = render_bev_png([], [], frame=FRAME, spec=spec, coverage=coverage)
        # column (9, 9) maps to the top-left page corner
        assert img.getpixel((5, 5)) != (255, 255, 255)
        assert img.getpixel((95, 95)) == (255, 255, 255)

    def test_save(self, tmp_path):
        path = save_bev_png(render_bev_png([SQUARE], frame=FRAME), tmp_path / "bev.png")
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
