import pytest
import sys
from pathlib import Path

# Add the repository root to Python path so ``src.*`` imports resolve
root_path = str(Path(__file__).parent.parent)
if root_path not in sys.path:
    sys.path.insert(0, root_path)

from src.core.geometry import Box3D
from src.core.suppression import Detection


@pytest.fixture
def car_box():
    """A KITTI-sized car 10 m ahead of the sensor"""
    return Box3D(10.0, 2.0, -1.0, 1.6, 1.5, 3.9, 0.2)


@pytest.fixture
def scored_cars(car_box):
    """Three detections of the same car class; the last two overlap"""
    return [
        Detection(car_box, 0.9, 0),
        Detection(car_box.translated(dx=12.0), 0.8, 0),
        Detection(car_box.translated(dx=12.3), 0.7, 0),
    ]
