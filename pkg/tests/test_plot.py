import xml.etree.ElementTree as ET

import pytest

from visservo.geom import Pose2D
from visservo.plot import sweep_svg, trajectory_svg
from visservo.worldsim import generate_scene

NS = "{http://www.w3.org/2000/svg}"


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        trajectory_svg({"a": []})
    with pytest.raises(ValueError):
        trajectory_svg({})


def test_single_point_trace(tmp_path):
    path = tmp_path / "t.svg"
    trajectory_svg({"only": [Pose2D(1, 2, 0.3)]}, path=path)
    root = ET.parse(path).getroot()
    assert root.tag == NS + "svg"
    assert len(root.findall(f"{NS}circle")) == 1
    assert not root.findall(f"{NS}polyline")


def test_trajectory_with_scene_and_goal():
    sc = generate_scene(8, 8, 2, seed=0)
    poses = [Pose2D(1 + 0.1 * i, 1, 0) for i in range(10)]
    root = ET.fromstring(trajectory_svg({"a": poses, "b": poses[:3]}, Pose2D(3, 1, 0), sc))
    assert len(root.findall(f"{NS}polyline")) == 2
    assert len([e for e in root.iter(f"{NS}line") if e.get("class") == "wall"]) == len(sc.walls)
    assert len([e for e in root.iter(f"{NS}circle") if e.get("class") == "goal"]) == 1
    # self-contained: no external references
    assert "href" not in ET.tostring(root, encoding="unicode")


def test_sweep_vertices():
    pts = [(0, 0.9), (4, 0.88), (8, 0.85), (16, 0.8), (32, 0.7)]
    root = ET.fromstring(sweep_svg({"sigma": pts}))
    (line,) = root.findall(f"{NS}polyline")
    assert len(line.get("points").split()) == 5


def test_sweep_rejects_empty():
    with pytest.raises(ValueError):
        sweep_svg({"x": []})


def test_deterministic():
    poses = [Pose2D(0, 0, 0), Pose2D(1, 1, 1)]
    assert trajectory_svg({"a": poses}) == trajectory_svg({"a": poses})
