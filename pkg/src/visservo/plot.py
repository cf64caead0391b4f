"""Self-contained SVG plots: top-down trajectories and sweep line charts."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

from .geom import Pose2D
from .worldsim import Scene

SIZE = 480
PAD = 40
COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg(width: int = SIZE, height: int = SIZE) -> ET.Element:
    root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width),
                      height=str(height), viewBox=f"0 0 {width} {height}")
    ET.SubElement(root, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    return root


def _write(root: ET.Element, path) -> str:
    text = ET.tostring(root, encoding="unicode")
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Frame:
    """Maps data coordinates into the padded drawing area, y pointing up."""

    def __init__(self, xmin, ymin, xmax, ymax, size=SIZE, pad=PAD, equal=True):
        if xmax - xmin <= 0:
            xmin, xmax = xmin - 0.5, xmax + 0.5
        if ymax - ymin <= 0:
            ymin, ymax = ymin - 0.5, ymax + 0.5
        span = size - 2 * pad
        sx, sy = span / (xmax - xmin), span / (ymax - ymin)
        if equal:
            sx = sy = min(sx, sy)
        self.xmin, self.ymin, self.sx, self.sy, self.pad, self.size = xmin, ymin, sx, sy, pad, size

    def __call__(self, x: float, y: float) -> Tuple[str, str]:
        px = self.pad + (x - self.xmin) * self.sx
        py = self.size - self.pad - (y - self.ymin) * self.sy
        return _fmt(px), _fmt(py)


def _marker(root, frame, pose: Pose2D, colour: str, label: str, arrow: float):
    cx, cy = frame(pose.x, pose.y)
    ET.SubElement(root, "circle", cx=cx, cy=cy, r="5", fill=colour, attrib={"class": label})
    hx, hy = frame(pose.x + arrow * math.cos(pose.theta), pose.y + arrow * math.sin(pose.theta))
    ET.SubElement(root, "line", x1=cx, y1=cy, x2=hx, y2=hy, stroke=colour,
                  attrib={"stroke-width": "2"})


def trajectory_svg(trajectories: Dict[str, Sequence[Pose2D]], goal: Optional[Pose2D] = None,
                   scene: Optional[Scene] = None, path=None, title: str = "") -> str:
    """Top-down view of one or more pose sequences with start and goal markers."""
    if not trajectories or any(len(t) == 0 for t in trajectories.values()):
        raise ValueError("cannot plot an empty trajectory")
    xs = [p.x for t in trajectories.values() for p in t]
    ys = [p.y for t in trajectories.values() for p in t]
    if goal is not None:
        xs.append(goal.x)
        ys.append(goal.y)
    if scene is not None:
        xmin, ymin, xmax, ymax = scene.bounds
    else:
        xmin, ymin, xmax, ymax = min(xs) - 0.5, min(ys) - 0.5, max(xs) + 0.5, max(ys) + 0.5
    frame = _Frame(xmin, ymin, xmax, ymax)
    arrow = 0.04 * max(xmax - xmin, ymax - ymin)
    root = _svg()
    if title:
        ET.SubElement(root, "title").text = title
    if scene is not None:
        for w in scene.walls:
            x1, y1 = frame(*w.p0)
            x2, y2 = frame(*w.p1)
            ET.SubElement(root, "line", x1=x1, y1=y1, x2=x2, y2=y2, stroke="black",
                          attrib={"stroke-width": "3", "class": "wall"})
    for i, (name, poses) in enumerate(sorted(trajectories.items())):
        colour = COLOURS[i % len(COLOURS)]
        if len(poses) > 1:
            pts = " ".join(",".join(frame(p.x, p.y)) for p in poses)
            ET.SubElement(root, "polyline", points=pts, fill="none", stroke=colour,
                          attrib={"stroke-width": "2", "class": "trajectory", "data-name": name})
        _marker(root, frame, poses[0], colour, "start", arrow)
        tx, ty = frame(poses[0].x, poses[0].y)
        ET.SubElement(root, "text", x=tx, y=ty, fill=colour, dx="8", dy=str(-6 - 12 * i),
                      attrib={"font-size": "12", "font-family": "sans-serif"}).text = name
    if goal is not None:
        _marker(root, frame, goal, "#000000", "goal", arrow)
    return _write(root, path)


def sweep_svg(series: Dict[str, Sequence[Tuple[float, float]]], path=None, xlabel: str = "",
              ylabel: str = "success rate", title: str = "", ylim=(0.0, 1.0)) -> str:
    """Line chart with one polyline per series; each point is drawn as a vertex."""
    if not series or any(len(s) == 0 for s in series.values()):
        raise ValueError("cannot plot an empty series")
    xs = [x for s in series.values() for x, _ in s]
    frame = _Frame(min(xs), ylim[0], max(xs), ylim[1], equal=False)
    root = _svg()
    if title:
        ET.SubElement(root, "title").text = title
    x0, y0 = frame(min(xs), ylim[0])
    x1, _ = frame(max(xs), ylim[0])
    _, y1 = frame(min(xs), ylim[1])
    axis = {"stroke-width": "1"}
    ET.SubElement(root, "line", x1=x0, y1=y0, x2=x1, y2=y0, stroke="black", attrib=axis)
    ET.SubElement(root, "line", x1=x0, y1=y0, x2=x0, y2=y1, stroke="black", attrib=axis)
    font = {"font-size": "12", "font-family": "sans-serif"}
    for x in sorted(set(xs)):
        tx, _ = frame(x, ylim[0])
        ET.SubElement(root, "text", x=tx, y=_fmt(float(y0) + 16), attrib={**font, "text-anchor": "middle"}).text = f"{x:g}"
    for k in range(5):
        yv = ylim[0] + k * (ylim[1] - ylim[0]) / 4
        _, ty = frame(min(xs), yv)
        ET.SubElement(root, "text", x=_fmt(float(x0) - 6), y=ty, attrib={**font, "text-anchor": "end"}).text = f"{yv:g}"
    if xlabel:
        ET.SubElement(root, "text", x=str(SIZE // 2), y=str(SIZE - 6), attrib={**font, "text-anchor": "middle"}).text = xlabel
    if ylabel:
        ET.SubElement(root, "text", x="12", y=str(SIZE // 2), attrib={**font, "transform": f"rotate(-90 12 {SIZE // 2})", "text-anchor": "middle"}).text = ylabel
    for i, (name, pts) in enumerate(sorted(series.items())):
        colour = COLOURS[i % len(COLOURS)]
        coords = [frame(x, y) for x, y in pts]
        ET.SubElement(root, "polyline", points=" ".join(",".join(c) for c in coords), fill="none",
                      stroke=colour, attrib={"stroke-width": "2", "class": "series", "data-name": name})
        for cx, cy in coords:
            ET.SubElement(root, "circle", cx=cx, cy=cy, r="3", fill=colour)
        ET.SubElement(root, "text", x=str(SIZE - PAD), y=str(PAD + 14 * i), fill=colour,
                      attrib={**font, "text-anchor": "end"}).text = name
    return _write(root, path)
