"""SVG rendering of one forecast: last-frame boxes, sampled trajectories and
the contact heatmap."""
from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

from .pipeline.inference import ForecastResult
from .synthdata import TrainingSample

HAND_COLORS = ("#1f77b4", "#d62728")  # left, right
OBJECT_COLOR = "#2ca02c"


def _rect(parent, x, y, w, h, **attrs):
    return ET.SubElement(parent, "rect", x=f"{x:.2f}", y=f"{y:.2f}", width=f"{w:.2f}", height=f"{h:.2f}", **attrs)


def forecast_svg(sample: TrainingSample, result: ForecastResult, size: tuple[int, int] = (456, 256)) -> str:
    w, h = size
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(w), height=str(h), viewBox=f"0 0 {w} {h}")
    ET.SubElement(svg, "title").text = f"forecast {sample.id}"
    _rect(svg, 0, 0, w, h, fill="#ffffff")

    heat = ET.SubElement(svg, "g", id="heatmap")
    gh, gw = result.heatmap.shape
    peak = result.heatmap.max()
    for r in range(gh):
        for c in range(gw):
            a = result.heatmap[r, c] / peak if peak > 0 else 0.0
            if a < 0.02:
                continue
            _rect(heat, c * w / gw, r * h / gh, w / gw, h / gh, fill="#ff7f0e", **{"fill-opacity": f"{0.7 * a:.3f}"})

    boxes = ET.SubElement(svg, "g", id="observation", fill="none", **{"stroke-width": "1.5"})
    for kind, colors in (("hand", HAND_COLORS), ("object", (OBJECT_COLOR, OBJECT_COLOR))):
        for j in range(2):
            if not sample.valid[kind][j, -1]:
                continue
            x1, y1, x2, y2 = sample.boxes[kind][j, -1] * np.array([w, h, w, h])
            _rect(boxes, x1, y1, x2 - x1, y2 - y1, stroke=colors[j])

    trajs = ET.SubElement(svg, "g", id="trajectories", fill="none", **{"stroke-width": "1", "stroke-opacity": "0.6"})
    h_T = sample.last_hand_location()
    for traj in result.trajectories:
        for side in range(2):
            pts = np.vstack([h_T[side:side + 1], traj.points[:, side]]) * np.array([w, h])
            ET.SubElement(trajs, "polyline", points=" ".join(f"{x:.2f},{y:.2f}" for x, y in pts), stroke=HAND_COLORS[side])

    contacts = ET.SubElement(svg, "g", id="contacts", fill="#000000")
    for x, y in np.clip(result.contacts.reshape(-1, 2), 0, 1) * np.array([w, h]):
        ET.SubElement(contacts, "circle", cx=f"{x:.2f}", cy=f"{y:.2f}", r="1.5")
    return ET.tostring(svg, encoding="unicode")
