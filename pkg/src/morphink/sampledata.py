"""Bundled drawings used by the test suite, the scripts, and the docs.

The drawings are generated programmatically so they stay in sync with
the parser; `write_sample(dir)` dumps them as .svg/.json files for CLI
use. Coordinates are in drawing units on generous canvases so that one
pixel of a 64x64 raster covers many units; payload strokes are sized to
land around 2 px wide.
"""

from __future__ import annotations

import json
from pathlib import Path

from .vecdraw import Drawing, parse_svg

_SVG_OPEN = '<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'


def _doc(body: str, w: float, h: float) -> str:
    return _SVG_OPEN.format(w=w, h=h) + body + "</svg>"


def desk_drawing_text() -> tuple[str, str]:
    """Desk-scale drawing: 56 perturbation variables, 6 keypoint markers."""
    lines = [
        ((320, 320), (960, 384)),
        ((320, 448), (944, 512)),
        ((336, 576), (960, 640)),
        ((320, 704), (944, 768)),
        ((336, 832), (960, 896)),
        ((384, 256), (448, 960)),
        ((576, 256), (640, 960)),
        ((768, 240), (832, 960)),
    ]
    parts = []
    for i, (p, q) in enumerate(lines):
        parts.append(f'<line id="L{i}" x1="{p[0]}" y1="{p[1]}" x2="{q[0]}" y2="{q[1]}" '
                     f'stroke="black" stroke-width="44" fill="none"/>')
    parts.append('<path id="P0" d="M 256 256 L 512 288 A 160 160 0 0 1 768 288" '
                 'stroke="black" stroke-width="44" fill="none"/>')
    parts.append('<g id="G0">'
                 '<line x1="224" y1="224" x2="352" y2="352" stroke="black" stroke-width="40" fill="none"/>'
                 '<line x1="224" y1="352" x2="352" y2="224" stroke="black" stroke-width="40" fill="none"/>'
                 '</g>')
    parts.append('<circle id="C0" cx="320" cy="832" r="88" fill="black"/>')
    parts.append('<circle id="H0" cx="928" cy="320" r="96" fill="black"/>')
    parts.append('<polygon id="Q0" points="672,672 928,688 896,928 688,896" fill="black"/>')
    parts.append('<circle id="W0" cx="800" cy="800" r="96" fill="white"/>')
    # imperturbable corner and edge markers, also used as keypoints
    markers = [(128, 128, 64), (1152, 128, 64), (128, 1152, 64),
               (1152, 1152, 64), (640, 128, 44), (128, 640, 44)]
    for i, (cx, cy, r) in enumerate(markers):
        parts.append(f'<circle id="M{i}" cx="{cx}" cy="{cy}" r="{r}" fill="black"/>')

    svg = _doc("".join(parts), 1280, 1280)
    bounds = {
        "version": 1,
        "elements": [
            *({"id": f"L{i}", "point_radius": 40} for i in range(8)),
            {"id": "P0", "point_radius": 36},
            {"id": "G0", "affine": {"tx": [-48, 48], "ty": [-48, 48],
                                    "rotate_deg": [-7, 7], "log_scale": [-0.07, 0.07]}},
            {"id": "C0", "point_radius": 36},
            {"id": "H0", "point_radius": 36, "half_plane_deg": 30},
            {"id": "Q0", "point_radius": 36},
            {"id": "W0", "point_radius": 36},
        ],
        "keypoints": [[x, y] for x, y, _ in markers],
        "mask": [[80, 80], [1200, 80], [1200, 1200], [80, 1200]],
    }
    return svg, json.dumps(bounds)


def desk_drawing() -> Drawing:
    return parse_svg(*desk_drawing_text())


def tiny_drawing_text() -> tuple[str, str]:
    """Four perturbable lines (16 variables) for fast training smoke runs."""
    lines = [
        ((60, 80), (260, 110)),
        ((60, 160), (260, 180)),
        ((80, 50), (110, 270)),
        ((190, 50), (220, 270)),
    ]
    parts = [f'<line id="l{i}" x1="{p[0]}" y1="{p[1]}" x2="{q[0]}" y2="{q[1]}" '
             f'stroke="black" stroke-width="12" fill="none"/>'
             for i, (p, q) in enumerate(lines)]
    svg = _doc("".join(parts), 320, 320)
    bounds = {
        "version": 1,
        "elements": [{"id": f"l{i}", "point_radius": 12} for i in range(4)],
        "keypoints": [[30, 30], [290, 30], [30, 290], [290, 290]],
        "mask": [[16, 16], [304, 16], [304, 304], [16, 304]],
    }
    return svg, json.dumps(bounds)


def tiny_drawing() -> Drawing:
    return parse_svg(*tiny_drawing_text())


def overlap_fixture_text() -> tuple[str, str]:
    """Black + black + white stacked discs sharing an overlap region.

    The probe region around the canvas center is covered by all three,
    which makes the layering mode visible: additive composition keeps it
    black, bottom-up layering lets the top white disc erase it.
    """
    parts = [
        '<circle id="a" cx="26" cy="32" r="14" fill="black"/>',
        '<circle id="b" cx="38" cy="32" r="14" fill="black"/>',
        '<circle id="c" cx="32" cy="32" r="7" fill="white"/>',
    ]
    svg = _doc("".join(parts), 64, 64)
    return svg, json.dumps({"version": 1, "elements": []})


def overlap_fixture() -> Drawing:
    return parse_svg(*overlap_fixture_text())


def write_sample(directory, name: str = "desk") -> tuple[Path, Path]:
    """Write one of the bundled drawings as <name>.svg / <name>.bounds.json."""
    builders = {"desk": desk_drawing_text, "tiny": tiny_drawing_text,
                "overlap": overlap_fixture_text}
    svg, bounds = builders[name]()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    svg_path = directory / f"{name}.svg"
    bounds_path = directory / f"{name}.bounds.json"
    svg_path.write_text(svg)
    bounds_path.write_text(bounds)
    return svg_path, bounds_path
