"""SVG-subset document model with bounded perturbation variables.

The supported subset is:

    elements    line, path (M plus L/A commands, optional Z), circle,
                polygon, g
    attributes  x1 y1 x2 y2 cx cy r points d stroke stroke-width fill id
                transform (matrix(...) only, similarity matrices only)

A circle whose bounds-sidecar entry carries ``half_plane_deg`` becomes a
half-circle (the disc intersected with a half-plane through its center).

Perturbation degrees of freedom come from a JSON sidecar keyed by element
id. ``point_radius: r`` expands to independent x and y offsets in
[-r, +r] for every control point of the element. ``affine`` entries add
pivot-centered (tx, ty, rotate_deg, log_scale) offsets; their intervals
must be symmetric about zero, since a variable's resting value is defined
as the midpoint of its bounds and zero offset must reproduce the input
drawing exactly. Asymmetric intent belongs in the drawing itself.

Variable order is a pure function of the document: depth-first element
order, then per point x before y, then affine components in the order
tx, ty, rotate_deg, log_scale.

Drawings are treated as immutable; `apply_perturbation` returns a new
document and shares nothing mutable with its input.
"""

from __future__ import annotations

import json
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DanglingBoundsRef, DimensionMismatch, MalformedBounds,
                     OutOfBounds, ParseError, UnsupportedElement)

SUPPORTED_KINDS = ("line", "path", "circle", "half_circle", "polygon")
AFFINE_COMPONENTS = ("tx", "ty", "rotate_deg", "log_scale")
_SIMILARITY_TOL = 1e-9


# ---------------------------------------------------------------------------
# affine helpers (3x3 row-major, y down as in SVG)

def mat_identity() -> np.ndarray:
    return np.eye(3)


def mat_from_svg(a, b, c, d, e, f) -> np.ndarray:
    """SVG matrix(a b c d e f): x' = a x + c y + e, y' = b x + d y + f."""
    return np.array([[a, c, e], [b, d, f], [0.0, 0.0, 1.0]])


def mat_to_svg(m: np.ndarray) -> tuple[float, ...]:
    return (m[0, 0], m[1, 0], m[0, 1], m[1, 1], m[0, 2], m[1, 2])


def is_similarity(m: np.ndarray) -> bool:
    """Direct similarity: uniform scale + rotation + translation, no flip."""
    a, b, c, d = m[0, 0], m[1, 0], m[0, 1], m[1, 1]
    scale = math.hypot(a, b)
    if scale <= 0:
        return False
    tol = _SIMILARITY_TOL * max(1.0, scale)
    return abs(a - d) <= tol and abs(b + c) <= tol


def similarity_scale(m: np.ndarray) -> float:
    return math.hypot(m[0, 0], m[1, 0])


def delta_matrix(pivot, tx, ty, rot_deg, log_scale) -> np.ndarray:
    """Pivot-centered similarity offset T(pivot+t) . R . S . T(-pivot)."""
    th = math.radians(rot_deg)
    s = math.exp(log_scale)
    ca, sa = s * math.cos(th), s * math.sin(th)
    px, py = float(pivot[0]), float(pivot[1])
    m = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    m[0, 2] = px + tx - (ca * px - sa * py)
    m[1, 2] = py + ty - (sa * px + ca * py)
    return m


def apply_mat(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return pts @ m[:2, :2].T + m[:2, 2]


# ---------------------------------------------------------------------------
# document model

@dataclass
class PathSegment:
    kind: str            # "L" or "A"
    radius: float = 0.0  # arcs only
    large_arc: bool = False
    sweep: bool = False


@dataclass
class AffineBounds:
    """Per-component symmetric offset intervals; None means not perturbable."""
    tx: tuple[float, float] | None = None
    ty: tuple[float, float] | None = None
    rotate_deg: tuple[float, float] | None = None
    log_scale: tuple[float, float] | None = None

    def component(self, name: str):
        return getattr(self, name)


@dataclass
class Primitive:
    kind: str
    points: np.ndarray               # (P, 2) control points, local units
    stroke_width: float = 0.0
    color: str = "black"
    fill: bool = False
    elem_id: str | None = None
    nominal_transform: np.ndarray | None = None
    radius: float = 0.0              # circle / half_circle
    half_plane_deg: float = 0.0      # half_circle: normal of the kept half
    segments: list[PathSegment] = field(default_factory=list)  # path only
    closed: bool = False             # path Z
    affine_bounds: AffineBounds | None = None
    affine_delta: np.ndarray = field(default_factory=lambda: np.zeros(4))
    pivot: np.ndarray = field(default_factory=lambda: np.zeros(2))

    children = ()  # uniform tree walking

    def validate(self):
        if self.kind not in SUPPORTED_KINDS:
            raise UnsupportedElement(self.kind)
        if self.kind in ("line", "path") or (self.kind in ("circle", "polygon") and not self.fill):
            if self.stroke_width <= 0:
                raise ParseError(f"{self.kind} requires stroke-width > 0")
        if self.kind == "polygon" and len(self.points) < 3:
            raise ParseError("polygon requires at least 3 vertices")
        if self.kind in ("circle", "half_circle") and self.radius <= 0:
            raise ParseError("circle requires r > 0")
        for seg in self.segments:
            if seg.kind == "A" and seg.radius <= 0:
                raise ParseError("arc segment requires radius > 0")


@dataclass
class Group:
    children: list = field(default_factory=list)
    elem_id: str | None = None
    nominal_transform: np.ndarray | None = None
    affine_bounds: AffineBounds | None = None
    affine_delta: np.ndarray = field(default_factory=lambda: np.zeros(4))
    pivot: np.ndarray = field(default_factory=lambda: np.zeros(2))


@dataclass(frozen=True)
class VarTarget:
    kind: str                 # "point" or "affine"
    path: tuple[int, ...]     # child indices from the root group
    index: int                # point index, or affine component index
    coord: int = 0            # 0=x, 1=y for point targets


@dataclass(frozen=True)
class BoundedVariable:
    """One scalar offset with symmetric bounds; nominal is the midpoint."""
    target: VarTarget
    lo: float
    hi: float
    nominal: float = 0.0


@dataclass
class Drawing:
    root: Group
    variables: list[BoundedVariable]
    keypoints: np.ndarray       # (K, 2) root-frame anchor points
    mask: np.ndarray | None     # (M, 2) coarse polygon around the graphic
    canvas_w: float
    canvas_h: float

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([v.lo for v in self.variables])
        hi = np.array([v.hi for v in self.variables])
        return lo, hi

    def node_at(self, path: tuple[int, ...]):
        node = self.root
        for i in path:
            node = node.children[i]
        return node


def effective_transform(node) -> np.ndarray:
    """Nominal transform composed with the node's pivot-centered offset."""
    base = node.nominal_transform if node.nominal_transform is not None else mat_identity()
    d = node.affine_delta
    if not np.any(d):
        return base
    return delta_matrix(node.pivot, d[0], d[1], d[2], d[3]) @ base


def _has_affine_slot(node) -> bool:
    # structural: presence must not depend on perturbation values, or
    # flatten_parameters would change length under apply_perturbation
    return node.nominal_transform is not None or node.affine_bounds is not None


# ---------------------------------------------------------------------------
# parsing

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def _strip_ns(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_float(raw: str, what: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ParseError(f"invalid number {raw!r} for {what}") from None


def _parse_length(raw: str, what: str) -> float:
    return _parse_float(raw.strip().removesuffix("px"), what)


def _parse_color(raw: str, what: str) -> str:
    v = raw.strip().lower()
    if v in ("black", "#000", "#000000"):
        return "black"
    if v in ("white", "#fff", "#ffffff"):
        return "white"
    raise UnsupportedElement(what, f"color {raw!r} (only black/white)")


def _parse_transform(raw: str) -> np.ndarray:
    m = re.fullmatch(r"\s*matrix\(\s*([^)]*)\)\s*", raw)
    if not m:
        raise UnsupportedElement("transform", f"{raw!r} (matrix(...) only)")
    nums = re.split(r"[\s,]+", m.group(1).strip())
    if len(nums) != 6:
        raise ParseError(f"transform matrix needs 6 numbers, got {raw!r}")
    mat = mat_from_svg(*(_parse_float(n, "transform") for n in nums))
    if not is_similarity(mat):
        raise UnsupportedElement("transform", "only similarity matrices are supported")
    return mat


def _parse_points(raw: str) -> np.ndarray:
    nums = [x for x in re.split(r"[\s,]+", raw.strip()) if x]
    if len(nums) % 2:
        raise ParseError(f"odd number of coordinates in points={raw!r}")
    vals = [_parse_float(n, "points") for n in nums]
    return np.array(vals, dtype=float).reshape(-1, 2)


def _parse_path(d: str) -> tuple[np.ndarray, list[PathSegment], bool]:
    tokens = re.findall(rf"[A-Za-z]|{_NUM}", d)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(tokens):
            raise ParseError(f"path data ended inside {what}")
        vals = []
        for t in tokens[pos:pos + n]:
            vals.append(_parse_float(t, what))
        pos += n
        return vals

    if pos >= len(tokens) or tokens[pos] != "M":
        raise ParseError("path must start with an absolute M command")
    pos += 1
    points = [take(2, "M")]
    segments: list[PathSegment] = []
    closed = False
    while pos < len(tokens):
        cmd = tokens[pos]
        pos += 1
        if cmd == "L":
            points.append(take(2, "L"))
            segments.append(PathSegment("L"))
        elif cmd == "A":
            rx, ry, rot, laf, swf, x, y = take(7, "A")
            if abs(rx - ry) > 1e-9 * max(1.0, abs(rx)):
                raise UnsupportedElement("path", "elliptical arcs (rx != ry)")
            if rot != 0:
                raise UnsupportedElement("path", "rotated arcs")
            if laf not in (0.0, 1.0) or swf not in (0.0, 1.0):
                raise ParseError("arc flags must be 0 or 1")
            points.append([x, y])
            segments.append(PathSegment("A", radius=rx, large_arc=bool(laf), sweep=bool(swf)))
        elif cmd == "Z":
            if pos != len(tokens):
                raise UnsupportedElement("path", "multiple subpaths")
            closed = True
        elif re.fullmatch(r"[A-Za-z]", cmd):
            raise UnsupportedElement("path", f"command {cmd!r}")
        else:
            raise ParseError(f"unexpected path token {cmd!r}")
    if not segments:
        raise ParseError("path needs at least one segment")
    return np.array(points, dtype=float), segments, closed


def _parse_element(el) -> object:
    tag = _strip_ns(el.tag)
    attrs = {k: v for k, v in el.attrib.items()}
    elem_id = attrs.get("id")
    transform = _parse_transform(attrs["transform"]) if "transform" in attrs else None

    def length(name, default=None):
        if name in attrs:
            return _parse_length(attrs[name], f"{tag}.{name}")
        if default is None:
            raise ParseError(f"{tag} element missing required attribute {name!r}")
        return default

    if tag == "g":
        group = Group(elem_id=elem_id, nominal_transform=transform)
        for child in el:
            group.children.append(_parse_element(child))
        return group

    if tag == "line":
        prim = Primitive(
            kind="line",
            points=np.array([[length("x1", 0.0), length("y1", 0.0)],
                             [length("x2", 0.0), length("y2", 0.0)]]),
            stroke_width=length("stroke-width", 1.0),
            color=_parse_color(attrs.get("stroke", "black"), "line"),
            fill=False, elem_id=elem_id, nominal_transform=transform)
    elif tag == "path":
        if attrs.get("fill", "none").strip().lower() != "none":
            raise UnsupportedElement("path", "filled paths")
        points, segments, closed = _parse_path(attrs.get("d", ""))
        prim = Primitive(
            kind="path", points=points, segments=segments, closed=closed,
            stroke_width=length("stroke-width", 1.0),
            color=_parse_color(attrs.get("stroke", "black"), "path"),
            fill=False, elem_id=elem_id, nominal_transform=transform)
    elif tag == "circle":
        fill_raw = attrs.get("fill", "black").strip().lower()
        filled = fill_raw != "none"
        prim = Primitive(
            kind="circle",
            points=np.array([[length("cx", 0.0), length("cy", 0.0)]]),
            radius=length("r"),
            stroke_width=0.0 if filled else length("stroke-width", 1.0),
            color=_parse_color(attrs["fill"] if filled and "fill" in attrs
                               else attrs.get("stroke", "black") if not filled
                               else "black", "circle"),
            fill=filled, elem_id=elem_id, nominal_transform=transform)
    elif tag == "polygon":
        fill_raw = attrs.get("fill", "black").strip().lower()
        filled = fill_raw != "none"
        pts = _parse_points(attrs.get("points", ""))
        prim = Primitive(
            kind="polygon", points=pts,
            stroke_width=0.0 if filled else length("stroke-width", 1.0),
            color=_parse_color(attrs["fill"] if filled and "fill" in attrs
                               else attrs.get("stroke", "black") if not filled
                               else "black", "polygon"),
            fill=filled, elem_id=elem_id, nominal_transform=transform)
    else:
        raise UnsupportedElement(tag)

    prim.validate()
    return prim


def _node_bbox(node, with_transform=True) -> np.ndarray | None:
    """Subtree bounding box in the node's parent frame: (2,2) [[x0,y0],[x1,y1]]."""
    boxes = []
    if isinstance(node, Group):
        for child in node.children:
            b = _node_bbox(child)
            if b is not None:
                boxes.append(b)
        if not boxes:
            return None
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
    else:
        pts = node.points
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        if node.kind in ("circle", "half_circle"):
            lo = lo - node.radius
            hi = hi + node.radius
    if with_transform and node.nominal_transform is not None:
        corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]])
        mapped = apply_mat(node.nominal_transform, corners)
        lo, hi = mapped.min(axis=0), mapped.max(axis=0)
    return np.array([lo, hi])


def _iter_nodes(node, path=()):
    yield node, path
    if isinstance(node, Group):
        for i, child in enumerate(node.children):
            yield from _iter_nodes(child, path + (i,))


def _interval(entry_id, name, raw) -> tuple[float, float]:
    try:
        lo, hi = float(raw[0]), float(raw[1])
    except (TypeError, ValueError, IndexError):
        raise MalformedBounds(entry_id, f"{name} must be [lo, hi]") from None
    if not lo < hi:
        raise MalformedBounds(entry_id, f"{name} needs lo < hi")
    if abs(lo + hi) > 1e-9 * (hi - lo):
        raise MalformedBounds(
            entry_id, f"{name} interval must be symmetric about 0; move the drawing instead")
    return lo, hi


def parse_svg(svg_text: str, bounds_text: str) -> Drawing:
    """Parse an SVG-subset document plus its bounds sidecar."""
    try:
        root_el = ET.fromstring(svg_text)
    except ET.ParseError as exc:
        raise ParseError(f"invalid XML: {exc}") from None
    if _strip_ns(root_el.tag) != "svg":
        raise UnsupportedElement(_strip_ns(root_el.tag), "expected svg root")

    if "viewBox" in root_el.attrib:
        vb = [_parse_float(x, "viewBox") for x in re.split(r"[\s,]+", root_el.attrib["viewBox"].strip())]
        if len(vb) != 4 or vb[0] != 0 or vb[1] != 0:
            raise UnsupportedElement("viewBox", "only '0 0 w h'")
        canvas_w, canvas_h = vb[2], vb[3]
    else:
        try:
            canvas_w = _parse_length(root_el.attrib["width"], "svg.width")
            canvas_h = _parse_length(root_el.attrib["height"], "svg.height")
        except KeyError:
            raise ParseError("svg root needs width/height or a viewBox") from None
    if canvas_w <= 0 or canvas_h <= 0:
        raise ParseError("canvas must have positive size")

    root = Group()
    for child in root_el:
        root.children.append(_parse_element(child))

    # index elements by id
    by_id: dict[str, tuple[object, tuple[int, ...]]] = {}
    for node, path in _iter_nodes(root):
        eid = getattr(node, "elem_id", None)
        if eid is not None:
            if eid in by_id:
                raise ParseError(f"duplicate element id {eid!r}")
            by_id[eid] = (node, path)

    try:
        sidecar = json.loads(bounds_text) if bounds_text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid bounds JSON: {exc}") from None
    if sidecar and sidecar.get("version", 1) != 1:
        raise ParseError(f"unsupported bounds version {sidecar.get('version')!r}")

    specs: dict[tuple[int, ...], dict] = {}
    for entry in sidecar.get("elements", []):
        eid = entry.get("id")
        if not isinstance(eid, str):
            raise MalformedBounds(str(eid), "entry missing string id")
        if eid not in by_id:
            raise DanglingBoundsRef(eid)
        node, path = by_id[eid]
        if path in specs:
            raise MalformedBounds(eid, "duplicate entry for element")
        spec: dict = {}

        if "half_plane_deg" in entry:
            if not isinstance(node, Primitive) or node.kind != "circle" or not node.fill:
                raise MalformedBounds(eid, "half_plane_deg applies to filled circles only")
            node.kind = "half_circle"
            node.half_plane_deg = float(entry["half_plane_deg"])

        if "point_radius" in entry:
            if isinstance(node, Group):
                raise MalformedBounds(eid, "point_radius applies to primitives, not groups")
            r = entry["point_radius"]
            if not isinstance(r, (int, float)) or r <= 0:
                raise MalformedBounds(eid, "point_radius must be > 0")
            spec["point_radius"] = float(r)

        if "affine" in entry:
            aff = entry["affine"]
            if not isinstance(aff, dict):
                raise MalformedBounds(eid, "affine must be an object")
            unknown = set(aff) - set(AFFINE_COMPONENTS)
            if unknown:
                raise MalformedBounds(eid, f"unknown affine components {sorted(unknown)}")
            ab = AffineBounds(**{k: _interval(eid, k, v) for k, v in aff.items()})
            node.affine_bounds = ab
            bbox = _node_bbox(node)
            node.pivot = bbox.mean(axis=0) if bbox is not None else np.zeros(2)
            spec["affine"] = ab

        unknown_keys = set(entry) - {"id", "point_radius", "affine", "half_plane_deg"}
        if unknown_keys:
            raise MalformedBounds(eid, f"unknown keys {sorted(unknown_keys)}")
        specs[path] = spec

    # build the variable list in document order
    variables: list[BoundedVariable] = []
    for node, path in _iter_nodes(root):
        spec = specs.get(path)
        if not spec:
            continue
        if "point_radius" in spec:
            r = spec["point_radius"]
            for pi in range(len(node.points)):
                for coord in (0, 1):
                    variables.append(BoundedVariable(
                        VarTarget("point", path, pi, coord), -r, r))
        if "affine" in spec:
            ab = spec["affine"]
            for ci, name in enumerate(AFFINE_COMPONENTS):
                iv = ab.component(name)
                if iv is not None:
                    variables.append(BoundedVariable(
                        VarTarget("affine", path, ci), iv[0], iv[1]))

    keypoints = np.array(sidecar.get("keypoints", []), dtype=float).reshape(-1, 2)
    mask_raw = sidecar.get("mask")
    mask = np.array(mask_raw, dtype=float).reshape(-1, 2) if mask_raw else None
    if mask is not None and len(mask) < 3:
        raise ParseError("mask polygon needs at least 3 vertices")

    return Drawing(root=root, variables=variables, keypoints=keypoints,
                   mask=mask, canvas_w=canvas_w, canvas_h=canvas_h)


# ---------------------------------------------------------------------------
# parameter vector and perturbation

def flatten_parameters(d: Drawing) -> np.ndarray:
    """Deterministic flat vector of the document's effective scalar parameters.

    Depth-first; a node contributes its effective 2x3 transform (row-major
    a c e b d f) when it structurally owns one (a transform attribute or
    affine bounds), then its geometry, then its stroke width when stroked.
    """
    out: list[float] = []

    def visit(node):
        if _has_affine_slot(node):
            out.extend(mat_to_svg(effective_transform(node))[i] for i in (0, 2, 4, 1, 3, 5))
        if isinstance(node, Group):
            for child in node.children:
                visit(child)
            return
        if node.kind == "line":
            out.extend(node.points.reshape(-1))
        elif node.kind == "path":
            out.extend(node.points[0])
            for i, seg in enumerate(node.segments):
                if seg.kind == "A":
                    out.append(seg.radius)
                out.extend(node.points[i + 1])
        elif node.kind in ("circle", "half_circle"):
            out.extend(node.points[0])
            out.append(node.radius)
        elif node.kind == "polygon":
            out.extend(node.points.reshape(-1))
        if node.stroke_width > 0 and not node.fill:
            out.append(node.stroke_width)

    visit(d.root)
    return np.array(out, dtype=float)


def _copy_node(node):
    if isinstance(node, Group):
        return replace(node,
                       children=[_copy_node(c) for c in node.children],
                       nominal_transform=None if node.nominal_transform is None
                       else node.nominal_transform.copy(),
                       affine_delta=node.affine_delta.copy(),
                       pivot=node.pivot.copy())
    return replace(node,
                   points=node.points.copy(),
                   segments=list(node.segments),
                   nominal_transform=None if node.nominal_transform is None
                   else node.nominal_transform.copy(),
                   affine_delta=node.affine_delta.copy(),
                   pivot=node.pivot.copy())


def apply_perturbation(d: Drawing, delta) -> Drawing:
    """Offset every variable's target by delta; returns a new Drawing.

    Point offsets add to coordinates; affine offsets add to the node's
    pivot-centered (tx, ty, rotate_deg, log_scale) deltas, which compose
    with the nominal transform. Point translation applies before the
    node's own affine.
    """
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (d.n_vars,):
        raise DimensionMismatch(f"expected {d.n_vars} components, got {delta.shape}")
    for i, (v, dv) in enumerate(zip(d.variables, delta)):
        tol = 1e-9 * max(1.0, v.hi - v.lo)
        if dv < v.lo - v.nominal - tol or dv > v.hi - v.nominal + tol:
            raise OutOfBounds(i, f"{dv} outside [{v.lo - v.nominal}, {v.hi - v.nominal}]")

    root = _copy_node(d.root)
    out = Drawing(root=root, variables=d.variables, keypoints=d.keypoints.copy(),
                  mask=None if d.mask is None else d.mask.copy(),
                  canvas_w=d.canvas_w, canvas_h=d.canvas_h)
    for v, dv in zip(d.variables, delta):
        node = out.node_at(v.target.path)
        if v.target.kind == "point":
            node.points[v.target.index, v.target.coord] += dv
        else:
            node.affine_delta[v.target.index] += dv
    return out


# ---------------------------------------------------------------------------
# emission

def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _emit_node(node, parent_el):
    eff = effective_transform(node)
    emit_tf = node.nominal_transform is not None or not np.allclose(eff, np.eye(3), atol=1e-12)

    if isinstance(node, Group):
        el = ET.SubElement(parent_el, "g")
        if node.elem_id:
            el.set("id", node.elem_id)
        if emit_tf:
            el.set("transform", "matrix(%s)" % " ".join(_fmt(v) for v in mat_to_svg(eff)))
        for child in node.children:
            _emit_node(child, el)
        return

    p = node
    if p.kind == "line":
        el = ET.SubElement(parent_el, "line")
        el.set("x1", _fmt(p.points[0, 0]))
        el.set("y1", _fmt(p.points[0, 1]))
        el.set("x2", _fmt(p.points[1, 0]))
        el.set("y2", _fmt(p.points[1, 1]))
        el.set("stroke", p.color)
        el.set("stroke-width", _fmt(p.stroke_width))
        el.set("fill", "none")
    elif p.kind == "path":
        parts = [f"M {_fmt(p.points[0, 0])} {_fmt(p.points[0, 1])}"]
        for i, seg in enumerate(p.segments):
            x, y = p.points[i + 1]
            if seg.kind == "L":
                parts.append(f"L {_fmt(x)} {_fmt(y)}")
            else:
                parts.append(f"A {_fmt(seg.radius)} {_fmt(seg.radius)} 0 "
                             f"{int(seg.large_arc)} {int(seg.sweep)} {_fmt(x)} {_fmt(y)}")
        if p.closed:
            parts.append("Z")
        el = ET.SubElement(parent_el, "path")
        el.set("d", " ".join(parts))
        el.set("stroke", p.color)
        el.set("stroke-width", _fmt(p.stroke_width))
        el.set("fill", "none")
    elif p.kind in ("circle", "half_circle"):
        el = ET.SubElement(parent_el, "circle")
        el.set("cx", _fmt(p.points[0, 0]))
        el.set("cy", _fmt(p.points[0, 1]))
        el.set("r", _fmt(p.radius))
        if p.fill:
            el.set("fill", p.color)
        else:
            el.set("fill", "none")
            el.set("stroke", p.color)
            el.set("stroke-width", _fmt(p.stroke_width))
    elif p.kind == "polygon":
        el = ET.SubElement(parent_el, "polygon")
        el.set("points", " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in p.points))
        if p.fill:
            el.set("fill", p.color)
        else:
            el.set("fill", "none")
            el.set("stroke", p.color)
            el.set("stroke-width", _fmt(p.stroke_width))
    else:
        raise UnsupportedElement(p.kind)

    if p.elem_id:
        el.set("id", p.elem_id)
    if emit_tf:
        el.set("transform", "matrix(%s)" % " ".join(_fmt(v) for v in mat_to_svg(eff)))


def emit_svg(d: Drawing) -> str:
    """Serialize to SVG text; re-parsing with the same bounds sidecar
    yields a drawing with equal flattened parameters.

    Half-circles are emitted as circles; the half-plane orientation
    lives in the sidecar, as on input. Perturbed state is baked into the
    emitted coordinates and transform matrices.
    """
    svg = ET.Element("svg")
    svg.set("xmlns", "http://www.w3.org/2000/svg")
    svg.set("width", _fmt(d.canvas_w))
    svg.set("height", _fmt(d.canvas_h))
    for child in d.root.children:
        _emit_node(child, svg)
    return ET.tostring(svg, encoding="unicode")
