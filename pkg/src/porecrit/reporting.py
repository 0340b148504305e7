"""Deterministic SVG charts and the plain-text run summary.

Every renderer is a pure function of its inputs: coordinates are printed with
fixed precision and no timestamps or ids are embedded, so equal inputs give
byte-identical documents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from html import escape
from typing import Iterable, Sequence

import numpy as np

from .errors import NoData
from .network import PoreNetwork
from .shapley import BeeswarmRecord, DependenceRecord, ImportanceReport

COLOR_STOPS = {
    "blue_red": [(30, 80, 230), (150, 60, 170), (220, 30, 50)],
    "viridis_like": [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)],
}
PLOT_KINDS = ("bar", "beeswarm", "scatter", "projection")
PLANES = ("zy", "zx", "yx", "iso")


@dataclass(frozen=True)
class PlotSpec:
    kind: str = "scatter"
    width: int = 640
    height: int = 420
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    color_map: str = "blue_red"
    log_x: bool = False
    categories: tuple[str, ...] = ()
    margin_left: float = 110.0
    margin_right: float = 30.0
    margin_top: float = 40.0
    margin_bottom: float = 50.0
    point_radius: float = 3.0
    jitter: float = 0.3

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise ValueError(f"kind must be one of {PLOT_KINDS}")
        if self.color_map not in COLOR_STOPS:
            raise ValueError(f"color_map must be one of {tuple(COLOR_STOPS)}")

    @property
    def plot_box(self) -> tuple[float, float, float, float]:
        """(left, top, width, height) of the data area in pixels."""
        return (self.margin_left, self.margin_top,
                self.width - self.margin_left - self.margin_right,
                self.height - self.margin_top - self.margin_bottom)


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    c: float = 0.0


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def color_at(t: float, color_map: str = "blue_red") -> tuple[int, int, int]:
    """Piecewise-linear colour for ``t`` in [0, 1] (values outside are clamped)."""
    stops = COLOR_STOPS[color_map]
    t = min(1.0, max(0.0, float(t)))
    pos = t * (len(stops) - 1)
    k = min(int(pos), len(stops) - 2)
    frac = pos - k
    a, b = stops[k], stops[k + 1]
    return tuple(int(round(a[i] + (b[i] - a[i]) * frac)) for i in range(3))  # type: ignore[return-value]


def hex_color(rgb: Sequence[int]) -> str:
    return "#%02x%02x%02x" % tuple(rgb)


def _normalize(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full(len(values), 0.5)
    return (values - lo) / (hi - lo)


def padded_range(values: Iterable[float], margin: float = 0.05) -> tuple[float, float]:
    """Data range widened by ``margin`` of its span on each side (a point gets +-0.5)."""
    v = np.asarray(list(values), dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    if span == 0:
        return lo - 0.5, hi + 0.5
    return lo - margin * span, hi + margin * span


class _Doc:
    def __init__(self, spec: PlotSpec):
        self.spec = spec
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{spec.width}" '
            f'height="{spec.height}" viewBox="0 0 {spec.width} {spec.height}">',
            f'<rect x="0" y="0" width="{spec.width}" height="{spec.height}" fill="#ffffff"/>',
        ]
        if spec.title:
            self.text(spec.width / 2, spec.margin_top / 2 + 5, spec.title, size=14, anchor="middle")

    def add(self, s: str) -> None:
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="start", rotate=False) -> None:
        tr = f' transform="rotate(-90 {_f(x)} {_f(y)})"' if rotate else ""
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" font-size="{size}" '
                 f'text-anchor="{anchor}"{tr}>{escape(str(s))}</text>')

    def frame(self, x_label: str, y_label: str) -> None:
        left, top, w, h = self.spec.plot_box
        self.add(f'<rect class="frame" x="{_f(left)}" y="{_f(top)}" width="{_f(w)}" height="{_f(h)}" '
                 f'fill="none" stroke="#333333" stroke-width="1"/>')
        if x_label:
            self.text(left + w / 2, top + h + 38, x_label, size=12, anchor="middle")
        if y_label:
            self.text(18, top + h / 2, y_label, size=12, anchor="middle", rotate=True)

    def x_ticks(self, ticks: Sequence[tuple[float, str]]) -> None:
        _, top, _, h = self.spec.plot_box
        for px, label in ticks:
            self.add(f'<line class="tick" x1="{_f(px)}" y1="{_f(top + h)}" x2="{_f(px)}" '
                     f'y2="{_f(top + h + 5)}" stroke="#333333"/>')
            self.text(px, top + h + 18, label, size=10, anchor="middle")

    def y_ticks(self, ticks: Sequence[tuple[float, str]]) -> None:
        left = self.spec.plot_box[0]
        for py, label in ticks:
            self.add(f'<line class="tick" x1="{_f(left - 5)}" y1="{_f(py)}" x2="{_f(left)}" '
                     f'y2="{_f(py)}" stroke="#333333"/>')
            self.text(left - 8, py + 4, label, size=10, anchor="end")

    def close(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _linear_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def _tick_label(v: float) -> str:
    s = f"{v:.3g}"
    return "0" if s == "-0" else s


# --------------------------------------------------------------------------
# bar chart
# --------------------------------------------------------------------------

def render_bar_svg(report: ImportanceReport, plot_spec: PlotSpec | None = None) -> str:
    """Horizontal importance bars, most important on top."""
    spec = plot_spec or PlotSpec(kind="bar", x_label="mean |SHAP value|")
    names = list(report.ranking)
    values = np.array([report.importance_of(n) for n in names], dtype=np.float64)
    if not names:
        raise NoData("no features to plot")
    doc = _Doc(spec)
    left, top, w, h = spec.plot_box
    doc.frame(spec.x_label, spec.y_label)

    positive = values[values > 0]
    if spec.log_x and len(positive):
        lo_exp = math.floor(math.log10(positive.min()))
        hi_exp = math.ceil(math.log10(positive.max()))
        if hi_exp == lo_exp:
            hi_exp += 1

        def to_px(v):
            if v <= 0:
                return 0.0
            return (math.log10(v) - lo_exp) / (hi_exp - lo_exp) * w

        doc.x_ticks([(left + (e - lo_exp) / (hi_exp - lo_exp) * w, f"1e{e}")
                     for e in range(lo_exp, hi_exp + 1)])
    else:
        vmax = float(values.max()) if values.max() > 0 else 1.0

        def to_px(v):
            return v / vmax * w

        doc.x_ticks([(left + t / vmax * w, _tick_label(t)) for t in _linear_ticks(0.0, vmax)])

    slot = h / len(names)
    bar_h = slot * 0.7
    color = hex_color(color_at(1.0, spec.color_map))
    for k, (name, v) in enumerate(zip(names, values)):
        y = top + k * slot + (slot - bar_h) / 2
        doc.add(f'<rect class="bar" x="{_f(left)}" y="{_f(y)}" width="{_f(to_px(float(v)))}" '
                f'height="{_f(bar_h)}" fill="{color}"><title>{escape(name)}: {float(v)!r}</title></rect>')
        doc.text(left - 8, y + bar_h / 2 + 4, name, size=11, anchor="end")
    return doc.close()


# --------------------------------------------------------------------------
# scatter / beeswarm
# --------------------------------------------------------------------------

def beeswarm_points(records: Sequence[BeeswarmRecord], categories: Sequence[str]) -> list[Point]:
    """Beeswarm records as points: x = phi, y = category index, c = value percentile."""
    index = {name: k for k, name in enumerate(categories)}
    return [Point(r.phi, float(index[r.feature]), r.percentile) for r in records]


def dependence_points(records: Sequence[DependenceRecord]) -> list[Point]:
    return [Point(r.feature_value, r.prediction, r.phi) for r in records]


def jitter_offset(index: int, amplitude: float) -> float:
    return float(np.random.default_rng(index).uniform(-amplitude, amplitude))


def render_scatter_svg(records: Sequence[Point], plot_spec: PlotSpec | None = None) -> str:
    """Scatter (or beeswarm) plot, points coloured by their ``c`` channel.

    Axes span the data range plus 5 % each side. For ``kind="beeswarm"`` the
    y axis is categorical (``plot_spec.categories``, first on top) and each
    point is jittered with a generator seeded by its record index.
    """
    spec = plot_spec or PlotSpec()
    if not records:
        raise NoData("no points to plot")
    xs = np.array([p.x for p in records], dtype=np.float64)
    ys = np.array([p.y for p in records], dtype=np.float64)
    cs = np.array([p.c for p in records], dtype=np.float64)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys)) and np.all(np.isfinite(cs))):
        raise ValueError("plot coordinates must be finite")
    left, top, w, h = spec.plot_box
    x0, x1 = padded_range(xs)
    beeswarm = spec.kind == "beeswarm"
    if beeswarm:
        n_cat = max(len(spec.categories), int(ys.max()) + 1)
        # category 0 drawn on top
        ys = (n_cat - 1) - ys + np.array([jitter_offset(i, spec.jitter) for i in range(len(ys))])
        y0, y1 = -0.5, n_cat - 0.5
    else:
        y0, y1 = padded_range(ys)

    doc = _Doc(spec)
    doc.frame(spec.x_label, spec.y_label)
    doc.x_ticks([(left + (t - x0) / (x1 - x0) * w, _tick_label(t)) for t in _linear_ticks(x0, x1)])
    if beeswarm:
        cats = list(spec.categories) or [str(k) for k in range(n_cat)]
        doc.y_ticks([(top + h - ((n_cat - 1 - k) - y0) / (y1 - y0) * h, cats[k]) for k in range(n_cat)])
        if x0 < 0 < x1:
            px = left + (0 - x0) / (x1 - x0) * w
            doc.add(f'<line class="zero" x1="{_f(px)}" y1="{_f(top)}" x2="{_f(px)}" y2="{_f(top + h)}" '
                    f'stroke="#999999" stroke-dasharray="3,3"/>')
    else:
        doc.y_ticks([(top + h - (t - y0) / (y1 - y0) * h, _tick_label(t)) for t in _linear_ticks(y0, y1)])

    tcol = _normalize(cs)
    for x, y, t in zip(xs, ys, tcol):
        px = left + (x - x0) / (x1 - x0) * w
        py = top + h - (y - y0) / (y1 - y0) * h
        doc.add(f'<circle class="point" cx="{_f(px)}" cy="{_f(py)}" r="{_f(spec.point_radius)}" '
                f'fill="{hex_color(color_at(t, spec.color_map))}" fill-opacity="0.8"/>')
    return doc.close()


# --------------------------------------------------------------------------
# network projections
# --------------------------------------------------------------------------

def project(z: float, y: float, x: float, plane: str) -> tuple[float, float]:
    """(horizontal, vertical) coordinates of a centroid in a 2D view."""
    if plane == "zy":
        return y, z
    if plane == "zx":
        return x, z
    if plane == "yx":
        return x, y
    if plane == "iso":
        return x - 0.5 * z, y - 0.25 * z
    raise ValueError(f"plane must be one of {PLANES}")


def render_projection_svg(network: PoreNetwork, plane: str = "yx", plot_spec: PlotSpec | None = None) -> str:
    """Nodes (coloured by normalized size) and edges of the network in one 2D view, equal aspect."""
    if not network.nodes:
        raise NoData("network has no nodes")
    spec = plot_spec or PlotSpec(kind="projection", width=560, height=560, color_map="viridis_like",
                                 margin_left=40, margin_right=40, margin_top=40, margin_bottom=40,
                                 title=f"pore network, {plane} view")
    pts = np.array([project(*n.centroid, plane) for n in network.nodes], dtype=np.float64)
    left, top, w, h = spec.plot_box
    hx0, hx1 = padded_range(pts[:, 0])
    vy0, vy1 = padded_range(pts[:, 1])
    scale = min(w / (hx1 - hx0), h / (vy1 - vy0))
    cx, cy = left + w / 2, top + h / 2
    mh, mv = (hx0 + hx1) / 2, (vy0 + vy1) / 2
    px = cx + (pts[:, 0] - mh) * scale
    py = cy - (pts[:, 1] - mv) * scale

    doc = _Doc(spec)
    doc.frame("", "")
    for a, b, _ in network.edges:
        doc.add(f'<line class="edge" x1="{_f(px[a])}" y1="{_f(py[a])}" x2="{_f(px[b])}" y2="{_f(py[b])}" '
                f'stroke="#7f7f7f" stroke-opacity="0.08" stroke-width="0.5"/>')
    for k, node in enumerate(network.nodes):
        doc.add(f'<circle class="node" cx="{_f(px[k])}" cy="{_f(py[k])}" r="{_f(spec.point_radius)}" '
                f'fill="{hex_color(color_at(node.normalized_size, spec.color_map))}"/>')
    return doc.close()


# --------------------------------------------------------------------------
# summary
# --------------------------------------------------------------------------

@dataclass
class RunSummary:
    pores: int
    boundary_size: int | None = None
    network_nodes: int | None = None
    network_edges: int | None = None
    network_pairs: int | None = None
    distance_threshold: float | None = None
    n_train: int | None = None
    n_test: int | None = None
    rmse: float | None = None
    r_squared: float | None = None
    importance: ImportanceReport | None = None
    extra: dict = field(default_factory=dict)


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render_summary(s: RunSummary) -> str:
    lines = [
        "porecrit run summary",
        f"pores_retained: {_fmt(s.pores)}",
        f"boundary_component_voxels: {_fmt(s.boundary_size)}",
        f"network_nodes: {_fmt(s.network_nodes)}",
        f"network_edges: {_fmt(s.network_edges)}",
        f"network_pairs: {_fmt(s.network_pairs)}",
        f"distance_threshold: {_fmt(s.distance_threshold)}",
        f"train_rows: {_fmt(s.n_train)}",
        f"test_rows: {_fmt(s.n_test)}",
        f"test_rmse: {_fmt(s.rmse)}",
        f"test_r_squared: {_fmt(s.r_squared)}",
    ]
    for k in sorted(s.extra):
        lines.append(f"{k}: {_fmt(s.extra[k])}")
    if s.importance is not None:
        lines.append("importance_ranking:")
        for r, name in enumerate(s.importance.ranking, start=1):
            lines.append(f"  {r}. {name} {_fmt(s.importance.importance_of(name))}")
        lines.append(f"dominance_factor: {_fmt(s.importance.dominance_factor)}")
        lines.append(f"residual_eps: {_fmt(s.importance.residual_eps)}")
    return "\n".join(lines) + "\n"
