"""Macroscopic fields from trajectories with Edie's box definitions.

Per box of size h_t x h_x: density = total time spent / (h_t h_x), flow =
total distance travelled / (h_t h_x), fuel field = total fuel burnt /
(h_t h_x). Trajectories are linear between samples and split exactly at
box boundaries. Boxes are half-open in both t and x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .energy import EnergyModel, default_model, fuel_rate

FIELD_UNITS = {
    "rho": "veh/m",
    "q": "veh/s",
    "f": "g/(m*s)",
    "u": "m/s",
    "phi": "g/(veh*s)",
    "psi": "g/(veh*m)",
}


@dataclass
class MacroGrid:
    h_t: float
    h_x: float
    t0: float
    x0: float
    rho: np.ndarray  # shape (n_x, n_t): rows are space bins, columns time bins
    q: np.ndarray
    f: np.ndarray

    @property
    def shape(self):
        return self.rho.shape

    @property
    def extent(self):
        """(t_min, t_max, x_min, x_max) covered by the grid."""
        n_x, n_t = self.shape
        return (self.t0, self.t0 + n_t * self.h_t, self.x0, self.x0 + n_x * self.h_x)

    def total_distance(self) -> float:
        return float(np.sum(self.q) * self.h_t * self.h_x)

    def total_time(self) -> float:
        return float(np.sum(self.rho) * self.h_t * self.h_x)


def _segment_boxes(t0, t1, x0, x1, T0, X0, h_t, h_x):
    """Split one linear segment at box boundaries: list of (it, ix, frac_of_segment, dx)."""
    cuts = [0.0, 1.0]
    if t1 > t0:
        for b in range(int(math.floor((t0 - T0) / h_t)) + 1, int(math.ceil((t1 - T0) / h_t))):
            cuts.append((T0 + b * h_t - t0) / (t1 - t0))
    if x1 > x0:
        for b in range(int(math.floor((x0 - X0) / h_x)) + 1, int(math.ceil((x1 - X0) / h_x))):
            cuts.append((X0 + b * h_x - x0) / (x1 - x0))
    cuts = sorted(c for c in set(cuts) if 0.0 <= c <= 1.0)
    out = []
    for s0, s1 in zip(cuts[:-1], cuts[1:]):
        if s1 <= s0:
            continue
        m = 0.5 * (s0 + s1)
        it = int(math.floor((t0 + m * (t1 - t0) - T0) / h_t))
        ix = int(math.floor((x0 + m * (x1 - x0) - X0) / h_x))
        out.append((it, ix, s1 - s0, (s1 - s0) * (x1 - x0)))
    return out


def edie_fields(traj, model: EnergyModel | None = None, h_t: float = 10.0, h_x: float = 200.0,
                origin: tuple | None = None) -> MacroGrid:
    """Density, flow and fuel fields on an h_t x h_x lattice.

    ``traj`` is a ``Trajectories`` (or any object with ids, t, x, v, a dicts).
    Fuel uses the rate at the start of each sample interval.
    """
    if not (h_t > 0 and h_x > 0):
        raise ValueError("box sizes must be positive")
    model = model or default_model()
    ids = [vid for vid in traj.ids if traj.t[vid].size >= 2]
    if not ids:
        T0, X0 = origin or (0.0, 0.0)
        z = np.zeros((1, 1))
        return MacroGrid(h_t, h_x, T0, X0, z, z.copy(), z.copy())
    for vid in ids:
        if np.max(np.diff(traj.t[vid])) > h_t / 10.0 + 1e-12:
            raise ValueError(f"{vid}: samples must be at most h_t/10 apart")
    t_min = min(float(traj.t[v][0]) for v in ids)
    t_max = max(float(traj.t[v][-1]) for v in ids)
    x_min = min(float(np.min(traj.x[v])) for v in ids)
    x_max = max(float(np.max(traj.x[v])) for v in ids)
    if origin is None:
        T0 = math.floor(t_min / h_t) * h_t
        X0 = math.floor(x_min / h_x) * h_x
    else:
        T0, X0 = origin
    n_t = max(1, int(math.ceil((t_max - T0) / h_t)))
    n_x = max(1, int(math.ceil((x_max - X0) / h_x)))
    time_ = np.zeros((n_x, n_t))
    dist = np.zeros((n_x, n_t))
    fuel = np.zeros((n_x, n_t))
    for vid in ids:
        t, x = traj.t[vid], traj.x[vid]
        rate = np.asarray(fuel_rate(traj.v[vid][:-1], traj.a[vid][:-1], 0.0, model), dtype=float)
        dt = np.diff(t)
        dx = np.diff(x)
        it0 = np.floor((t[:-1] - T0) / h_t).astype(int)
        ix0 = np.floor((x[:-1] - X0) / h_x).astype(int)
        it1 = np.ceil((t[1:] - T0) / h_t).astype(int) - 1
        ix1 = np.where(dx > 0, np.ceil((x[1:] - X0) / h_x).astype(int) - 1, ix0)
        simple = (it0 == it1) & (ix0 == ix1)
        if simple.any():
            need_t = max(n_t, int(it0[simple].max()) + 1)
            need_x = max(n_x, int(ix0[simple].max()) + 1)
            if (need_t, need_x) != (n_t, n_x):
                time_, dist, fuel = (np.pad(a, ((0, need_x - n_x), (0, need_t - n_t))) for a in (time_, dist, fuel))
                n_t, n_x = need_t, need_x
        np.add.at(time_, (ix0[simple], it0[simple]), dt[simple])
        np.add.at(dist, (ix0[simple], it0[simple]), dx[simple])
        np.add.at(fuel, (ix0[simple], it0[simple]), (rate * dt)[simple])
        for k in np.flatnonzero(~simple):
            for it, ix, frac, d in _segment_boxes(t[k], t[k + 1], x[k], x[k + 1], T0, X0, h_t, h_x):
                if not (0 <= it < n_t and 0 <= ix < n_x):
                    grow_t = max(n_t, it + 1)
                    grow_x = max(n_x, ix + 1)
                    time_, dist, fuel = (np.pad(a, ((0, grow_x - n_x), (0, grow_t - n_t))) for a in (time_, dist, fuel))
                    n_t, n_x = grow_t, grow_x
                time_[ix, it] += frac * dt[k]
                dist[ix, it] += d
                fuel[ix, it] += frac * dt[k] * rate[k]
    area = h_t * h_x
    return MacroGrid(h_t, h_x, T0, X0, time_ / area, dist / area, fuel / area)


def merge(grids) -> MacroGrid:
    """Sum grids with identical lattice and shape (partial grids of vehicle subsets)."""
    grids = list(grids)
    g0 = grids[0]
    for g in grids[1:]:
        if (g.h_t, g.h_x, g.t0, g.x0, g.shape) != (g0.h_t, g0.h_x, g0.t0, g0.x0, g0.shape):
            raise ValueError("grids must share lattice and shape")
    return MacroGrid(g0.h_t, g0.h_x, g0.t0, g0.x0, sum(g.rho for g in grids), sum(g.q for g in grids),
                     sum(g.f for g in grids))


def bulk_fields(grid: MacroGrid) -> dict:
    """u = q/rho, phi = f/rho, psi = f/q; NaN marks boxes without data."""
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(grid.rho > 0, grid.q / grid.rho, np.nan)
        phi = np.where(grid.rho > 0, grid.f / grid.rho, np.nan)
        psi = np.where(grid.q > 0, grid.f / grid.q, np.nan)
    return {"u": u, "phi": phi, "psi": psi}


# -- export -----------------------------------------------------------------------


def write_field_csv(path, values: np.ndarray, grid: MacroGrid, name: str):
    """Dense CSV: one row per space bin, one column per time bin; empty cell = no data."""
    values = np.asarray(values, dtype=float)
    units = FIELD_UNITS.get(name, "")
    n_x, n_t = values.shape
    lines = [f"# field={name} units={units} h_t={grid.h_t!r} h_x={grid.h_x!r} t0={grid.t0!r} "
             f"x0={grid.x0!r} rows=x cols=t"]
    lines.append(",".join(["x_lo"] + [repr(grid.t0 + j * grid.h_t) for j in range(n_t)]))
    for i in range(n_x):
        cells = ["" if np.isnan(v) else repr(float(v)) for v in values[i]]
        lines.append(",".join([repr(grid.x0 + i * grid.h_x)] + cells))
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_csv(path) -> tuple[np.ndarray, dict]:
    lines = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split())
    rows = []
    for line in lines[2:]:
        cells = line.split(",")[1:]
        rows.append([float(c) if c else np.nan for c in cells])
    return np.array(rows, dtype=float), meta


def _color(v, lo, hi) -> str:
    if np.isnan(v):
        return "#ffffff"
    s = 0.0 if hi <= lo else min(1.0, max(0.0, (v - lo) / (hi - lo)))
    # dark red (low) -> yellow -> green (high)
    if s < 0.5:
        r, g, b = 180 + int(150 * s), int(460 * s), 40
    else:
        r, g, b = int(255 * (1.0 - s) * 2), 200 + int(55 * (1.0 - s)), 40
    return f"#{min(r, 255):02x}{min(g, 255):02x}{b:02x}"


def write_heatmap_svg(path, values: np.ndarray, grid: MacroGrid, name: str, overlays=(),
                      width: int = 900, height: int = 500):
    """Standalone SVG heatmap (time right, space up) with optional trajectory overlays.

    ``overlays`` is a sequence of (vehicle_id, t, x, engaged) arrays; engaged
    stretches are drawn solid black, disengaged stretches dashed grey.
    """
    values = np.asarray(values, dtype=float)
    n_x, n_t = values.shape
    t_lo, t_hi, x_lo, x_hi = grid.extent
    finite = values[np.isfinite(values)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    sx = width / (t_hi - t_lo)
    sy = height / (x_hi - x_lo)
    cw, ch = grid.h_t * sx, grid.h_x * sy
    out = [f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}' "
           f"viewBox='0 0 {width} {height}'>",
           f"<title>{name} [{FIELD_UNITS.get(name, '')}]</title>",
           f"<g id='heatmap' data-t0='{t_lo!r}' data-t1='{t_hi!r}' data-x0='{x_lo!r}' data-x1='{x_hi!r}' "
           f"data-min='{lo!r}' data-max='{hi!r}'>"]
    for i in range(n_x):
        y = height - (i + 1) * ch
        for j in range(n_t):
            out.append(f"<rect x='{j * cw:.3f}' y='{y:.3f}' width='{cw:.3f}' height='{ch:.3f}' "
                       f"fill='{_color(values[i, j], lo, hi)}'/>")
    out.append("</g>")
    for vid, t, x, engaged in overlays:
        t, x, engaged = np.asarray(t), np.asarray(x), np.asarray(engaged, dtype=bool)
        px = (t - t_lo) * sx
        py = height - (x - x_lo) * sy
        start = 0
        for k in range(1, t.size + 1):
            if k < t.size and engaged[k] == engaged[start]:
                continue
            pts = " ".join(f"{px[m]:.2f},{py[m]:.2f}" for m in range(start, min(k + 1, t.size)))
            style = ("stroke='#000000' stroke-width='1.5'" if engaged[start]
                     else "stroke='#777777' stroke-width='1' stroke-dasharray='3,2'")
            cls = "engaged" if engaged[start] else "disengaged"
            out.append(f"<polyline class='{cls}' data-vehicle='{vid}' data-ticks='{k - start}' "
                       f"fill='none' {style} points='{pts}'/>")
            start = k
    out.append("</svg>")
    try:
        Path(path).write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {path}: {exc}") from exc
