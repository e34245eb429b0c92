"""Embedding-space diagnostics: exact t-SNE to 2-D, unit-circle normalization,
Gaussian density fields, and circular von Mises kernel density curves.

The pipeline mirrors the usual clustering visualization: project a sample of
item embeddings to the plane, center and push every point to the unit circle,
then summarize point density both on a 2-D grid and as a curve over angles.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import i0 as bessel_i0


@dataclass
class Projection2D:
    item: int
    category: str
    x: float
    y: float


@dataclass
class DensityCurve:
    """Angular density over a 360-bin grid on [-pi, pi); integrates to 1."""

    theta: np.ndarray
    density: np.ndarray


@dataclass
class TsneResult:
    points: np.ndarray       # (n, 2)
    kl_trace: list           # (iteration, kl against the un-exaggerated affinities)


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _conditional_affinities(dists: np.ndarray, perplexity: float, tol: float = 1e-5,
                            max_steps: int = 50) -> np.ndarray:
    """Per-point Gaussian affinities with bandwidths bisected to the target perplexity."""
    n = dists.shape[0]
    p = np.zeros((n, n))
    log_target = np.log(perplexity)
    for i in range(n):
        di = np.delete(dists[i], i)
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        for _ in range(max_steps):
            w = np.exp(-di * beta)
            total = w.sum()
            if total <= 0:
                total = np.finfo(float).tiny
            probs = w / total
            entropy = np.log(total) + beta * float((di * probs).sum())
            diff = entropy - log_target
            if abs(diff) <= tol:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if np.isinf(beta_max) else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if np.isinf(beta_min) else (beta + beta_min) / 2.0
        row = np.zeros(n)
        row[np.arange(n) != i] = probs
        p[i] = row
    return p


def tsne_project(embeddings: np.ndarray, perplexity: float = 30.0, iters: int = 1000,
                 seed: int = 0, early_exaggeration: float = 12.0, exaggeration_iters: int = 250,
                 learning_rate: float | None = None) -> TsneResult:
    """Exact-gradient t-SNE with early exaggeration and momentum/gain schedule."""
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n > 2000:
        raise ValueError("exact t-SNE is limited to 2000 points")
    if perplexity >= n / 3:
        raise ValueError(f"perplexity {perplexity} too large for {n} points")
    dists = _pairwise_sq_dists(x)
    off_diag = dists[~np.eye(n, dtype=bool)]
    if off_diag.max() <= 0:
        raise ValueError("degenerate input: all rows identical")

    cond = _conditional_affinities(dists, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)

    if learning_rate is None:
        learning_rate = max(n / 12.0, 1.0)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)

    kl_trace: list[tuple[int, float]] = []
    for it in range(1, iters + 1):
        p_eff = p * early_exaggeration if it <= exaggeration_iters else p
        dy = _pairwise_sq_dists(y)
        num = 1.0 / (1.0 + dy)
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)

        pq = (p_eff - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)

        momentum = 0.5 if it <= exaggeration_iters else 0.8
        flip = np.sign(grad) != np.sign(update)
        gains = np.where(flip, gains + 0.2, gains * 0.8)
        gains = np.maximum(gains, 0.01)
        update = momentum * update - learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)

        kl = float(np.sum(p * np.log(p / q)))
        kl_trace.append((it, kl))

    return TsneResult(points=y, kl_trace=kl_trace)


def normalize_to_circle(points: np.ndarray) -> np.ndarray:
    """Center by the mean, then scale every point to unit L2 norm."""
    pts = np.asarray(points, dtype=np.float64)
    pts = pts - pts.mean(axis=0)
    norms = np.linalg.norm(pts, axis=1)
    zero = norms == 0.0
    if zero.any():
        pts[zero] += 1e-9
        norms = np.linalg.norm(pts, axis=1)
    return pts / norms[:, None]


def angles_of(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points)
    return np.arctan2(pts[:, 1], pts[:, 0])


def vmf_density(angles: np.ndarray, kappa: float = 25.0, bins: int = 360) -> DensityCurve:
    """Mean of von Mises kernels exp(kappa*cos(theta - theta_i)) / (2*pi*I0(kappa))."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    angles = np.asarray(angles, dtype=np.float64)
    if angles.size == 0:
        raise ValueError("need at least one angle")
    theta = -np.pi + 2.0 * np.pi * np.arange(bins) / bins
    kernels = np.exp(kappa * np.cos(theta[None, :] - angles[:, None]))
    density = kernels.mean(axis=0) / (2.0 * np.pi * bessel_i0(kappa))
    return DensityCurve(theta=theta, density=density)


def curve_integral(curve: DensityCurve) -> float:
    """Trapezoidal integral around the closed circle."""
    theta = np.append(curve.theta, curve.theta[0] + 2.0 * np.pi)
    density = np.append(curve.density, curve.density[0])
    return float(np.trapezoid(density, theta))


def sharpness(curve: DensityCurve, eps: float = 1e-6) -> float:
    """Peak-to-floor ratio of the angular density; higher means tighter clusters."""
    return float(curve.density.max() / (curve.density.min() + eps))


def scott_bandwidth(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=np.float64)
    sigma = np.sqrt(pts.var(axis=0).mean())
    return float(sigma * pts.shape[0] ** (-1.0 / 6.0))


def gaussian_kde2d(points: np.ndarray, bandwidth: float | None = None, grid: int = 100,
                   extent: float = 1.2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean of isotropic Gaussian kernels on a square grid over [-extent, extent]^2."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] < 2:
        raise ValueError("need at least 2 points")
    if bandwidth is None:
        bandwidth = scott_bandwidth(pts)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    axis = np.linspace(-extent, extent, grid)
    gx, gy = np.meshgrid(axis, axis)
    dx = gx.ravel()[:, None] - pts[None, :, 0]
    dy = gy.ravel()[:, None] - pts[None, :, 1]
    k = np.exp(-(dx * dx + dy * dy) / (2.0 * bandwidth ** 2))
    density = k.mean(axis=1) / (2.0 * np.pi * bandwidth ** 2)
    return gx, gy, density.reshape(grid, grid)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export(projections: list, curves: dict, out_dir, field=None, svg: bool = False) -> list:
    """Write point/curve CSVs (and optionally a density-field CSV and an SVG).

    Returns the list of written paths. `curves` maps a name to a DensityCurve;
    `field` is an optional (gx, gy, density) triple from gaussian_kde2d.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    points_path = out_dir / "points.csv"
    with open(points_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item", "category", "x", "y"])
        for p in projections:
            writer.writerow([p.item, p.category, f"{p.x:.9g}", f"{p.y:.9g}"])
    written.append(points_path)

    for name, curve in curves.items():
        curve_path = out_dir / f"density_{name}.csv"
        with open(curve_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta", "density"])
            for t, d in zip(curve.theta, curve.density):
                writer.writerow([f"{t:.9g}", f"{d:.9g}"])
        written.append(curve_path)

    if field is not None:
        gx, gy, density = field
        field_path = out_dir / "density_grid.csv"
        with open(field_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "density"])
            for xv, yv, dv in zip(gx.ravel(), gy.ravel(), density.ravel()):
                writer.writerow([f"{xv:.9g}", f"{yv:.9g}", f"{dv:.9g}"])
        written.append(field_path)

    if svg:
        svg_path = out_dir / "embedding.svg"
        _write_svg(svg_path, projections, curves)
        written.append(svg_path)
    return written


_SVG_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _write_svg(path, projections: list, curves: dict) -> None:
    """Minimal standalone SVG: unit-circle scatter on the left, density curves on the right."""
    width, height, radius = 900, 460, 180
    cx, cy = 230, 230
    categories = sorted({p.category for p in projections})
    color_of = {c: _SVG_COLORS[i % len(_SVG_COLORS)] for i, c in enumerate(categories)}

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<circle cx="{cx}" cy="{cy}" r="{radius}" fill="none" stroke="#cccccc"/>',
    ]
    for p in projections:
        parts.append(
            f'<circle cx="{cx + radius * p.x:.2f}" cy="{cy - radius * p.y:.2f}" r="2.5" '
            f'fill="{color_of[p.category]}" fill-opacity="0.6"/>'
        )
    plot_x, plot_w, plot_y, plot_h = 480, 380, 60, 340
    peak = max((float(c.density.max()) for c in curves.values()), default=1.0)
    parts.append(
        f'<rect x="{plot_x}" y="{plot_y}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#cccccc"/>'
    )
    for i, (name, curve) in enumerate(sorted(curves.items())):
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        coords = []
        for t, d in zip(curve.theta, curve.density):
            px = plot_x + (t + np.pi) / (2.0 * np.pi) * plot_w
            py = plot_y + plot_h - (d / peak) * plot_h
            coords.append(f"{px:.2f},{py:.2f}")
        parts.append(f'<polyline points="{" ".join(coords)}" fill="none" stroke="{color}"/>')
        parts.append(
            f'<text x="{plot_x + 8}" y="{plot_y + 18 + 16 * i}" font-size="12" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")
