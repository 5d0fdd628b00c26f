"""SVG rendering of bifurcation diagrams, d_B curves and solution profiles."""

import logging
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402

from .continuation import Branch, EventKind  # noqa: E402
from .mesh_fem import Mesh  # noqa: E402
from .models import State  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MEASURES = ("v_at_origin", "u_L1", "u_L2")

_MARKERS = {
    EventKind.BRANCH_POINT: dict(marker="o", facecolors="none", edgecolors="k"),
    EventKind.FOLD: dict(marker="x", color="k"),
    EventKind.HOPF: dict(marker="s", facecolors="none", edgecolors="r"),
}

plt.rcParams["svg.hashsalt"] = "xdcont"


def _save(fig: plt.Figure, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _stable_runs(flags: np.ndarray):
    """(start, stop, stable) index runs; neighbouring runs share their end point."""
    start = 0
    for i in range(1, len(flags) + 1):
        if i == len(flags) or flags[i] != flags[start]:
            yield start, min(i + 1, len(flags)), bool(flags[start])
            start = i


def plot_diagram(branches: Sequence[Branch], path: PathLike, param_name: str = "d") -> Path:
    """One panel per measure; stable segments thick, unstable thin."""
    fig, axes = plt.subplots(len(MEASURES), 1, figsize=(6, 9), sharex=True)
    for k, branch in enumerate(branches):
        color = f"C{k % 10}"
        params = branch.params
        stable = np.array([pt.n_unstable == 0 for pt in branch.points])
        for ax, name in zip(axes, MEASURES):
            values = np.array([getattr(pt.measures, name) for pt in branch.points])
            for a, b, is_stable in _stable_runs(stable):
                ax.plot(params[a:b], values[a:b], color=color, lw=2.2 if is_stable else 0.8)
            for ev in branch.events:
                ax.scatter([ev.param_value], [getattr(ev.point.measures, name)], s=30,
                           zorder=3, **_MARKERS[ev.kind])
    for ax, name in zip(axes, MEASURES):
        ax.set_ylabel(name)
    axes[-1].set_xlabel(param_name)
    fig.tight_layout()
    return _save(fig, path)


def plot_d_b_curve(
    lambdas: np.ndarray, values: np.ndarray, path: PathLike, modes: Sequence[float] = ()
) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(lambdas, values, "k-", lw=1.2)
    for lam in modes:
        ax.axvline(lam, color="0.8", lw=0.5)
    ax.set_xlabel("lambda")
    ax.set_ylabel("d_B")
    fig.tight_layout()
    return _save(fig, path)


def plot_profile(mesh: Mesh, state: State, path: PathLike) -> Path:
    """Component profiles: lines in 1D, filled triangulation plots in 2D."""
    parts = state.components()
    names = state.model_tag.component_names
    if mesh.dim == 1:
        fig, ax = plt.subplots(figsize=(6, 4))
        x = mesh.nodes[:, 0]
        for name, values in zip(names, parts):
            ax.plot(x, values, label=name)
        ax.set_xlabel("x")
        ax.legend()
    else:
        tri = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.elements)
        fig, axes = plt.subplots(1, len(parts), figsize=(3 * len(parts), 6))
        for ax, name, values in zip(np.atleast_1d(axes), names, parts):
            shade = ax.tripcolor(tri, values, shading="gouraud")
            ax.set_aspect("equal")
            ax.set_title(name)
            fig.colorbar(shade, ax=ax)
    fig.suptitle(f"{state.param_name} = {state.param_value:.6g}")
    fig.tight_layout()
    return _save(fig, path)
