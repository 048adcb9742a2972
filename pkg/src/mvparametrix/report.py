"""Report emission: CSV tables, run manifests, and figures.

CSV bodies are deterministic functions of the data: floats are written
with 17 significant digits, rows in the order supplied.  Manifests record
the configuration hash, seed, and library versions so a result file can
always be traced back to its inputs.
"""

from __future__ import annotations

import platform
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402
import scipy  # noqa: E402

__all__ = ["format_value", "write_csv", "write_manifest", "save_figure"]


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows) -> Path:
    """Comma-separated table with a header row and 17-significant-digit floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_manifest(path, cfg, extra: dict = None) -> Path:
    """Plain-text manifest: config hash, seed, inputs, and versions."""
    from . import __version__

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"experiment: {cfg.experiment}",
        f"config_hash: {cfg.content_hash()}",
        f"seed: {cfg.seed}",
        f"model: {cfg.model_name} {sorted(cfg.model_params.items())}",
        f"init: {cfg.init_kind} {sorted(cfg.init_params.items())}",
        f"window: s={cfg.s:.17g} t={cfg.t:.17g} dt={cfg.dt:.17g}",
        f"sizes: n_particles={cfg.n_particles} n_mc={cfg.n_mc}",
        (f"grid: box=[{cfg.box_lo:.17g},{cfg.box_hi:.17g}] "
         f"n_space={cfg.n_space} n_time={cfg.n_time} trunc={cfg.trunc}"),
        f"config_file: {cfg.source.get('path')}",
        f"overrides: {cfg.source.get('overrides')}",
        f"mvparametrix: {__version__}",
        f"python: {sys.version.split()[0]}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        f"matplotlib: {matplotlib.__version__}",
        f"platform: {platform.platform()}",
    ]
    path.write_text("\n".join(lines) + "\n")
    return path


def save_figure(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
