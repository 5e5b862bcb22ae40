"""Deterministic artifact output: CSV/JSON conventions and the run manifest.

Every file is staged to a temporary name in the target directory and
renamed into place only when the whole run succeeded, so failures leave no
partial artifacts.  CSV floats use full double precision ("%.17g") and
JSON is emitted with sorted keys, so byte-identical inputs give
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import UsageError
from .grid import Grid, GridPath

__all__ = ["ArtifactWriter", "format_float", "path_to_csv", "csv_to_path"]


def format_float(x) -> str:
    return "%.17g" % float(x)


def path_to_csv(path: GridPath) -> str:
    """Trajectory convention: header t,dim0,dim1,...; one node per row."""
    header = "t," + ",".join(f"dim{j}" for j in range(path.dim))
    lines = [header]
    for t, row in zip(path.times, path.values):
        lines.append(",".join([format_float(t)] + [format_float(v) for v in row]))
    return "\n".join(lines) + "\n"


def paths_to_csv(times: np.ndarray, stack: np.ndarray) -> str:
    """Multi-path convention: a leading integer `path` column, then t,dim0,...

    ``stack`` has shape (n_paths, n_nodes, dim); zero paths emit just the
    header.
    """
    dim = stack.shape[2] if stack.ndim == 3 else 1
    header = "path,t," + ",".join(f"dim{j}" for j in range(dim))
    lines = [header]
    for k in range(stack.shape[0]):
        for t, row in zip(times, stack[k]):
            lines.append(
                ",".join([str(k), format_float(t)] + [format_float(v) for v in row])
            )
    return "\n".join(lines) + "\n"


def csv_to_path(text: str) -> GridPath:
    """Inverse of ``path_to_csv`` for uniform grids."""
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or not lines[0].startswith("t,"):
        raise UsageError("trajectory CSV must start with a 't,dim0,...' header")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if data.shape[0] < 2:
        raise UsageError("trajectory CSV needs at least two nodes")
    t = data[:, 0]
    steps = np.diff(t)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise UsageError("trajectory CSV must be sampled on a uniform grid")
    grid = Grid(float(t[-1]), len(t) - 1)
    return GridPath(grid, data[:, 1:])


def rows_to_csv(header: list[str], rows: list[list]) -> str:
    def fmt(v):
        if isinstance(v, str):
            return v
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return format_float(v)

    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def json_text(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


@dataclass
class ArtifactWriter:
    """Stages named artifacts and commits them atomically with a manifest."""

    out_dir: str
    config_text: str
    seed: int
    staged: dict = field(default_factory=dict)

    def add_text(self, name: str, text: str) -> None:
        if name in self.staged:
            raise UsageError(f"artifact {name!r} already staged")
        self.staged[name] = text.encode("utf-8")

    def add_json(self, name: str, obj: dict) -> None:
        self.add_text(name, json_text(obj))

    def commit(self) -> str:
        """Write all staged artifacts plus the manifest; returns manifest path.

        Files land under temporary names first and are renamed only after
        every write succeeded.
        """
        os.makedirs(self.out_dir, exist_ok=True)
        config_hash = hashlib.sha256(self.config_text.encode("utf-8")).hexdigest()
        manifest = {
            "config_hash": config_hash,
            "tool_version": __version__,
            "seed": self.seed,
            "artifacts": [
                {
                    "name": name,
                    "sha256": hashlib.sha256(blob).hexdigest(),
                }
                for name, blob in sorted(self.staged.items())
            ],
        }
        pending = []
        try:
            for name, blob in sorted(self.staged.items()):
                final = os.path.join(self.out_dir, name)
                fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=f".{name}.")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(blob)
                pending.append((tmp, final))
            manifest_final = os.path.join(self.out_dir, "manifest.json")
            fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=".manifest.")
            with os.fdopen(fd, "wb") as fh:
                fh.write(json_text(manifest).encode("utf-8"))
            pending.append((tmp, manifest_final))
        except BaseException:
            for tmp, _ in pending:
                try:
                    os.unlink(tmp)
                except OSError:
                    pass
            raise
        for tmp, final in pending:
            os.replace(tmp, final)
        return os.path.join(self.out_dir, "manifest.json")
