"""Delimited/JSON artifact formats and the output manifest.

Field slices go to CSV, one file per time node, row-major, with the header
line ``# t=<value> n=<n> a=<lo> b=<hi>``.  Boundary traces go to a single
CSV with columns (component, edge, boundary index, time index, value).
JSON documents are written with sorted keys and no volatile fields, so a
rerun with the same configuration and seed reproduces every byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .calculus import EDGES
from .cauchy import CauchyData
from .grids import SpatialGrid, TemporalGrid

_FLOAT_FMT = "%.17g"


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def slice_header(t: float, sgrid: SpatialGrid) -> str:
    return (f"# t={_FLOAT_FMT % t} n={sgrid.num_nodes} "
            f"a={_FLOAT_FMT % sgrid.lo} b={_FLOAT_FMT % sgrid.hi}")


def write_field_slice(path: Path, values: np.ndarray, t: float,
                      sgrid: SpatialGrid) -> None:
    """One (n, n) slice as CSV with the descriptive header line."""
    lines = [slice_header(t, sgrid)]
    lines += [",".join(_FLOAT_FMT % v for v in row) for row in values]
    path.write_text("\n".join(lines) + "\n")


def write_field_slices(directory: Path, name: str, values: np.ndarray,
                       tgrid: TemporalGrid, sgrid: SpatialGrid) -> list[Path]:
    """A (k+1, n, n) field as one CSV per time node."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in range(values.shape[0]):
        p = directory / f"{name}_t{s:03d}.csv"
        write_field_slice(p, values[s], float(tgrid.nodes[s]), sgrid)
        paths.append(p)
    return paths


def read_field_slice(path: Path) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`write_field_slice`; returns (values, header dict)."""
    lines = path.read_text().strip().split("\n")
    head = lines[0].lstrip("# ").split()
    meta = {k: float(v) if k != "n" else int(v)
            for k, v in (item.split("=") for item in head)}
    values = np.array([[float(x) for x in row.split(",")]
                       for row in lines[1:]])
    return values, meta


def write_cauchy_csv(path: Path, traces: np.ndarray) -> None:
    """Boundary traces (3, k+1, 4, n) in long form.

    Columns: component (1..3), edge name, boundary index along the edge,
    time index, value.
    """
    lines = ["component,edge,boundary_index,time_index,value"]
    comps, times, _, nodes = traces.shape
    for c in range(comps):
        for e, edge in enumerate(EDGES):
            for b in range(nodes):
                for s in range(times):
                    lines.append(
                        f"{c + 1},{edge},{b},{s},{_FLOAT_FMT % traces[c, s, e, b]}")
    path.write_text("\n".join(lines) + "\n")


def read_cauchy_csv(path: Path) -> np.ndarray:
    rows = path.read_text().strip().split("\n")[1:]
    parsed = [r.split(",") for r in rows]
    comps = max(int(r[0]) for r in parsed)
    times = max(int(r[3]) for r in parsed) + 1
    nodes = max(int(r[2]) for r in parsed) + 1
    out = np.zeros((comps, times, 4, nodes))
    edge_idx = {name: e for e, name in enumerate(EDGES)}
    for c, edge, b, s, v in parsed:
        out[int(c) - 1, int(s), edge_idx[edge], int(b)] = float(v)
    return out


def write_cauchy_pair(directory: Path, data: CauchyData,
                      prefix: str = "") -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    pd = directory / f"{prefix}dirichlet.csv"
    pn = directory / f"{prefix}neumann.csv"
    write_cauchy_csv(pd, data.dirichlet)
    write_cauchy_csv(pn, data.neumann)
    return [pd, pn]


def write_history_csv(path: Path, history: list[dict]) -> None:
    cols = ("iteration", "objective", "grad_norm", "state_norm", "omega",
            "theta_step")
    lines = [",".join(("iter",) + cols[1:])]
    for row in history:
        lines.append(",".join(
            str(row["iteration"]) if c == "iteration" else _FLOAT_FMT % row[c]
            for c in cols))
    path.write_text("\n".join(lines) + "\n")


def sha256_of(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(outdir: Path, staged: list[tuple[str, Path]]) -> Path:
    """manifest.json listing every artifact with its stage and content hash."""
    entries = [{"stage": stage,
                "path": str(p.relative_to(outdir)),
                "sha256": sha256_of(p)}
               for stage, p in staged]
    entries.sort(key=lambda e: (e["stage"], e["path"]))
    path = outdir / "manifest.json"
    write_json(path, {"artifacts": entries})
    return path
