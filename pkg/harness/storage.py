import json
import os
import struct
from typing import BinaryIO, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from sim.grid import Grid1D

SNAPSHOT_MAGIC = b"TSCP"
SNAPSHOT_VERSION = 1
# magic, version u32, n u64, dx f64, x_min f64
SNAPSHOT_HEADER = struct.Struct("<4sIQdd")


class RunStorage:
    """Single writer for everything a run emits under one output directory."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.outputs: List[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_csv(self, name: str, frame: pd.DataFrame, columns: Optional[Sequence[str]] = None) -> str:
        if columns is not None:
            frame = frame.reindex(columns=list(columns))
        path = self.path(name)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        self._track(name)
        return path

    def write_rows(self, name: str, rows: Sequence[dict], columns: Sequence[str]) -> str:
        return self.write_csv(name, pd.DataFrame(list(rows), columns=list(columns)), columns)

    def write_manifest(self, manifest: dict) -> str:
        path = self.path("manifest.json")
        with open(path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    def snapshots(self, grid: Grid1D, name: str = "snapshots.bin") -> "SnapshotWriter":
        self._track(name)
        return SnapshotWriter(self.path(name), grid)

    def _track(self, name: str):
        if name not in self.outputs:
            self.outputs.append(name)


class SnapshotWriter:
    """Binary wavefunction frames: a 32-byte header then little-endian complex128 per grid point."""

    def __init__(self, path: str, grid: Grid1D):
        self.path = path
        self.grid = grid
        self.frames = 0
        self._f: Optional[BinaryIO] = open(path, "wb")
        self._f.write(SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, grid.n, grid.dx, grid.x_min))

    def write(self, amps: np.ndarray):
        if amps.shape != (self.grid.n,):
            raise ValueError(f"frame has shape {amps.shape}, grid has {self.grid.n} points")
        self._f.write(np.ascontiguousarray(amps, dtype="<c16").tobytes())
        self.frames += 1

    def __call__(self, step: int, amps: np.ndarray):
        self.write(amps)

    def close(self):
        if self._f is not None:
            self._f.close()
            self._f = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_snapshots(path: str) -> Tuple[dict, np.ndarray]:
    """Header fields and a (frames, n) complex array."""
    with open(path, "rb") as f:
        raw = f.read()
    magic, version, n, dx, x_min = SNAPSHOT_HEADER.unpack_from(raw, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path} is not a snapshot stream")
    frames = np.frombuffer(raw, dtype="<c16", offset=SNAPSHOT_HEADER.size)
    header = {"version": version, "n": n, "dx": dx, "x_min": x_min}
    return header, frames.reshape(-1, n)
