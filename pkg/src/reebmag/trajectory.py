"""Sampled flow lines and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import ChartPoint


@dataclass(frozen=True)
class TangentState:
    q: ChartPoint
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise InputError("velocity must be finite")
        object.__setattr__(self, "v", v)


@dataclass
class Trajectory:
    """Time samples of a flow line.

    ``coords``/``vels`` are chart coordinates; consecutive samples share a
    chart unless a transition between them is logged in
    ``meta["transitions"]`` as ``(index, time, from_chart, to_chart)``.
    Torus coordinates are kept on the universal cover (never wrapped).
    """

    times: np.ndarray
    coords: np.ndarray
    vels: np.ndarray
    charts: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def state(self, i):
        return TangentState(ChartPoint(self.coords[i], int(self.charts[i])), self.vels[i])

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0])

    def uniform_step(self, rtol=1e-9):
        """The common time step, or None for non-uniform sampling."""
        if len(self.times) < 2:
            return None
        steps = np.diff(self.times)
        if np.max(np.abs(steps - steps[0])) > rtol * max(abs(steps[0]), 1.0):
            return None
        return float(steps[0])

    def segments(self):
        """Index ranges ``(start, stop)`` of maximal single-chart runs."""
        breaks = np.flatnonzero(np.diff(self.charts) != 0) + 1
        edges = [0, *breaks.tolist(), len(self.times)]
        return list(zip(edges[:-1], edges[1:]))

    def embedded(self, manifold):
        return manifold.embed(self.coords, self.vels, self.charts)

    def slice(self, start, stop):
        return Trajectory(
            self.times[start:stop].copy(),
            self.coords[start:stop].copy(),
            self.vels[start:stop].copy(),
            self.charts[start:stop].copy(),
            dict(self.meta),
        )


CSV_HEADER_NOTE = "# reebmag trajectory: time, chart_id, chart coordinates q, chart velocity v, kinetic energy"


def write_csv(traj, path, manifold=None, energies=None):
    """Dump samples with 17 significant digits.

    Torus coordinates are written as canonical representatives in [0, 1).
    """
    dim = traj.coords.shape[1]
    coords = traj.coords
    charts = traj.charts
    if manifold is not None and manifold.key.startswith("t3"):
        coords, _ = manifold.normalize(coords, charts)
    if energies is None:
        energies = traj.meta.get("energies")
    if energies is None:
        energies = np.full(len(traj), np.nan)
    columns = ["time", "chart_id"] + [f"q{i}" for i in range(dim)] + [f"v{i}" for i in range(dim)] + ["energy"]
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER_NOTE + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for t, c, q, v, e in zip(traj.times, charts, coords, traj.vels, energies):
            writer.writerow([f"{t:.17g}", int(c), *(f"{a:.17g}" for a in q), *(f"{a:.17g}" for a in v), f"{e:.17g}"])


def read_csv(path):
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    dim = (len(header) - 3) // 2
    return Trajectory(
        times=body[:, 0],
        coords=body[:, 2 : 2 + dim],
        vels=body[:, 2 + dim : 2 + 2 * dim],
        charts=body[:, 1].astype(int),
        meta={"energies": body[:, -1]},
    )
