"""Euler-Maruyama sample paths of the state and the observation process.

Noise comes from numpy's counter-based Philox4x32-10 bit generator seeded
with the run seed.  Each step consumes two uniforms ``(u1, u2)`` from
``Generator.random`` and turns them into the pair of independent standard
normals ``(xi, eta)`` with the Box-Muller transform::

    r = sqrt(-2 log(1 - u1));  xi = r cos(2 pi u2);  eta = r sin(2 pi u2)

``xi`` drives the state and ``eta`` the observation.  The recipe is fixed so
a (model, t_end, dt, x0, seed) tuple always yields the same bits.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .model import SensorModel


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplePath:
    times: np.ndarray
    states: np.ndarray
    observations: np.ndarray
    seed: int

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.observations)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "x_true", "y_obs"])
            for row in zip(self.times, self.states, self.observations):
                writer.writerow([format(float(v), ".17g") for v in row])

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> "SamplePath":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2], seed)


def normal_pairs(seed: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` Box-Muller pairs from a Philox stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.random((n, 2))
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    angle = 2.0 * np.pi * u[:, 1]
    return r * np.cos(angle), r * np.sin(angle)


def density_mode(model: SensorModel, bracket=(-10.0, 10.0)) -> float:
    """Location of the maximum of the initial density (grid search then refine)."""
    grid = np.linspace(*bracket, 4001)
    vals = model.initial_density(grid)
    j = int(np.nanargmax(vals))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    if hi <= lo:
        return float(grid[j])
    res = minimize_scalar(lambda x: -float(model.initial_density(x)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    x = float(res.x)
    if not model.initial_density(x) > vals[j]:
        x = float(grid[j])  # flat top: keep the grid point rather than a drifted one
    return 0.0 if abs(x) < 1e-8 else x


def simulate_paths(
    model: SensorModel,
    t_end: float,
    dt: float,
    x0: float | None = None,
    seeds=(0,),
) -> list[SamplePath]:
    """Simulate one path per seed, stepping all seeds together."""
    if not dt > 0:
        raise SimulationError("dt must be positive")
    if not t_end >= dt:
        raise SimulationError("t_end must be at least dt")
    k = int(round(t_end / dt))
    times = dt * np.arange(k + 1)
    if x0 is None:
        x0 = density_mode(model)
    seeds = [int(s) for s in seeds]
    if any(s < 0 for s in seeds):
        raise SimulationError("seeds must be unsigned")
    draws = [normal_pairs(s, k) for s in seeds]
    xi = np.stack([d[0] for d in draws], axis=1)
    eta = np.stack([d[1] for d in draws], axis=1)
    x = np.empty((k + 1, len(seeds)))
    y = np.empty((k + 1, len(seeds)))
    x[0], y[0] = x0, 0.0
    for i in range(k):
        t = times[i]
        q = model.process_var(t)
        s = model.obs_var(t)
        xi_t = x[i]
        drift = model.drift(xi_t, t)
        g = model.diffusion(xi_t, t)
        h = model.obs(xi_t, t)
        x[i + 1] = xi_t + drift * dt + g * np.sqrt(q * dt) * xi[i]
        y[i + 1] = y[i] + h * dt + np.sqrt(s * dt) * eta[i]
        bad = ~(np.isfinite(x[i + 1]) & np.isfinite(y[i + 1]))
        if np.any(bad):
            raise SimulationError(f"non-finite state at step {i + 1} (seed {seeds[int(np.argmax(bad))]})")
    return [SamplePath(times, x[:, j].copy(), y[:, j].copy(), s) for j, s in enumerate(seeds)]


def simulate_path(
    model: SensorModel,
    t_end: float,
    dt: float,
    x0: float | None = None,
    seed: int = 0,
) -> SamplePath:
    """Simulate ``x`` and ``y`` on the grid ``0, dt, ..., t_end`` with y(0) = 0.

    ``x0`` defaults to the mode of the initial density.
    """
    return simulate_paths(model, t_end, dt, x0, [seed])[0]
