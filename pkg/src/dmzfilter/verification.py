"""Independent reference solvers and the numerical studies built on them.

The finite-difference oracle solves the forward equation on a bounded
interval ``[-R, R]`` with zero Dirichlet data, using Crank-Nicolson in time
and centered second-order differences in space.  It shares no code with the
spectral pipeline beyond the model itself, so agreement between the two is
a genuine cross-check.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .model import SensorModel


class VerificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GriddedDensity:
    """Density values on the uniform grid of ``nx`` points spanning ``[x_min, x_max]``."""

    x_min: float
    x_max: float
    nx: int
    values: np.ndarray
    t: float

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    def mass(self) -> float:
        return float(np.trapezoid(self.values, dx=self.dx))

    def normalized(self) -> "GriddedDensity":
        return GriddedDensity(self.x_min, self.x_max, self.nx, self.values / self.mass(), self.t)


def l1_distance(a: GriddedDensity, b: GriddedDensity) -> float:
    """Trapezoidal integral of ``|a - b|``."""
    if (a.x_min, a.x_max, a.nx) != (b.x_min, b.x_max, b.nx):
        raise ValueError(
            f"grid mismatch: [{a.x_min}, {a.x_max}] x {a.nx} vs [{b.x_min}, {b.x_max}] x {b.nx}"
        )
    return float(np.trapezoid(np.abs(a.values - b.values), dx=a.dx))


def _as_observation_function(observations, partition):
    """Turn a callable, a SamplePath or an array of y values into y(tau_i)."""
    times = np.asarray(partition, dtype=float)
    if callable(observations):
        y = np.array([float(observations(t)) for t in times])
        return y - y[0]
    if hasattr(observations, "observations"):
        observations = observations.observations
    y = np.asarray(observations, dtype=float).ravel()
    if y.size == times.size - 1:
        y = np.concatenate([[0.0], y])
    if y.size != times.size:
        raise VerificationError(f"need {times.size - 1} observations, got {y.size}")
    return y


class _FdOperator:
    """Tridiagonal discretization of du/dt = 1/2 (a u)'' - (f u)' - V u on the interior nodes."""

    def __init__(self, model: SensorModel, x: np.ndarray):
        self.model = model
        self.x = x
        self.dx = float(x[1] - x[0])

    def bands(self, t: float):
        """(lower, diag, upper) coefficients for every node, boundary nodes included."""
        m, x, dx = self.model, self.x, self.dx
        a = m.diffusivity(x, t) * np.ones_like(x)
        f = m.drift(x, t) * np.ones_like(x)
        pot = 0.5 * m.obs(x, t) ** 2 / m.obs_var(t) * np.ones_like(x)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(f)) and np.all(np.isfinite(pot))):
            raise VerificationError(f"non-finite coefficients at t={t:.6g}")
        # Row j couples u_{j-1}, u_j, u_{j+1}; the column coefficient uses the
        # field evaluated at that column's node (conservative form).
        lower = 0.5 * a / dx**2 + 0.5 * f / dx  # coefficient of u_j in row j+1
        diag = -a / dx**2 - pot
        upper = 0.5 * a / dx**2 - 0.5 * f / dx  # coefficient of u_j in row j-1
        return lower, diag, upper

    def cn_step(self, u, t, h, left: float = 0.0, right: float = 0.0):
        """One Crank-Nicolson step of size ``h`` with the operator frozen at ``t + h/2``.

        The end values of ``u`` are the current Dirichlet data; ``left`` and
        ``right`` are the data at the new time level.
        """
        lower, diag, upper = self.bands(t + 0.5 * h)
        n = u.size
        # Interior rows 1..n-2. For row j: lo = lower[j-1], di = diag[j], up = upper[j+1].
        lo = lower[:-2]
        di = diag[1:-1]
        up = upper[2:]
        rhs = u[1:-1] + 0.5 * h * (di * u[1:-1] + lo * u[:-2] + up * u[2:])
        rhs[0] += 0.5 * h * lo[0] * left
        rhs[-1] += 0.5 * h * up[-1] * right
        ab = np.zeros((3, n - 2))
        ab[0, 1:] = -0.5 * h * up[:-1]
        ab[1] = 1.0 - 0.5 * h * di
        ab[2, :-1] = -0.5 * h * lo[1:]
        try:
            inner = solve_banded((1, 1), ab, rhs, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise VerificationError(f"linear solve failed at t={t:.6g}: {exc}") from exc
        out = np.empty_like(u)
        out[0], out[-1] = left, right
        out[1:-1] = inner
        if not np.all(np.isfinite(out)):
            raise VerificationError(f"non-finite values at t={t + h:.6g}")
        return out


def _update_factor(model, x, t, dy):
    with np.errstate(over="ignore"):  # overflow is reported by the caller
        return np.exp(model.obs(x, t) * dy / model.obs_var(t))


def fd_oracle_solve(
    model: SensorModel,
    R: float,
    nx: int,
    partition,
    observations=None,
    substeps: int = 4,
    initial=None,
) -> list[GriddedDensity]:
    """Split-step finite-difference solution on ``[-R, R]``.

    Between consecutive partition times the forward equation is advanced by
    ``substeps`` Crank-Nicolson steps; at each partition time the solution
    is multiplied pointwise by ``exp(h dy / s)``.  ``observations`` may be a
    callable ``y(t)``, a :class:`~dmzfilter.sde.SamplePath`, an array of y
    values (with or without the leading zero), or ``None`` for no data.
    Returns the density at every partition time, starting with the initial
    one.
    """
    if nx < 64:
        raise ValueError("nx must be at least 64")
    if not R > 0:
        raise ValueError("R must be positive")
    times = np.asarray(partition, dtype=float)
    y = np.zeros(times.size) if observations is None else _as_observation_function(observations, times)
    x = np.linspace(-R, R, nx)
    op = _FdOperator(model, x)
    u = model.initial_density(x) * np.ones_like(x) if initial is None else np.array(initial, dtype=float)
    u[0] = u[-1] = 0.0
    out = [GriddedDensity(-R, R, nx, u.copy(), float(times[0]))]
    for i in range(times.size - 1):
        h = (times[i + 1] - times[i]) / substeps
        for j in range(substeps):
            u = op.cn_step(u, times[i] + j * h, h)
        t1 = float(times[i + 1])
        dy = y[i + 1] - y[i]
        if dy != 0.0:
            with np.errstate(invalid="ignore"):
                u = u * _update_factor(model, x, t1, dy)
            if not np.all(np.isfinite(u)):
                raise VerificationError(f"update overflow at t={t1:.6g}")
        out.append(GriddedDensity(-R, R, nx, u.copy(), t1))
    return out


@dataclass(frozen=True)
class ConvergenceResult:
    k_list: tuple
    errors: tuple
    order: float | None

    def rows(self):
        return [(k, e) for k, e in zip(self.k_list, self.errors)]


def _fit_slope(xs, ys) -> float:
    return float(np.polyfit(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), 1)[0])


def convergence_study(
    model: SensorModel,
    R: float,
    nx: int,
    t_end: float,
    k_list,
    observation_path,
    substeps: int = 4,
) -> ConvergenceResult:
    """Self-convergence of the split-step scheme in the number of intervals.

    Each run with ``k`` uniform intervals is compared at ``t_end`` with a
    reference run using ``8 * max(k_list)`` intervals; the order is the
    least-squares slope of ``-log(error)`` against ``log(k)``.
    """
    k_list = [int(k) for k in k_list]
    if not k_list or any(k < 1 for k in k_list):
        raise ValueError("k_list must hold positive integers")
    for a, b in zip(k_list, k_list[1:]):
        if b <= a or b % a:
            raise ValueError("k_list must be increasing with each entry dividing the next")
    k_ref = 8 * k_list[-1]
    reference = fd_oracle_solve(model, R, nx, np.linspace(0.0, t_end, k_ref + 1), observation_path, substeps)[-1]
    errors = []
    for k in k_list:
        final = fd_oracle_solve(model, R, nx, np.linspace(0.0, t_end, k + 1), observation_path, substeps)[-1]
        errors.append(l1_distance(final, reference))
    order = None
    if len(k_list) > 1:
        order = -_fit_slope(np.log(k_list), np.log(errors))
    return ConvergenceResult(tuple(k_list), tuple(errors), order)


@dataclass(frozen=True)
class TruncationResult:
    R: tuple
    tail_gap: tuple
    decay_rate: float | None
    min_rate: float | None = None
    direct_gap: tuple = field(default=(), compare=False)

    def rows(self):
        return [(r, g) for r, g in zip(self.R, self.tail_gap)]


def _difference_run(model, x_small, partition, y, substeps, traces):
    """Solve for ``u_big - u_small`` on the small grid.

    The difference obeys the same linear split scheme with zero initial data
    and Dirichlet values equal to the big-ball solution at the small ball's
    end points, so it is computed without subtractive cancellation.
    """
    op = _FdOperator(model, x_small)
    w = np.zeros_like(x_small)
    left_tr, right_tr = traces
    w[0], w[-1] = left_tr[0], right_tr[0]
    step = 0
    for i in range(partition.size - 1):
        h = (partition[i + 1] - partition[i]) / substeps
        for j in range(substeps):
            step += 1
            w = op.cn_step(w, partition[i] + j * h, h, left_tr[step], right_tr[step])
        dy = y[i + 1] - y[i]
        if dy != 0.0:
            # Multiplying the end values too keeps them equal to the
            # post-update big-ball values.
            w = w * _update_factor(model, x_small, float(partition[i + 1]), dy)
    return w


def truncation_study(
    model: SensorModel,
    R_list,
    nx_per_unit: int,
    t_end: float,
    observation_path,
    dt: float = 0.01,
    substeps: int = 4,
) -> TruncationResult:
    """L1 gap on ``[-R_list[0]/2, R_list[0]/2]`` between each radius and the largest one.

    ``tail_gap[i]`` compares ``R_list[i]`` with ``R_list[-1]`` for every radius
    but the last.  ``decay_rate`` is the least-squares rate ``c`` in
    ``gap ~ exp(-c R)``; ``min_rate`` is the smallest rate between successive
    radii, so every successive ratio is at most ``exp(-min_rate * dR)``.
    """
    R_list = [float(r) for r in R_list]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must be increasing")
    if len(R_list) < 2:
        return TruncationResult((), (), None, None)
    spacing = 1.0 / nx_per_unit
    for r in R_list:
        if abs(r / spacing - round(r / spacing)) > 1e-9:
            raise ValueError("every radius must be a multiple of the grid spacing")
    k = int(round(t_end / dt))
    partition = dt * np.arange(k + 1)
    y = _as_observation_function(observation_path, partition) if observation_path is not None else np.zeros(k + 1)

    R_big = R_list[-1]
    nx_big = int(round(2 * R_big * nx_per_unit)) + 1
    x_big = np.linspace(-R_big, R_big, nx_big)
    op = _FdOperator(model, x_big)
    u = model.initial_density(x_big) * np.ones_like(x_big)
    u[0] = u[-1] = 0.0
    # Indices of +-R for every smaller radius on the big grid.
    index = {r: (int(round((R_big - r) * nx_per_unit)), int(round((R_big + r) * nx_per_unit))) for r in R_list[:-1]}
    traces = {r: ([u[a]], [u[b]]) for r, (a, b) in index.items()}
    for i in range(k):
        h = (partition[i + 1] - partition[i]) / substeps
        for j in range(substeps):
            u = op.cn_step(u, partition[i] + j * h, h)
            for r, (a, b) in index.items():
                traces[r][0].append(u[a])
                traces[r][1].append(u[b])
        dy = y[i + 1] - y[i]
        if dy != 0.0:
            u = u * _update_factor(model, x_big, float(partition[i + 1]), dy)
    big = GriddedDensity(-R_big, R_big, nx_big, u, float(partition[-1]))

    inner = R_list[0] / 2
    gaps, direct = [], []
    for r in R_list[:-1]:
        x_small = np.linspace(-r, r, int(round(2 * r * nx_per_unit)) + 1)
        w = _difference_run(model, x_small, partition, y, substeps, traces[r])
        sel = np.abs(x_small) <= inner + 1e-12
        gaps.append(float(np.trapezoid(np.abs(w[sel]), dx=spacing)))
        small = fd_oracle_solve(model, r, x_small.size, partition, y, substeps)[-1]
        a, b = index[r]
        diff = big.values[a : b + 1] - small.values
        direct.append(float(np.trapezoid(np.abs(diff[sel]), dx=spacing)))
    radii = R_list[:-1]
    decay = min_rate = None
    if len(radii) > 1 and all(g > 0 for g in gaps):
        decay = -_fit_slope(radii, np.log(gaps))
        min_rate = min(
            -(math.log(g1) - math.log(g0)) / (r1 - r0)
            for r0, r1, g0, g1 in zip(radii, radii[1:], gaps, gaps[1:])
        )
    return TruncationResult(tuple(radii), tuple(gaps), decay, min_rate, tuple(direct))


@dataclass(frozen=True)
class KalmanBucyPoint:
    mean: float
    cov: float


def kalman_bucy_exact(q: float, s: float, observations, dt: float, m0: float, p0: float) -> list[KalmanBucyPoint]:
    """Kalman-Bucy filter for ``dx = sqrt(q) dv``, ``dy = x dt + sqrt(s) dw``.

    ``observations`` are the values y(dt), y(2 dt), ... with y(0) = 0.
    Between observation times the record is taken as linear, so the mean
    obeys ``dm/dt = (P / s) (dy/dt - m)`` alongside ``dP/dt = q - P^2 / s``;
    the pair is integrated with classical fourth-order Runge-Kutta on
    ``dt / 100`` substeps.
    """
    if s <= 0 or dt <= 0 or p0 < 0:
        raise ValueError("need s > 0, dt > 0 and p0 >= 0")
    y = np.concatenate([[0.0], np.asarray(observations, dtype=float).ravel()])
    out = [KalmanBucyPoint(float(m0), float(p0))]
    m, P = float(m0), float(p0)
    h = dt / 100

    def rhs(m, P, rate):
        return P / s * (rate - m), q - P * P / s

    for i in range(y.size - 1):
        rate = (y[i + 1] - y[i]) / dt
        for _ in range(100):
            k1 = rhs(m, P, rate)
            k2 = rhs(m + 0.5 * h * k1[0], P + 0.5 * h * k1[1], rate)
            k3 = rhs(m + 0.5 * h * k2[0], P + 0.5 * h * k2[1], rate)
            k4 = rhs(m + h * k3[0], P + h * k3[1], rate)
            m += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            P += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        out.append(KalmanBucyPoint(m, P))
    return out


def write_rows_csv(path, header: tuple[str, str], rows) -> None:
    """Two-column study report with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for a, b in rows:
            writer.writerow([format(a, ".17g") if isinstance(a, float) else a, format(float(b), ".17g")])


def write_summary_json(path, key: str, value) -> None:
    with open(path, "w") as fh:
        json.dump({key: value}, fh)
        fh.write("\n")
