"""Online stage: propagate with a stored matrix, then absorb the new observation.

Each step costs one dense mat-vec for the prediction plus a synthesis and a
re-projection at the quadrature nodes for the multiplicative update
``u <- exp(h(x, t) (y_new - y_prev) / s(t)) u``.  Nothing but the current
coefficient vector and the last observation is carried between steps.

When the table was built with ``split="likelihood"`` the update factor also
carries ``exp(-h^2 dt / (2 s))``, the term that table leaves out.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .expr import depends_on
from .hermite import HermiteBasis
from .model import SensorModel
from .propagator import PropagatorTable

EXPONENT_LIMIT = 700.0
INIT_TAIL_LIMIT = 1e-3
UPDATE_TAIL_LIMIT = 1e-2
MASS_FLOOR = 1e-300
RENORM_BAND = (1e-6, 1e6)
SUPPORT_FLOOR = 1e-10


class FilterError(RuntimeError):
    """Numerical failure of the online filter (overflow, collapse, mismatch)."""


@dataclass(frozen=True)
class FilterState:
    """Coefficients of the unnormalized density plus bookkeeping.

    ``log_scale`` is the natural log of the factor divided out by
    renormalization, so the true coefficients are ``coeffs * exp(log_scale)``.
    """

    coeffs: np.ndarray
    t: float
    y_prev: float
    step_index: int
    log_scale: float = 0.0

    def to_json(self) -> str:
        """JSON snapshot; floats carry 17 significant digits so the round trip is exact."""
        coeffs = ", ".join(_f17(c) for c in self.coeffs)
        return (
            f'{{"t": {_f17(self.t)}, "y_prev": {_f17(self.y_prev)}, '
            f'"step_index": {int(self.step_index)}, "scale": {_f17(self.log_scale)}, '
            f'"coeffs": [{coeffs}]}}'
        )

    @classmethod
    def from_json(cls, text: str) -> "FilterState":
        doc = json.loads(text)
        return cls(
            coeffs=np.array(doc["coeffs"], dtype=float),
            t=float(doc["t"]),
            y_prev=float(doc["y_prev"]),
            step_index=int(doc["step_index"]),
            log_scale=float(doc["scale"]),
        )


def _f17(value) -> str:
    return format(float(value), ".17g")


@dataclass(frozen=True)
class Estimate:
    mean: float
    variance: float
    mass: float
    t: float
    log_mass: float = 0.0
    elapsed: float = field(default=0.0, compare=False)


class _NodeCache:
    """Per-(model, basis) quantities reused on every step."""

    def __init__(self, model: SensorModel, basis: HermiteBasis):
        self.model = model
        self.basis = basis
        self.synth = np.ascontiguousarray(basis.values.T)
        self.analysis = np.ascontiguousarray(basis.analysis)
        self.moments = basis.moment_vectors()
        self.static = not depends_on(model.h, "t") and not depends_on(model.s, "t")
        if self.static:
            self._gain, self._potential = self._evaluate(0.0)

    def _evaluate(self, t: float):
        h = self.model.obs(self.basis.nodes, t)
        s = self.model.obs_var(t)
        return h / s, 0.5 * h * h / s

    def gain(self, t: float) -> np.ndarray:
        """h(x_j, t) / s(t) at the quadrature nodes."""
        return self._gain if self.static else self._evaluate(t)[0]

    def potential(self, t: float) -> np.ndarray:
        """h(x_j, t)^2 / (2 s(t)) at the quadrature nodes."""
        return self._potential if self.static else self._evaluate(t)[1]


_CACHE: dict = {}


def _cache(model, basis) -> _NodeCache:
    key = (id(model), id(basis))
    hit = _CACHE.get(key)
    if hit is None or hit.model is not model or hit.basis is not basis:
        if len(_CACHE) > 32:
            _CACHE.clear()
        hit = _CACHE[key] = _NodeCache(model, basis)
    return hit


def _check_header(basis: HermiteBasis, table: PropagatorTable):
    if basis.header() != table.header():
        raise FilterError(f"basis (alpha, beta, N)={basis.header()} does not match table {table.header()}")


def _renormalize(coeffs, log_scale, mass):
    lo, hi = RENORM_BAND
    if lo <= mass <= hi:
        return coeffs, log_scale
    return coeffs / mass, log_scale + math.log(mass)


def init_filter(model: SensorModel, basis: HermiteBasis, table: PropagatorTable) -> FilterState:
    """Project the initial density; the first observation is y_0 = 0."""
    _check_header(basis, table)
    coeffs = basis.project(model.initial_density)
    tail = basis.tail_ratio(coeffs)
    if tail > INIT_TAIL_LIMIT:
        raise FilterError(f"basis too small for the initial density (tail ratio {tail:.3g})")
    mass = float(_cache(model, basis).moments[0] @ coeffs)
    if not mass > 0:
        raise FilterError("initial density has no positive mass")
    coeffs, log_scale = _renormalize(coeffs, 0.0, mass)
    return FilterState(coeffs, float(table.times[0]), 0.0, 0, log_scale)


def predict_step(state: FilterState, table: PropagatorTable) -> FilterState:
    """Advance to the next observation time with the stored propagator."""
    i = state.step_index
    if not 0 <= i < table.k:
        raise FilterError(f"step index {i} outside table with {table.k} intervals")
    coeffs = table.mats[i] @ state.coeffs
    return replace(state, coeffs=coeffs, t=float(table.times[i + 1]), step_index=i + 1)


def support_mask(values, floor: float = SUPPORT_FLOOR) -> np.ndarray:
    """Contiguous run of nodes around the peak where values exceed ``floor * peak``.

    Outside this run the synthesized density is at the level of spectral
    truncation ripples; those ripples must not be multiplied by the (possibly
    enormous) observation factor.
    """
    values = np.asarray(values)
    j = int(np.argmax(values))
    keep = values > floor * values[j]
    lo = j
    while lo > 0 and keep[lo - 1]:
        lo -= 1
    hi = j
    while hi < values.size - 1 and keep[hi + 1]:
        hi += 1
    mask = np.zeros(values.size, dtype=bool)
    mask[lo : hi + 1] = True
    return mask


def update_step(
    state: FilterState,
    y_new: float,
    model: SensorModel,
    basis: HermiteBasis,
    floor: float | None = SUPPORT_FLOOR,
    split: str = "kfe",
    dt: float = 0.0,
) -> FilterState:
    """Multiply by exp(h dy / s) at the nodes and project back onto the basis.

    With ``floor`` set (the default) the multiplication is restricted to
    :func:`support_mask` and the exponents are shifted by their maximum over
    that support, the shift going into ``log_scale``.  With ``floor=None`` all
    nodes are multiplied as they are and an exponent above 700 anywhere is an
    error.  ``split="likelihood"`` subtracts ``h^2 dt / (2 s)`` from the
    exponent, ``dt`` being the length of the interval just predicted over.
    """
    cache = _cache(model, basis)
    dy = y_new - state.y_prev
    if split == "kfe":
        if dy == 0.0:
            return replace(state, y_prev=float(y_new))
        exponent = cache.gain(state.t) * dy
    elif split == "likelihood":
        exponent = cache.gain(state.t) * dy - cache.potential(state.t) * dt
    else:
        raise ValueError(f"unknown split {split!r}")
    values = cache.synth @ state.coeffs
    log_scale = state.log_scale
    if floor is None:
        peak = exponent.max()
        if not peak <= EXPONENT_LIMIT:
            raise FilterError(
                f"update exponent {peak:.4g} exceeds {EXPONENT_LIMIT:g} at t={state.t:.6g} "
                "(basis window too wide or observation outlier)"
            )
        weighted = np.exp(exponent) * values
    else:
        mask = support_mask(values, floor)
        shift = exponent[mask].max()
        if not np.isfinite(shift):
            raise FilterError(f"non-finite update exponent at t={state.t:.6g}")
        weighted = np.where(mask, np.exp(np.where(mask, exponent - shift, 0.0)) * values, 0.0)
        log_scale += shift
    coeffs = cache.analysis @ weighted
    tail = basis.tail_ratio(coeffs)
    if tail > UPDATE_TAIL_LIMIT:
        raise FilterError(f"under-resolved density after update at t={state.t:.6g} (tail ratio {tail:.3g})")
    mass = float(cache.moments[0] @ coeffs)
    if not mass > MASS_FLOOR:
        raise FilterError(f"density mass collapsed to {mass:.3g} at t={state.t:.6g}")
    coeffs, log_scale = _renormalize(coeffs, log_scale, mass)
    return replace(state, coeffs=coeffs, y_prev=float(y_new), log_scale=log_scale)


def estimate(state: FilterState, basis: HermiteBasis, model: SensorModel | None = None) -> Estimate:
    """Conditional mean and variance from the moments of the current density."""
    if model is not None:
        moments = _cache(model, basis).moments
    else:
        moments = basis.moment_vectors()
    m0, m1, m2 = moments @ state.coeffs
    if not m0 > MASS_FLOOR:
        raise FilterError(f"density mass {m0:.3g} underflowed at t={state.t:.6g}")
    mean = m1 / m0
    var = m2 / m0 - mean * mean
    if -1e-10 <= var < 0:
        var = 0.0
    return Estimate(float(mean), float(var), float(m0), state.t, math.log(m0) + state.log_scale)


def _advance(state, y, model, basis, table):
    state = predict_step(state, table)
    i = state.step_index
    dt = float(table.times[i] - table.times[i - 1])
    return update_step(state, y, model, basis, split=table.split, dt=dt)


def run_filter(
    model: SensorModel,
    basis: HermiteBasis,
    table: PropagatorTable,
    observations,
    state: FilterState | None = None,
) -> list[Estimate]:
    """Filter a whole observation record.

    ``observations`` are the values y(tau_i) for the steps still ahead of
    ``state`` (by default a fresh start, i.e. tau_1..tau_k).  The returned list
    starts with the estimate at the starting time.  Each later estimate carries
    the wall-clock seconds spent on its predict/update/estimate in ``elapsed``.
    """
    if state is None:
        state = init_filter(model, basis, table)
    else:
        _check_header(basis, table)
    observations = np.asarray(observations, dtype=float).ravel()
    remaining = table.k - state.step_index
    if observations.size != remaining:
        raise FilterError(f"expected {remaining} observations, got {observations.size}")
    out = [estimate(state, basis, model)]
    clock = time.perf_counter
    for j, y in enumerate(observations):
        start = clock()
        try:
            state = _advance(state, float(y), model, basis, table)
            est = estimate(state, basis, model)
        except FilterError as exc:
            raise FilterError(f"step {state.step_index}: {exc}") from exc
        out.append(replace(est, elapsed=clock() - start))
    return out


def filter_states(model, basis, table, observations, state=None):
    """Yield the FilterState after each observation (for checkpointing)."""
    if state is None:
        state = init_filter(model, basis, table)
    yield state
    for y in np.asarray(observations, dtype=float).ravel():
        state = _advance(state, float(y), model, basis, table)
        yield state
