"""Offline stage: spectral generator of the forward equation and its propagators.

The unnormalized density between observations solves

    du/dt = 1/2 d2/dx2 (g^2 q u) - d/dx (f u) - 1/2 (h^2 / s) u

which, in Galerkin form on the Hermite basis, is the linear ODE
``da/dt = A(t) a``.  The per-interval solution maps are computed here
before any observation is seen and stored in a :class:`PropagatorTable`.

Two allocations of the ``-1/2 h^2/s`` term are supported.  ``split="kfe"``
keeps it in the offline equation as written above, so the online update is
the bare factor ``exp(h dy / s)``.  ``split="likelihood"`` drops it from the
offline equation and lets the online update apply
``exp(h dy / s - h^2 dt / (2 s))`` instead.  Both are first-order splittings
of the same equation; the second keeps the online factor bounded by its
maximum over x, which matters for fast-growing sensors such as ``h = x^3``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .expr import depends_on
from .hermite import HermiteBasis
from .model import SPLITS, SensorModel

MAGIC = b"YYPT"
VERSION = 1
_HEADER = struct.Struct("<4sIddII")
METHODS = ("expm", "cn")



class PropagationError(RuntimeError):
    pass


class TableFormatError(ValueError):
    pass


def _diffusivity_slope(model: SensorModel, x, t, a):
    """d/dx of g^2 q by centered differences (exactly zero when g has no x)."""
    if not depends_on(model.g, "x"):
        return np.zeros_like(x)
    step = 1e-5 * np.maximum(1.0, np.abs(x))
    return (model.diffusivity(x + step, t) - model.diffusivity(x - step, t)) / (2 * step)


def _check_split(split: str) -> None:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; choose from {SPLITS}")


class _Assembler:
    """Builds A(t) for one (model, basis) pair, caching what does not change.

    The generator is linear in three node-value vectors (the diffusivity,
    the first-order coefficient and the potential).  A term whose field has
    no t dependence is assembled once; a term whose field has no x
    dependence is a scalar times a fixed matrix.
    """

    def __init__(self, model: SensorModel, basis: HermiteBasis):
        self.model = model
        self.basis = basis
        w, V, D = basis.weights, basis.values, basis.derivs
        self.pairs = {"a": (D * w, D), "first": (D * w, V), "potential": (V * w, V)}
        self.unit = {}
        self.fixed = {}
        m = model
        g_x = depends_on(m.g, "x")
        self.x_free = {
            "a": not g_x,
            "first": not (depends_on(m.f, "x") or g_x),
            "potential": not depends_on(m.h, "x"),
        }
        self.t_free = {
            "a": not (depends_on(m.g, "t") or depends_on(m.q, "t")),
            "first": not (depends_on(m.f, "t") or (g_x and (depends_on(m.g, "t") or depends_on(m.q, "t")))),
            "potential": not (depends_on(m.h, "t") or depends_on(m.s, "t")),
        }

    def fields(self, t: float) -> dict:
        model, x = self.model, self.basis.nodes
        a = model.diffusivity(x, t)
        da = _diffusivity_slope(model, x, t, a)
        f = model.drift(x, t)
        potential = model.obs(x, t) ** 2 / model.obs_var(t)
        for name, arr in (("g^2 q", a), ("d(g^2 q)/dx", da), ("f", f), ("h^2/s", potential)):
            if not np.all(np.isfinite(arr)):
                bad = x[~np.isfinite(arr)][0]
                raise PropagationError(f"non-finite {name} at x={bad:.6g}, t={t:.6g}")
        return {"a": -0.5 * a, "first": f - 0.5 * da, "potential": -0.5 * potential}

    def term(self, name: str, values: np.ndarray) -> np.ndarray:
        left, right = self.pairs[name]
        if self.t_free[name]:
            if name not in self.fixed:
                self.fixed[name] = (left * values) @ right.T
            return self.fixed[name]
        if self.x_free[name]:
            if name not in self.unit:
                self.unit[name] = left @ right.T
            return values[0] * self.unit[name]
        return (left * values) @ right.T

    def generator(self, t: float, split: str) -> np.ndarray:
        vals = self.fields(t)
        A = self.term("a", vals["a"])
        if np.any(vals["first"]):
            A = A + self.term("first", vals["first"])
            symmetric = False
        else:
            symmetric = True
        if split == "kfe":
            A = A + self.term("potential", vals["potential"])
        if symmetric:
            # Without a first-order term the generator is symmetric; make it so exactly.
            A = 0.5 * (A + A.T)
        return A


_ASSEMBLERS: dict = {}


def _assembler(model: SensorModel, basis: HermiteBasis) -> _Assembler:
    key = (id(model), id(basis))
    hit = _ASSEMBLERS.get(key)
    if hit is None or hit.model is not model or hit.basis is not basis:
        if len(_ASSEMBLERS) > 32:
            _ASSEMBLERS.clear()
        hit = _ASSEMBLERS[key] = _Assembler(model, basis)
    return hit


def assemble_generator(model: SensorModel, basis: HermiteBasis, t: float, split: str = "kfe") -> np.ndarray:
    """Galerkin matrix A(t) with ``A[m, n]`` the action of H_n tested on H_m.

    A[m, n] = -1/2 <(g^2 q H_n)', H_m'> + <f H_n, H_m'> - 1/2 <(h^2/s) H_n, H_m>

    The last term is omitted for ``split="likelihood"``.
    """
    _check_split(split)
    return _assembler(model, basis).generator(float(t), split)


def _expm_step(A: np.ndarray, h: float) -> np.ndarray:
    return scipy.linalg.expm(h * A)


def _cn_step(A: np.ndarray, h: float) -> np.ndarray:
    eye = np.eye(A.shape[0])
    try:
        return scipy.linalg.solve(eye - 0.5 * h * A, eye + 0.5 * h * A)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise PropagationError(f"singular Crank-Nicolson system: {exc}") from exc


def propagate_interval(
    model: SensorModel,
    basis: HermiteBasis,
    t0: float,
    t1: float,
    substeps: int = 10,
    method: str = "expm",
    split: str = "kfe",
) -> np.ndarray:
    """Solution map of ``da/dt = A(t) a`` over ``[t0, t1]``.

    Each of the ``substeps`` sub-intervals freezes A at its midpoint and
    advances either with the exact exponential of the frozen generator
    (``"expm"``) or with a Crank-Nicolson step (``"cn"``).  Both are second
    order in the substep; the exponential also damps the stiff modes of
    strongly confining potentials correctly, where Crank-Nicolson maps them to
    factors near -1.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    _check_split(split)
    if t1 < t0:
        raise PropagationError("t1 must not precede t0")
    if substeps < 1:
        raise PropagationError("substeps must be >= 1")
    size = basis.size
    if t1 == t0:
        return np.eye(size)
    step = _expm_step if method == "expm" else _cn_step
    delta = (t1 - t0) / substeps
    M = np.eye(size)
    for j in range(substeps):
        A = assemble_generator(model, basis, t0 + (j + 0.5) * delta, split)
        try:
            M = step(A, delta) @ M
        except PropagationError as exc:
            raise PropagationError(f"substep {j}: {exc}") from exc
    if not np.all(np.isfinite(M)):
        raise PropagationError("propagator has non-finite entries")
    return M


@dataclass
class PropagatorTable:
    alpha: float
    beta: float
    n_order: int
    times: np.ndarray
    mats: list
    split: str = "kfe"

    def __post_init__(self):
        _check_split(self.split)
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or self.times.size < 1:
            raise ValueError("times must be a non-empty 1-D sequence")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if len(self.mats) != self.times.size - 1:
            raise ValueError("need exactly one matrix per interval")

    @property
    def k(self) -> int:
        return len(self.mats)

    def header(self) -> tuple[float, float, int]:
        return (self.alpha, self.beta, self.n_order)

    def spectral_radii(self) -> np.ndarray:
        seen = {}
        out = []
        for M in self.mats:
            key = id(M)
            if key not in seen:
                seen[key] = float(np.max(np.abs(np.linalg.eigvals(M))))
            out.append(seen[key])
        return np.array(out)

    def __eq__(self, other):
        if not isinstance(other, PropagatorTable):
            return NotImplemented
        return (
            self.header() == other.header()
            and np.array_equal(self.times, other.times)
            and all(np.array_equal(a, b) for a, b in zip(self.mats, other.mats))
            and self.k == other.k
            and self.split == other.split
        )


def build_table(
    model: SensorModel,
    basis: HermiteBasis,
    partition,
    substeps: int = 10,
    method: str = "expm",
    split: str = "kfe",
) -> PropagatorTable:
    """Propagators for every interval of ``partition``.

    Time-invariant generators on a uniform partition share one matrix.
    """
    times = np.asarray(partition, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("partition needs at least two times")
    if np.any(np.diff(times) <= 0):
        raise ValueError("partition must be strictly increasing")
    widths = np.diff(times)
    uniform = np.allclose(widths, widths[0], rtol=1e-12, atol=0.0)
    mats = []
    if uniform and model.is_time_invariant():
        M = propagate_interval(model, basis, times[0], times[1], substeps, method, split)
        mats = [M] * (times.size - 1)
    else:
        for i in range(times.size - 1):
            try:
                mats.append(propagate_interval(model, basis, times[i], times[i + 1], substeps, method, split))
            except PropagationError as exc:
                raise PropagationError(f"interval {i}: {exc}") from exc
    return PropagatorTable(basis.alpha, basis.beta, basis.n_order, times, mats, split)


def save_table(table: PropagatorTable, path) -> None:
    """Write the little-endian ``YYPT`` v1 format."""
    size = table.n_order + 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, table.alpha, table.beta, table.n_order, table.k))
        fh.write(np.asarray(table.times, dtype="<f8").tobytes())
        for M in table.mats:
            M = np.asarray(M, dtype="<f8")
            if M.shape != (size, size):
                raise ValueError("matrix shape does not match n_order")
            fh.write(np.ascontiguousarray(M).tobytes())


def load_table(path, split: str = "kfe") -> PropagatorTable:
    """Read a ``YYPT`` v1 file.

    The format does not record the splitting, so the caller states which one
    the table was built with.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TableFormatError(
            f"truncated propagator table: expected at least {_HEADER.size} bytes, got {len(data)}"
        )
    magic, version, alpha, beta, n_order, k = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TableFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise TableFormatError(f"unsupported table version {version}")
    size = n_order + 1
    expected = _HEADER.size + 8 * (k + 1) + 8 * k * size * size
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "oversized"
        raise TableFormatError(f"{kind} propagator table: expected {expected} bytes, got {len(data)}")
    offset = _HEADER.size
    times = np.frombuffer(data, dtype="<f8", count=k + 1, offset=offset).astype(float)
    offset += 8 * (k + 1)
    block = np.frombuffer(data, dtype="<f8", count=k * size * size, offset=offset)
    block = block.astype(float).reshape(k, size, size)
    return PropagatorTable(alpha, beta, n_order, times, list(block), split)
