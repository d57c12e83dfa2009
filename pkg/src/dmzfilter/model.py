"""Signal/observation models and experiment configuration.

A model is the scalar system::

    dx = f(x, t) dt + g(x, t) dv,    E[dv^2] = q(t) dt
    dy = h(x, t) dt + dw,            E[dw^2] = s(t) dt

with an (unnormalized) initial density ``sigma0(x)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expr import Node, depends_on, eval_expression, parse_expression, to_source

FIELDS = ("f", "h", "g", "q", "s", "sigma0")
MAX_ORDER = 512
SPLITS = ("kfe", "likelihood")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SensorModel:
    f: Node
    h: Node
    g: Node
    q: Node
    s: Node
    sigma0: Node
    state_dim: int = 1

    def __post_init__(self):
        if self.state_dim != 1:
            raise ModelError("only scalar state models are supported")
        for name in ("q", "s"):
            if depends_on(getattr(self, name), "x"):
                raise ModelError(f"{name} must be a function of t only")

    @classmethod
    def from_strings(cls, **sources: str) -> "SensorModel":
        missing = set(FIELDS) - set(sources)
        if missing:
            raise ModelError(f"missing model fields: {sorted(missing)}")
        return cls(**{k: parse_expression(sources[k]) for k in FIELDS})

    def to_strings(self) -> dict[str, str]:
        return {k: to_source(getattr(self, k)) for k in FIELDS}

    # Vectorized field evaluation; results always have the broadcast shape of x.
    def _field(self, name, x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(eval_expression(getattr(self, name), x, t), x.shape).astype(float)

    def drift(self, x, t):
        return self._field("f", x, t)

    def obs(self, x, t):
        return self._field("h", x, t)

    def diffusion(self, x, t):
        return self._field("g", x, t)

    def process_var(self, t) -> float:
        return float(eval_expression(self.q, 0.0, t))

    def obs_var(self, t) -> float:
        return float(eval_expression(self.s, 0.0, t))

    def initial_density(self, x):
        return self._field("sigma0", x, 0.0)

    def diffusivity(self, x, t):
        """g(x, t)^2 q(t), the coefficient of the second-order term."""
        return self.diffusion(x, t) ** 2 * self.process_var(t)

    def is_time_invariant(self) -> bool:
        return not any(depends_on(getattr(self, k), "t") for k in ("f", "h", "g", "q", "s"))


_BUILTINS = {
    "cubic": dict(f="0", g="1", q="1", s="1", h="x^3", sigma0="exp(-x^4/4)"),
    "almost_linear_tv": dict(
        f="0", g="1 + 0.1*cos(20*pi*t)", q="1", s="1", h="x*(1+0.25*cos(x))", sigma0="exp(-x^2/2)"
    ),
    "linear_gaussian": dict(f="0", g="1", q="1", s="1", h="x", sigma0="exp(-x^2/2)"),
}


def builtin_model(name: str) -> SensorModel:
    """One of ``cubic``, ``almost_linear_tv`` or ``linear_gaussian``."""
    try:
        return SensorModel.from_strings(**_BUILTINS[name])
    except KeyError:
        raise ModelError(f"unknown builtin model {name!r}; choose from {sorted(_BUILTINS)}") from None


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)


@dataclass
class Violation:
    kind: str
    x: float | None
    t: float | None
    value: float

    def __str__(self):
        where = ", ".join(f"{k}={v:.6g}" for k, v in (("x", self.x), ("t", self.t)) if v is not None)
        return f"{self.kind} at {where} (value {self.value:.6g})"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def validate_model(model: SensorModel, window, samples: int = 200) -> ValidationReport:
    """Screen a model on a uniform (x, t) grid.

    Checks s(t) > 0, g^2 q > 0 (ellipticity), sigma0 >= 0 and finiteness of
    every field. ``window`` is ``(x_min, x_max, t_end)``.
    """
    x_min, x_max, t_end = window
    if not x_max > x_min or not t_end >= 0:
        raise ModelError("degenerate validation window")
    xs = np.linspace(x_min, x_max, samples)
    ts = np.linspace(0.0, t_end, samples)
    report = ValidationReport()

    def flag(kind, mask, values, xg=None, tg=None):
        idx = np.flatnonzero(mask)
        if idx.size:
            j = idx[0]
            report.violations.append(
                Violation(
                    kind,
                    None if xg is None else float(xg.flat[j]),
                    None if tg is None else float(tg.flat[j]),
                    float(values.flat[j]),
                )
            )

    s = np.array([model.obs_var(t) for t in ts])
    flag("non-finite S(t)", ~np.isfinite(s), s, tg=ts)
    flag("S(t)<=0", np.isfinite(s) & (s <= 0), s, tg=ts)
    q = np.array([model.process_var(t) for t in ts])
    flag("non-finite Q(t)", ~np.isfinite(q), q, tg=ts)
    flag("Q(t)<0", np.isfinite(q) & (q < 0), q, tg=ts)

    X, T = np.meshgrid(xs, ts)
    for name, label in (("f", "f"), ("h", "h"), ("g", "G")):
        vals = model._field(name, X, T)
        flag(f"non-finite {label}", ~np.isfinite(vals), vals, X, T)
    a = model.diffusion(X, T) ** 2 * q[:, None]
    flag("ellipticity G^2 Q<=0", np.isfinite(a) & (a <= 0), a, X, T)

    s0 = model.initial_density(xs)
    flag("non-finite sigma0", ~np.isfinite(s0), s0, xg=xs)
    flag("sigma0<0", np.isfinite(s0) & (s0 < 0), s0, xg=xs)
    return report


@dataclass
class ModelConfig:
    model: SensorModel
    alpha: float = 1.0
    beta: float = 0.0
    n_order: int = 40
    t_end: float = 1.0
    dt: float = 0.01
    seed: int = 0
    split: str = "kfe"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ModelError(f"split must be one of {SPLITS}")
        if not self.alpha > 0:
            raise ModelError("basis.alpha must be positive")
        if not 0 <= int(self.n_order) <= MAX_ORDER:
            raise ModelError(f"basis.n_order must be in [0, {MAX_ORDER}]")
        if not (self.t_end > 0 and self.dt > 0):
            raise ModelError("time.t_end and time.dt must be positive")
        k = self.t_end / self.dt
        if abs(k - round(k)) > 1e-12 * max(1.0, k):
            raise ModelError("time.dt must divide time.t_end")
        if self.seed < 0:
            raise ModelError("seed must be unsigned")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def partition(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        try:
            model = doc["model"]
            if isinstance(model, str):
                model = builtin_model(model)
            else:
                model = SensorModel.from_strings(**model)
            basis = doc.get("basis", {})
            time = doc.get("time", {})
            return cls(
                model=model,
                alpha=float(basis.get("alpha", 1.0)),
                beta=float(basis.get("beta", 0.0)),
                n_order=int(basis.get("n_order", 40)),
                t_end=float(time["t_end"]),
                dt=float(time["dt"]),
                seed=int(doc.get("seed", 0)),
                split=str(doc.get("split", "kfe")),
            )
        except KeyError as exc:
            raise ModelError(f"config is missing key {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        doc = {
            "model": self.model.to_strings(),
            "basis": {"alpha": self.alpha, "beta": self.beta, "n_order": self.n_order},
            "time": {"t_end": self.t_end, "dt": self.dt},
            "seed": self.seed,
        }
        if self.split != "kfe":
            doc["split"] = self.split
        return doc


def load_config(path) -> ModelConfig:
    return ModelConfig.from_dict(json.loads(Path(path).read_text()))
