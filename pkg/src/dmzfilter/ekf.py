"""Continuous-discrete extended Kalman-Bucy filter used as the baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SensorModel
from .sde import SamplePath

DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class EkfState:
    mean: float
    cov: float
    t: float
    diverged: bool = False


def _slope(func, m: float, t: float) -> float:
    step = 1e-6 * max(1.0, abs(m))
    return float((func(m + step, t) - func(m - step, t)) / (2 * step))


def ekf_run(model: SensorModel, path: SamplePath, m0: float, p0: float) -> list[EkfState]:
    """Euler-integrated EKF over the observation increments of ``path``.

    Per step: ``K = P H / s``; ``m += f dt + K (dy - h dt)``;
    ``P += (2 F P + g^2 q - K^2 s) dt`` clipped at zero, with ``F`` and ``H``
    the finite-difference slopes of f and h at the current mean.  Once the
    mean is non-finite or exceeds 1e6 in magnitude the state is frozen and
    every later entry is flagged ``diverged``.
    """
    if p0 < 0:
        raise ValueError("p0 must be non-negative")
    times = path.times
    dys = np.diff(path.observations)
    m, P = float(m0), float(p0)
    out = [EkfState(m, P, float(times[0]))]
    diverged = False
    for i, dy in enumerate(dys):
        t = float(times[i])
        dt = float(times[i + 1] - times[i])
        if not diverged:
            s = model.obs_var(t)
            F = _slope(model.drift, m, t)
            H = _slope(model.obs, m, t)
            f = float(model.drift(m, t))
            h = float(model.obs(m, t))
            gq = float(model.diffusivity(m, t))
            K = P * H / s
            m_new = m + f * dt + K * (dy - h * dt)
            P_new = max(P + (2 * F * P + gq - K * K * s) * dt, 0.0)
            if not (np.isfinite(m_new) and np.isfinite(P_new)) or abs(m_new) > DIVERGENCE_BOUND:
                diverged = True
            else:
                m, P = m_new, P_new
        out.append(EkfState(m, P, float(times[i + 1]), diverged))
    return out
