import json
import math

import numpy as np
import pytest

from dmzfilter.model import SensorModel
from dmzfilter.sde import simulate_path
from dmzfilter.verification import (
    GriddedDensity,
    VerificationError,
    convergence_study,
    fd_oracle_solve,
    kalman_bucy_exact,
    l1_distance,
    truncation_study,
    write_rows_csv,
    write_summary_json,
)

HEAT = SensorModel.from_strings(f="0", h="0", g="1", q="1", s="1", sigma0="exp(-x^2/0.2)")


def _grid(values, lo=-2.0, hi=2.0):
    values = np.asarray(values, dtype=float)
    return GriddedDensity(lo, hi, values.size, values, 0.0)


def test_l1_identical_is_zero():
    a = _grid(np.random.default_rng(0).random(101))
    assert l1_distance(a, a) == 0.0


def test_l1_constant_offset():
    a = _grid(np.sin(np.linspace(-2, 2, 257)))
    b = _grid(a.values + 0.3)
    assert l1_distance(a, b) == pytest.approx(0.3 * 4.0, abs=1e-12)


def test_l1_symmetric():
    rng = np.random.default_rng(1)
    a, b = _grid(rng.random(65)), _grid(rng.random(65))
    assert l1_distance(a, b) == l1_distance(b, a)


def test_l1_grid_mismatch():
    with pytest.raises(ValueError, match="grid mismatch"):
        l1_distance(_grid(np.zeros(65)), _grid(np.zeros(66)))


def _heat_error(nx):
    final = fd_oracle_solve(HEAT, 8.0, nx, [0.0, 0.5], substeps=50)[-1]
    var = 0.1 + 0.5
    exact = math.sqrt(0.2 * math.pi) * np.exp(-final.x**2 / (2 * var)) / math.sqrt(2 * math.pi * var)
    return l1_distance(final, GriddedDensity(-8.0, 8.0, nx, exact, 0.5))


def test_heat_kernel_agreement():
    assert _heat_error(2001) < 1e-4


def test_heat_self_convergence():
    coarse, fine = _heat_error(501), _heat_error(1001)
    assert coarse / fine >= 3.0


def test_boundary_values_zero(cubic):
    path = simulate_path(cubic, 0.2, 0.01, seed=0)
    for density in fd_oracle_solve(cubic, 5.0, 201, path.times, path):
        assert density.values[0] == 0.0 and density.values[-1] == 0.0


def test_observation_forms_agree(cubic):
    times = np.linspace(0, 0.1, 11)
    from_callable = fd_oracle_solve(cubic, 5.0, 101, times, np.sin)[-1].values
    from_array = fd_oracle_solve(cubic, 5.0, 101, times, np.sin(times[1:]))[-1].values
    np.testing.assert_array_equal(from_callable, from_array)
    with pytest.raises(VerificationError):
        fd_oracle_solve(cubic, 5.0, 101, times, np.zeros(5))


@pytest.mark.parametrize("R, nx", [(5.0, 63), (0.0, 101)])
def test_oracle_preconditions(cubic, R, nx):
    with pytest.raises(ValueError):
        fd_oracle_solve(cubic, R, nx, [0.0, 0.1])


def test_overflow_reported(cubic):
    with pytest.raises(VerificationError, match="overflow"):
        fd_oracle_solve(cubic, 8.0, 101, [0.0, 0.01], [0.0, 20.0])


def test_convergence_order_on_smooth_path(cubic):
    result = convergence_study(cubic, 6.0, 601, 1.0, [10, 20, 40, 80], np.sin)
    assert result.order >= 0.9
    for prev, nxt in zip(result.errors, result.errors[1:]):
        assert nxt <= 1.05 * prev
    assert result.rows()[0] == (10, result.errors[0])


def test_convergence_single_k(cubic):
    result = convergence_study(cubic, 6.0, 201, 0.2, [1], np.sin)
    assert len(result.errors) == 1 and result.order is None


@pytest.mark.parametrize("k_list", [[], [20, 10], [10, 15], [0, 10]])
def test_convergence_bad_k_list(cubic, k_list):
    with pytest.raises(ValueError):
        convergence_study(cubic, 6.0, 201, 0.2, k_list, np.sin)


def test_convergence_on_brownian_path_runs(cubic):
    path = simulate_path(cubic, 0.5, 0.5 / 320, seed=2)
    result = convergence_study(cubic, 6.0, 301, 0.5, [5, 10, 20, 40], lambda t: np.interp(t, path.times, path.observations))
    assert all(np.isfinite(result.errors))


def test_truncation_decay(cubic):
    result = truncation_study(cubic, [3, 4, 5, 6], 50, 1.0, np.sin)
    assert result.R == (3.0, 4.0, 5.0)
    assert all(b < a for a, b in zip(result.tail_gap, result.tail_gap[1:]))
    assert result.decay_rate > 0 and result.min_rate > 0


def test_truncation_difference_matches_subtraction(linear):
    # Gaussian tails are wide enough for small radii to give gaps far above round-off.
    result = truncation_study(linear, [1, 1.5, 2, 3], 50, 1.0, np.sin)
    np.testing.assert_allclose(result.tail_gap, result.direct_gap, rtol=1e-9)
    assert result.decay_rate > 0


def test_truncation_single_radius(cubic):
    result = truncation_study(cubic, [4], 50, 1.0, np.sin)
    assert result.tail_gap == () and result.decay_rate is None


@pytest.mark.parametrize("radii", [[4, 3], [3, 3.01]])
def test_truncation_bad_radii(cubic, radii):
    with pytest.raises(ValueError):
        truncation_study(cubic, radii, 50, 0.1, np.sin)


def test_kalman_bucy_stationary_covariance():
    out = kalman_bucy_exact(1.0, 1.0, np.zeros(2000), 0.01, 0.0, 0.25)
    assert abs(out[-1].cov - 1.0) < 1e-6


def test_kalman_bucy_riccati_closed_form():
    out = kalman_bucy_exact(1.0, 1.0, np.zeros(300), 0.01, 0.0, 0.25)
    times = 0.01 * np.arange(301)
    covs = np.array([p.cov for p in out])
    # P(t) = tanh(t + atanh(p0)) solves dP/dt = 1 - P^2 exactly.
    assert np.abs(covs - np.tanh(times + math.atanh(0.25))).max() < 1e-8


def test_kalman_bucy_empty_record():
    out = kalman_bucy_exact(1.0, 1.0, [], 0.01, 0.3, 0.7)
    assert len(out) == 1 and (out[0].mean, out[0].cov) == (0.3, 0.7)


def test_kalman_bucy_mean_tracks_constant_rate():
    # y = 2 t means the state is observed at 2 with rate information only.
    out = kalman_bucy_exact(0.0, 1.0, 2.0 * 0.01 * np.arange(1, 2001), 0.01, 0.0, 1.0)
    assert out[-1].mean == pytest.approx(2.0 * 20 / 21, rel=1e-8)


def test_kalman_bucy_arguments():
    with pytest.raises(ValueError):
        kalman_bucy_exact(1.0, 0.0, [0.1], 0.01, 0.0, 1.0)


def test_report_writers(tmp_path):
    write_rows_csv(tmp_path / "r.csv", ("k", "error"), [(10, 0.1), (20, 1 / 3)])
    assert (tmp_path / "r.csv").read_text() == "k,error\n10,0.10000000000000001\n20,0.33333333333333331\n"
    write_summary_json(tmp_path / "r.json", "order", 1.5)
    assert json.loads((tmp_path / "r.json").read_text()) == {"order": 1.5}
