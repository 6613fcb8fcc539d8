import itertools

import numpy as np
import pytest

from tempimpute import kernels as K
from tempimpute.diagnostics import extrema_from_truth
from tempimpute.geom_time import Location
from tempimpute.gp_core import Points
from tempimpute.synthetic import iowa_layout, simulate, simulate_field


def test_iowa_layout_distances():
    locs = iowa_layout()
    assert len(locs) == 4
    for a, b in itertools.combinations(locs.values(), 2):
        assert 100 <= a.distance_km(b) <= 300


def test_simulation_is_seeded_and_shaped():
    a = simulate("se_x_se", days=5, seed=3)
    b = simulate("se_x_se", days=5, seed=3)
    c = simulate("se_x_se", days=5, seed=4)
    assert a.times.size == 120
    assert np.array_equal(a.hidden_truth(), b.hidden_truth())
    assert not np.array_equal(a.hidden_truth(), c.hidden_truth())
    assert "KALO" not in a.nearby().station_ids
    assert len(a.all_stations().station_ids) == 4
    with pytest.raises(ValueError):
        simulate("se_x_se", days=2, hidden="NOPE")


def test_extrema_match_truth_windows():
    syn = simulate("diurnal", days=8, seed=1, meas_hour=17)
    ex = syn.extrema()
    assert ex == extrema_from_truth(syn.hidden_truth(), syn.times, 17)
    assert len(ex) == 7
    assert all(e.tn <= e.tx for e in ex)


@pytest.mark.parametrize("name", ["se_x_se", "diurnal", "sumprod"])
def test_field_covariance_matches_kernel(name):
    k = K.strip_station_mean(K.preset(name))
    locs = [Location("P", 0.0, 0.0), Location("Q", 80.0, 60.0)]
    times = np.arange(0.0, 30.0)
    rng = np.random.default_rng(11)
    reps = 3000
    f = np.stack([simulate_field(k, locs, times, rng, 0.0) for _ in range(reps)])
    pts = Points.concat([Points.at(l, times) for l in locs])
    want = k(pts)
    got = np.einsum("ri,rj->ij", f.reshape(reps, -1), f.reshape(reps, -1)) / reps
    scale = np.sqrt(np.outer(np.diag(want), np.diag(want)))
    # Monte Carlo sd of a covariance estimate is at most sqrt(2/reps) in correlation units
    assert np.max(np.abs(got - want) / scale) < 6 * np.sqrt(2 / reps)


def test_station_offsets_have_requested_spread():
    k = K.preset("se_x_se")
    locs = list(iowa_layout().values())
    rng = np.random.default_rng(0)
    offs = np.array([simulate_field(k, locs, np.arange(0.0, 2.0), rng, 5.0)[:, 0] for _ in range(2000)])
    # station offsets add 25 on top of the kernel variance
    assert offs.var(axis=0).mean() == pytest.approx(25 + 3.7 ** 2, rel=0.1)
