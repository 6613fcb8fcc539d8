import numpy as np
import pytest
from hypothesis import given, strategies as st

from tempimpute import kernels as K
from tempimpute.geom_time import Location
from tempimpute.kernels import Lags, Points


def random_points(rng, n, n_stations=3):
    locs = [Location(f"S{i}", *rng.uniform(-150, 150, 2)) for i in range(n_stations)]
    which = rng.integers(0, n_stations, n)
    return Points.concat([Points.at(locs[w], [t]) for w, t in zip(which, rng.uniform(0, 72, n))])


@pytest.mark.parametrize("name,n_free", [("se_x_se", 4), ("diurnal", 7), ("sumprod", 16)])
def test_preset_free_parameter_counts(name, n_free):
    # kernel hyperparameters plus the noise variance
    assert len(K.preset(name).hyper_names()) + 1 == n_free


def test_preset_values_and_fixed_scales():
    k = K.preset("se_x_se")
    assert k.param("time.variance") == pytest.approx(3.7 ** 2)
    assert k.param("space.variance") == 1.0
    assert k.param("mu.variance") == 100.0
    assert K.preset_noise_var("sumprod") == pytest.approx(0.04)
    with pytest.raises(ValueError):
        K.preset("nope")


@pytest.mark.parametrize("name", K.PRESETS)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 25))
def test_gram_symmetric_psd(name, seed, n):
    rng = np.random.default_rng(seed)
    pts = random_points(rng, n)
    G = K.gram(K.preset(name), pts)
    assert np.allclose(G, G.T)
    assert np.linalg.eigvalsh(G).min() > -1e-8 * np.trace(G)


@pytest.mark.parametrize("name", K.PRESETS)
def test_log_gradients_match_finite_differences(name, rng):
    k = K.preset(name)
    pts = random_points(rng, 8)
    lags = Lags(pts, pts)
    g = k.grads(lags)
    x0 = np.log(k.hyper_values())
    for j, hname in enumerate(k.hyper_names()):
        h = 1e-6
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        fd = (k.with_log_hyper(xp).value(lags) - k.with_log_hyper(xm).value(lags)) / (2 * h)
        # floor the scale: tiny entries only carry finite-difference round-off
        scale = max(np.abs(fd).max(), 1e-3 * np.abs(k.value(lags)).max())
        assert np.abs(g[hname] - fd).max() / scale < 1e-6, hname


def test_periodic_exact_period():
    p = K.Periodic24("d", variance=2.0, lengthscale=0.7)
    r = np.array([0.0, 24.0, 48.0, 12.0])
    v = p.value(Lags.from_separation(np.zeros(4), r))
    assert v[0] == pytest.approx(2.0) and v[1] == pytest.approx(2.0) and v[2] == pytest.approx(2.0)
    assert v[3] == pytest.approx(2.0 * np.exp(-2.0 / 0.49))


def test_rq_tends_to_se_for_large_alpha():
    r = np.linspace(0, 10, 11)
    lags = Lags.from_separation(np.zeros_like(r), r)
    rq = K.RQTime("rq", variance=1.0, lengthscale=2.0, alpha=1e7).value(lags)
    se = K.SETime("se", variance=1.0, lengthscale=2.0).value(lags)
    assert np.allclose(rq, se, atol=1e-6)


def test_station_mean_only_same_station():
    a, b = Location("A", 0, 0), Location("B", 0, 0)
    pts = Points.concat([Points.at(a, [0, 5]), Points.at(b, [0])])
    G = K.StationMean("mu", variance=4.0)(pts)
    assert np.array_equal(G, 4.0 * np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1]]))


def test_serialisation_round_trip():
    for name in K.PRESETS:
        k = K.preset(name)
        k2 = K.from_json(k.to_json())
        assert k2.to_dict() == k.to_dict()
        assert np.array_equal(k2.hyper_values(), k.hyper_values())


def test_validate_rejects_structure_errors():
    with pytest.raises(ValueError):
        K.validate(K.Sum((K.SETime("a", variance=1, lengthscale=1), K.SETime("a", variance=1, lengthscale=2))))
    with pytest.raises(ValueError):
        K.validate(K.Product((K.SETime("t", variance=1, lengthscale=1), K.StationMean("mu"))))
    with pytest.raises(ValueError):
        K.from_dict({"kind": "wavelet"})
    with pytest.raises(ValueError):
        K.SETime("t", variance=-1.0, lengthscale=1.0)
    with pytest.raises(KeyError):
        K.preset("se_x_se").with_hyper({"bogus.x": 1.0})


def test_model_variogram_matches_oracle(oracles):
    k = K.strip_station_mean(K.preset("se_x_se"))
    for h, r, want in oracles["variogram_se_x_se"]:
        assert K.model_variogram(k, 0.16, h, r) == pytest.approx(want, rel=1e-12)


def test_model_variogram_requires_stripped_kernel():
    with pytest.raises(ValueError):
        K.model_variogram(K.preset("se_x_se"), 0.1, 0.0, 1.0)


def test_time_space_terms_decomposition():
    terms = K.time_space_terms(K.preset("sumprod"))
    assert len(terms) == 4
    assert all(len(t) == 1 and len(s) == 1 for t, s in terms)


def test_evaluate_and_grad_hyper_helpers():
    k = K.preset("se_x_se")
    a, b = Location("A", 0, 0), Location("B", 50, 0)
    v = K.evaluate(k, a, b, 0.0, 1.0)
    want = 3.7 ** 2 * np.exp(-0.5 / 2.7 ** 2) * np.exp(-0.5 * 2500 / 176.0 ** 2)
    assert v == pytest.approx(want)
    names = [n for n, _ in K.grad_hyper(k, a, b, 0.0, 1.0)]
    assert names == k.hyper_names()
