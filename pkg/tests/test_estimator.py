import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import GridSearchCV

from charcirc import CharacteristicCircuitDensity, log_density
from charcirc.data import generate_mm
from charcirc.errors import ConfigError, DimensionError
from charcirc.leaves import AlphaStable


@pytest.fixture(scope="module")
def mm():
    return generate_mm(800, 800, seed=0)


def test_params_round_trip_through_clone():
    est = CharacteristicCircuitDensity("both", min_k=50, iters=5, random_state=3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(iters=7).iters == 7


def test_structure_mode(mm):
    est = CharacteristicCircuitDensity().fit(mm.train.values)
    assert est.column_kinds_ == ("continuous", "discrete") and est.n_features_in_ == 2
    assert est.loss_trace_ == []
    scores = est.score_samples(mm.test.values)
    assert np.array_equal(scores, log_density(est.circuit_, mm.test.values))
    assert est.score(mm.test.values) == pytest.approx(scores.mean())
    assert est.score(mm.test.values) > -3.2


def test_params_mode_improves_on_its_start(mm):
    est = CharacteristicCircuitDensity("params", iters=40).fit(mm.train.values)
    losses = [r[1] for r in est.loss_trace_]
    assert len(losses) == 40 and min(losses) < losses[0]


def test_both_mode_keeps_structure(mm):
    a = CharacteristicCircuitDensity("structure").fit(mm.train.values)
    b = CharacteristicCircuitDensity("both", iters=5).fit(mm.train.values)
    assert a.circuit_.summary()["nodes"] == b.circuit_.summary()["nodes"]


@pytest.mark.filterwarnings("ignore::charcirc.errors.QuadratureUnderflowWarning")
def test_alpha_stable_leaves(mm):
    est = CharacteristicCircuitDensity(continuous_leaf="alpha_stable").fit(mm.train.values[:300])
    assert any(isinstance(getattr(n, "leaf", None), AlphaStable) for n in est.circuit_.nodes)
    assert np.all(np.isfinite(est.score_samples(mm.test.values[:50])))


def test_states_cover_unseen_values():
    X = np.column_stack([np.random.default_rng(0).normal(size=60), np.ones(60)])
    est = CharacteristicCircuitDensity(states={1: (1.0, 2.0)}).fit(X)
    assert np.isfinite(est.score_samples([[0.0, 2.0]])[0])


def test_extras(mm):
    est = CharacteristicCircuitDensity().fit(mm.train.values)
    assert est.cf([0.0, 0.0]) == pytest.approx(1.0)
    assert est.moment((1, 0)) == pytest.approx(mm.train.values[:, 0].mean(), abs=1e-9)
    assert est.marginal_score_samples({0}, [[0.0]]).shape == (1,)


def test_grid_search_runs(mm):
    search = GridSearchCV(CharacteristicCircuitDensity(), {"min_k": [50, 200]}, cv=2)
    search.fit(mm.train.values)
    assert search.best_params_["min_k"] in (50, 200)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CharacteristicCircuitDensity().score_samples([[0.0]])


def test_errors(mm):
    with pytest.raises(ConfigError):
        CharacteristicCircuitDensity("fast").fit(mm.train.values)
    with pytest.raises(ConfigError):
        CharacteristicCircuitDensity(column_kinds=("continuous",)).fit(mm.train.values)
    est = CharacteristicCircuitDensity().fit(mm.train.values)
    with pytest.raises(DimensionError):
        est.score_samples(np.zeros((2, 3)))
