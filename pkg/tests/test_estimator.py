import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from secure_replay.errors import EmptyLog, EmptyTrace
from secure_replay.estimator import SecureTokenReplay, check_net, check_traces
from secure_replay.log_io import EventLog

from conftest import data_path
import reference as ref


def test_params_round_trip():
    est = SecureTokenReplay(backend="mock", seed=3)
    assert est.get_params() == {"backend": "mock", "marking_bound": 7, "prune": True, "seed": 3}
    assert clone(est).get_params() == est.get_params()
    est.set_params(prune=False)
    assert est.prune is False


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SecureTokenReplay().predict(["abdeh"])


@pytest.mark.parametrize("source", ["path", "text", "net"])
def test_fit_sources(source, running_net):
    X = {"path": data_path("running_example.pnml"),
         "text": open(data_path("running_example.pnml")).read(),
         "net": running_net}[source]
    est = SecureTokenReplay().fit(X)
    assert est.n_features_in_ == 8 and est.activities_ == tuple("abcdefgh")
    assert est.compiled_.n_scenarios == 11


def test_transform_predict_score(running_net):
    est = SecureTokenReplay().fit(running_net)
    X = ["abdeh", "abeh", "abdeh"]
    np.testing.assert_array_equal(est.transform(X), [[6, 6, 0, 0], [3, 5, 2, 2], [6, 6, 0, 0]])
    np.testing.assert_array_equal(est.predict(X), [1, 0, 1])
    np.testing.assert_allclose(est.fitness(X), [1.0, 7 / 15, 1.0])
    assert est.score(ref.RUNNING_LOG) == 1.0


def test_mock_backend_agrees(running_net):
    clear = SecureTokenReplay().fit(running_net)
    mock = SecureTokenReplay(backend="mock", seed=1).fit(running_net)
    np.testing.assert_array_equal(clear.transform(ref.BROKEN_LOG), mock.transform(ref.BROKEN_LOG))


def test_fit_from_artifact(compiled):
    assert SecureTokenReplay().fit(compiled).compiled_ is compiled


def test_input_validation():
    with pytest.raises(EmptyLog):
        check_traces([])
    with pytest.raises(EmptyTrace):
        check_traces(["ab", ""])
    with pytest.raises(TypeError):
        check_traces("abdeh")
    assert check_traces(EventLog({("a",): 2})) == [("a",), ("a",)]
    with pytest.raises(TypeError):
        check_net(42)
