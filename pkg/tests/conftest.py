import numpy as np
import pytest

from fairprobe import nn
from fairprobe.data import Attribute, AttributeSchema
from fairprobe.interpret import profile_from_data
from fairprobe.synthetic import adult_like


def tiny_schema(n_plain=3, sens_max=1, plain_max=9):
    attrs = [Attribute(f"a{i}", 0, plain_max) for i in range(n_plain)]
    attrs.append(Attribute("s", 0, sens_max, sensitive=True))
    return AttributeSchema(tuple(attrs))


def constant_net(input_dim, hidden=(4,), label=0):
    """Network whose output ignores the input and always predicts ``label``."""
    net = nn.init_network(input_dim, hidden, 2, seed=0)
    weights = [np.zeros_like(w) for w in net.weights]
    biases = [np.zeros_like(b) for b in net.biases]
    biases[-1][label] = 1.0
    return net.with_weights(weights, biases)


def sensitive_net(input_dim, s_col, hidden=4):
    """ReLU network predicting label 1 iff the binary attribute ``s_col`` is 1."""
    w0 = np.zeros((input_dim, hidden))
    w0[s_col, 0] = 10.0
    w1 = np.zeros((hidden, 2))
    w1[0, 1] = 1.0
    b1 = np.array([5.0, 0.0])
    return nn.Network(input_dim, [nn.LayerSpec(hidden, "relu"), nn.LayerSpec(2, "softmax")],
                      [w0, w1], [np.zeros(hidden), b1])


@pytest.fixture
def schema():
    return tiny_schema()


@pytest.fixture(scope="session")
def biased_setup():
    """Small trained model on the census-like task with a planted sex dependence."""
    ds = adult_like(4000, seed=1)
    train, _, test = ds.split(1)
    net = nn.init_network(13, [64, 32, 16, 8, 4], 2, seed=1)
    net = nn.train(net, train.X, train.y, nn.TrainConfig(epochs=20, batch_size=64, rng_seed=1))
    profile = profile_from_data(net, test.X, ds.schema)
    return ds.schema, train, test, net, profile


_criteria = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criteria[item.nodeid] = {"n": mark.args[0], "title": mark.args[1], "ok": None}


def pytest_runtest_logreport(report):
    entry = _criteria.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call" or report.failed:
        entry["ok"] = entry["ok"] is not False and report.passed
        entry["detail"] = dict(report.user_properties).get("detail", "")


def pytest_terminal_summary(terminalreporter):
    done = [e for e in _criteria.values() if e["ok"] is not None]
    if not done:
        return
    terminalreporter.section("acceptance criteria")
    for e in sorted(done, key=lambda e: e["n"]):
        verdict = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {e['n']:>2} {verdict}  {e['title']}  {e['detail']}")
