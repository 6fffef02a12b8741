import numpy as np
import pytest

from fedadp.adaptive import TierPolicy, build_plan, write_plan_csv
from fedadp.errors import UsageError
from fedadp.importance import ImportanceMap, sensitivity_fi, variance_fi
from fedadp.nn import HyperParams, clip_params, init_params, local_train
from fedadp.report import emit_heatmap, heatmap_pixels, read_metrics, read_pgm, write_metrics
from fedadp.federation import RoundMetrics

from conftest import needs_mnist


def test_pgm_header_and_size(tmp_path):
    scores = np.random.default_rng(0).random(784)
    path = emit_heatmap(ImportanceMap(scores, "variance"), tmp_path / "h.pgm")
    raw = path.read_bytes()
    assert raw.startswith(b"P5 28 28 255\n")
    assert len(raw) == len(b"P5 28 28 255\n") + 784
    pix = read_pgm(path)
    assert pix.shape == (28, 28)
    assert pix.min() == 0 and pix.max() == 255
    assert pix.ravel()[np.argmin(scores)] == 0


def test_constant_scores_mid_gray():
    assert np.all(heatmap_pixels(np.full(16, 3.3)) == 128)


def test_non_square_needs_shape(tmp_path):
    with pytest.raises(UsageError):
        emit_heatmap(np.arange(10.0), tmp_path / "x.pgm")
    path = emit_heatmap(np.arange(10.0), tmp_path / "x.pgm", (2, 5))
    assert path.read_bytes().startswith(b"P5 5 2 255\n")
    with pytest.raises(UsageError):
        heatmap_pixels(np.arange(10.0), (3, 3))


def test_monotone_mapping():
    s = np.random.default_rng(1).random(25)
    pix = heatmap_pixels(s).ravel()
    order = np.argsort(s)
    assert np.all(np.diff(pix[order].astype(int)) >= 0)


@needs_mnist
@pytest.mark.parametrize("method", ["variance", "sensitivity"])
def test_mnist_border_darker_than_center(mnist, method, tmp_path):
    x, y = mnist.inputs[:1400], mnist.labels[:1400]
    g = clip_params(init_params([784, 256, 10], np.random.default_rng(0)), 5.0)
    local = local_train(g, x, y, HyperParams(), np.random.default_rng(1))
    fi = (variance_fi(local, g) if method == "variance"
          else sensitivity_fi(local, x, y, 0.0555 * np.sqrt(2 / np.pi)))
    pix = read_pgm(emit_heatmap(fi, tmp_path / "fi.pgm")).astype(float)
    ring = np.ones((28, 28), bool)
    ring[4:24, 4:24] = False
    center = pix[7:21, 7:21]
    assert pix[ring].mean() < center.mean()


def test_metrics_csv_schema(tmp_path):
    rows = [RoundMetrics(r, 0.5 + r / 10, 1.0 / r, 0.01, 0.02, 0.0, 3, 30, 1.23) for r in (1, 2)]
    write_metrics(tmp_path / "m.csv", "curve-a", rows)
    text = (tmp_path / "m.csv").read_text()
    header = text.splitlines()[0]
    assert header == ("curve,round,test_accuracy,test_loss,sigma_weak,sigma_strong,"
                      "sigma_downlink,tier_features,tier_overrides")
    back = read_metrics(tmp_path / "m.csv")
    assert [float(r["test_accuracy"]) for r in back] == [0.6, 0.7]
    assert "1.23" not in text


def test_plan_csv(tmp_path, small_params):
    fi = ImportanceMap(np.array([5.0, 1.0, 2.0, 0.5, 9.0, 3.0, 4.0, 6.0]), "variance")
    policy = TierPolicy(0.25, "lowest", mode="direct", sigma_strong=0.3, sigma_weak=0.01)
    plan = build_plan(fi, policy, None, small_params)
    path = write_plan_csv(plan, small_params, tmp_path / "plan.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "layer,kind,row,col,sigma"
    assert lines[1] == ",default,,,0.01"
    body = [l.split(",") for l in lines[2:]]
    assert len(body) == 2 * small_params.layers[0][0].shape[1]
    assert {int(r[2]) for r in body} == {1, 3}
    assert all(r[0] == "0" and r[1] == "weight" and float(r[4]) == 0.3 for r in body)
