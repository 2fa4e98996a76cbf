import math

import numpy as np
import pytest

from lingrok.types import (Dataset, DatasetSpec, LinearModel, PgdConfig, SpecError, TrainConfig,
                           TrainTrace, diagonal_direction, seeded_rng)


def spec(**kw):
    base = dict(kind="standard", gamma=1e-3, w_true=diagonal_direction(2), class_counts=(5, 5))
    base.update(kw)
    return DatasetSpec(**base)


def test_diagonal_direction_unit_norm():
    for d in (1, 2, 64):
        u = np.array(diagonal_direction(d))
        assert math.isclose(np.linalg.norm(u), 1.0, rel_tol=1e-15)
        assert np.allclose(u, u[0])


@pytest.mark.parametrize("kw,field", [
    (dict(kind="weird"), "kind"),
    (dict(gamma=0.0), "gamma"),
    (dict(gamma=float("nan")), "gamma"),
    (dict(w_true=(1.0, 1.0)), "w_true"),
    (dict(class_counts=(-1, 3)), "class_counts"),
    (dict(kind="concentrated"), "alpha_sens"),
    (dict(kind="concentrated", alpha_sens=0.5), "alpha_sens"),
    (dict(box_halfwidth=1e-4), "box_halfwidth"),
])
def test_spec_validation_names_field(kw, field):
    with pytest.raises(SpecError) as err:
        spec(**kw)
    assert err.value.field == field


def test_spec_dict_round_trip_and_shorthand():
    s = spec(kind="planted", planted_support_counts=(3, 4), seed=7)
    assert DatasetSpec.from_dict(s.to_dict()) == s
    d = s.to_dict()
    d["w_true"] = {"dim": 2}
    assert DatasetSpec.from_dict(d) == s
    d.pop("gamma")
    with pytest.raises(SpecError, match="gamma"):
        DatasetSpec.from_dict(d)


def test_dataset_radius_and_labels(tmp_path):
    X = np.array([[3.0, 4.0], [-1.0, 0.0]])
    ds = Dataset(X, np.array([1, -1]), spec=spec())
    assert ds.radius_bound == 5.0
    assert ds.dim == 2 and len(ds) == 2
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0
    with pytest.raises(SpecError):
        Dataset(X, np.array([1, 0]))
    with pytest.raises(SpecError):
        Dataset(np.array([[np.inf, 0.0]]), np.array([1]))
    ds.to_csv(tmp_path / "d.csv")
    back = Dataset.from_csv(tmp_path / "d.csv")
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
    assert back.spec == ds.spec


def test_linear_model_prediction_tie_is_negative():
    m = LinearModel(np.array([1.0, -1.0]), 0.0)
    assert list(m.predict(np.array([[1.0, 1.0], [2.0, 1.0], [0.0, 1.0]]))) == [-1, 1, -1]
    with pytest.raises(SpecError):
        LinearModel(np.zeros(2), 1.0, bias_learnable=False)


def test_train_config_validation():
    with pytest.raises(SpecError, match="learning_rate"):
        TrainConfig(learning_rate=0)
    with pytest.raises(SpecError):
        TrainConfig(total_steps=10, log_every=20)
    with pytest.raises(SpecError):
        TrainConfig(loss_kind="hinge")
    with pytest.raises(SpecError):
        TrainConfig(adversarial_eval=PgdConfig())
    with pytest.raises(SpecError):
        PgdConfig(eps_adv=-1)


def test_nr2_warning():
    ds = Dataset(np.full((1000, 2), 5.0), np.ones(1000))
    assert TrainConfig(learning_rate=1.0).nr2_warning(ds) is not None
    assert TrainConfig(learning_rate=1e-4).nr2_warning(ds) is None


def test_trace_csv_round_trip(tmp_path):
    tr = TrainTrace(["a"], dim=2)
    tr.append(0, 0.0, 0.0, 0.0, math.log(2) * 4, 0.5, {"a": 0.25}, w=np.zeros(2))
    tr.append(100, 0.1 / 3, 1.5, 0.9, 1.0, 1.0, {"a": 0.75}, w=np.array([1 / 3, 2.0]))
    with pytest.raises(ValueError):
        tr.append(100, 0, 0, 0, 0, 0, {"a": 0}, w=np.zeros(2))
    tr.to_csv(tmp_path / "t.csv")
    back = TrainTrace.from_csv(tmp_path / "t.csv")
    assert back.equals(tr)
    assert list(back.t) == [0, 100]


def test_seeded_rng_deterministic():
    assert seeded_rng(3).random() == seeded_rng(3).random()
    assert seeded_rng(3).random() != seeded_rng(4).random()
