import numpy as np
import pytest

from conftest import random_separable
from lingrok.adversarial import adversarial_accuracy, linear_pgd_oracle, pgd_attack
from lingrok.trainer import accuracy
from lingrok.types import Dataset, LinearModel, PgdConfig, SpecError


def test_attack_matches_closed_form(rng):
    cfg = PgdConfig(eps_adv=1.0, step=0.25, iters=20)
    for _ in range(20):
        ds = Dataset(rng.uniform(-5, 5, size=(50, 3)), rng.choice([-1.0, 1.0], size=50))
        model = LinearModel(rng.normal(size=3), rng.normal())
        assert np.max(np.abs(pgd_attack(model, ds, cfg) - linear_pgd_oracle(model, ds, cfg))) <= 1e-12


def test_ball_and_box_respected(rng):
    ds = Dataset(rng.uniform(-5, 5, size=(200, 2)), rng.choice([-1.0, 1.0], size=200))
    model = LinearModel(np.array([1.0, -2.0]), 0.3)
    cfg = PgdConfig(eps_adv=0.7, step=0.1, iters=5, random_start=True, seed=3)
    Xa = pgd_attack(model, ds, cfg)
    assert np.all(np.abs(Xa - ds.X) <= 0.7 + 1e-12)
    assert np.all(np.abs(Xa) <= 5.0)
    assert np.array_equal(Xa, pgd_attack(model, ds, cfg))
    with pytest.raises(SpecError):
        linear_pgd_oracle(model, ds, cfg)


def test_zero_weight_coordinate_not_moved():
    ds = Dataset(np.array([[0.5, 0.5]]), np.array([1.0]))
    model = LinearModel(np.array([1.0, 0.0]), 0.0)
    Xa = pgd_attack(model, ds, PgdConfig(eps_adv=0.2, step=0.1, iters=3))
    assert np.allclose(Xa, [[0.3, 0.5]])


def test_per_coordinate_clip():
    ds = Dataset(np.array([[0.0, 0.0]]), np.array([-1.0]))
    model = LinearModel(np.array([1.0, 1.0]), 0.0)
    cfg = PgdConfig(eps_adv=1.0, step=0.5, iters=2, clip_lo=[-1, -1], clip_hi=[0.25, 2.0])
    assert np.allclose(pgd_attack(model, ds, cfg), [[0.25, 1.0]])


def test_unsaturated_attack_is_partial():
    ds = Dataset(np.array([[0.0]]), np.array([1.0]))
    model = LinearModel(np.array([2.0]), 0.0)
    cfg = PgdConfig(eps_adv=1.0, step=0.1, iters=3)
    assert not cfg.saturates
    assert np.allclose(pgd_attack(model, ds, cfg), [[-0.3]])


def test_adversarial_accuracy_not_above_clean(rng):
    ds = random_separable(rng, 100, 2)
    model = LinearModel(np.array([1.0, 0.5]), 0.1)
    cfg = PgdConfig(eps_adv=0.1, step=0.05, iters=4, clip_lo=-1, clip_hi=1)
    assert adversarial_accuracy(model, ds, cfg) <= accuracy(model, ds)
    assert adversarial_accuracy(model, ds, PgdConfig(eps_adv=0.0, step=0.1, iters=1)) == accuracy(model, ds)
