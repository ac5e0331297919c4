import json
import logging

import numpy as np
import pytest

from mmtest.experiment import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    ResultRow,
    emit_csv,
    format_csv,
    generate_dataset,
    generate_distribution,
    generate_model,
    read_csv,
    run_experiment,
)
from mmtest.features import SvpConfig
from mmtest.mismatched import FeatureBasis, in_exponential_family, is_minimal
from mmtest.prob import stream, uniform


def small_cfg(**kw):
    base = dict(alphabet_size=8, q=2, q_prime=1, p=10, t=10, d_values=(1, 2, 3, 4), svp=SvpConfig(max_iter=500))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(autouse=True)
def quiet_svp(caplog):
    caplog.set_level(logging.ERROR, logger="mmtest.experiment")


def test_model_minimal_and_deterministic():
    cfg = small_cfg(master_seed=3)
    a, b = generate_model(cfg), generate_model(cfg)
    np.testing.assert_array_equal(a.full_basis, b.full_basis)
    assert a.main.shape == (2, 8) and a.perturbation.shape == (1, 8)
    assert is_minimal(a.full_basis)
    np.testing.assert_allclose(a.full_basis.sum(axis=1), 0, atol=1e-12)
    assert generate_model(small_cfg(master_seed=4)).full_basis[0, 0] != a.full_basis[0, 0]


def test_model_without_perturbation():
    m = generate_model(small_cfg(q=1, q_prime=0, d_values=(1,)))
    assert m.main.shape == (1, 8) and m.perturbation.shape == (0, 8)
    p = generate_distribution(m, stream(0, 9))
    assert np.all(p > 0)


def test_uniform_basis_draw():
    m = generate_model(small_cfg(basis_draw="uniform"))
    assert is_minimal(m.full_basis)


def test_zero_ranges_give_uniform():
    m = generate_model(small_cfg(theta_range=0.0, theta_prime_range=0.0))
    np.testing.assert_allclose(generate_distribution(m, stream(0, 1)), uniform(8), rtol=1e-14)


def test_distributions_in_model_family():
    cfg = small_cfg()
    model = generate_model(cfg)
    data = generate_dataset(cfg)
    basis = FeatureBasis(model.full_basis)
    for mu in np.vstack([data.train, data.test]):
        assert np.all(mu > 0)
        assert in_exponential_family(mu, uniform(8), basis)
    np.testing.assert_allclose(data.weights * [np.sum(a * np.log(a / data.pi0)) for a in data.train], 1, rtol=1e-12)


def test_full_rank_recovers_model():
    rows = run_experiment(small_cfg(d_values=(3, 4)))
    for r in rows:
        assert r.avg_ratio_train >= 0.999
        assert r.avg_ratio_test >= 0.999


def test_inverse_kl_objective_capped():
    for r in run_experiment(small_cfg()):
        assert r.objective <= 1 + 1e-6
        assert 0 <= r.avg_ratio_test <= 1 + 1e-6


def test_ratio_nondecreasing_in_d():
    rows = run_experiment(small_cfg(svp=SvpConfig(max_iter=3000)))
    train = [r.avg_ratio_train for r in rows]
    assert np.all(np.diff(train) > -0.01)


def test_workers_do_not_change_rows():
    cfg = small_cfg(master_seed=11)
    assert format_csv(run_experiment(cfg, workers=1)) == format_csv(run_experiment(cfg, workers=2))


def test_emit_csv_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    emit_csv([], path)
    assert path.read_text() == ",".join(CSV_HEADER) + "\n"


def test_emit_csv_round_trip(tmp_path):
    row = ResultRow(d=3, avg_ratio_train=0.123456789, avg_ratio_test=1.0000005, p=50, objective=0.5, iterations=7, seed=42)
    path = tmp_path / "one.csv"
    emit_csv([row], path)
    assert len(path.read_text().splitlines()) == 2
    (back,) = read_csv(path)
    assert back == {
        "d": "3", "avg_ratio_train": "0.123457", "avg_ratio_test": "1", "p": "50",
        "objective": "0.5", "iterations": "7", "seed": "42",
    }


def test_emit_csv_rejects_bad_ratio(tmp_path):
    row = ResultRow(d=1, avg_ratio_train=1.01, avg_ratio_test=0.5, p=1, objective=0, iterations=1, seed=0)
    with pytest.raises(ValueError):
        emit_csv([row], tmp_path / "bad.csv")
    with pytest.raises(OSError):
        emit_csv([], tmp_path / "missing" / "x.csv")


@pytest.mark.parametrize(
    "kw",
    [
        dict(q=0),
        dict(d_values=()),
        dict(d_values=(9,)),
        dict(q=5, q_prime=3),
        dict(weight_rule="magic"),
        dict(weight_rule="given", weights=(1.0,)),
        dict(basis_draw="cauchy"),
        dict(theta_range=-1.0),
        dict(master_seed=-1),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small_cfg(**kw)


def test_config_json_round_trip():
    cfg = small_cfg(weight_rule="given", weights=tuple(range(1, 11)), master_seed=5)
    back = ExperimentConfig.from_json(json.dumps(cfg.to_dict()))
    assert back == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"alphabet_size": 8, "colour": "red"})
    defaults = ExperimentConfig()
    assert (defaults.alphabet_size, defaults.q, defaults.q_prime, defaults.p, defaults.t) == (20, 8, 5, 50, 100)
    assert defaults.d_values == tuple(range(1, 11))


@pytest.mark.slow
def test_training_fit_and_sample_size_over_seeds():
    gaps = {10: [], 50: []}
    diffs = []
    for p in (10, 50):
        for seed in range(10):
            cfg = ExperimentConfig(
                alphabet_size=12, q=3, q_prime=2, p=p, t=30, d_values=(2, 3),
                master_seed=seed, svp=SvpConfig(max_iter=500),
            )
            for r in run_experiment(cfg):
                gaps[p].append(abs(r.avg_ratio_train - r.avg_ratio_test))
                diffs.append(r.avg_ratio_train - r.avg_ratio_test)
    assert np.mean(diffs) >= -0.05
    assert np.mean(gaps[50]) < np.mean(gaps[10])
