"""Experiment runners: exact baselines, closed-form ensembles, determinism."""

import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from brwre_lab.experiments import (
    EnvironmentSpec,
    ExperimentConfig,
    run_cross_validate,
    run_experiment,
    run_jensen,
    run_ldp_sanity,
    run_moments_growth,
)

CONST0 = {"kind": "constant", "c": 0.0}


def flat_spec(**kw):
    base = dict(dist0=CONST0, dist2=CONST0, d=1, R=2)
    base.update(kw)
    return EnvironmentSpec(**base)


def yule_spec(c, **kw):
    base = dict(dist0=CONST0, dist2={"kind": "constant", "c": c}, d=1, R=1)
    base.update(kw)
    return EnvironmentSpec(**base)


def random_spec(**kw):
    base = dict(
        dist0={"kind": "bounded_uniform", "b": 1.0},
        dist2={"kind": "double_exp", "rho": 1.0},
        d=1,
        R=3,
    )
    base.update(kw)
    return EnvironmentSpec(**base)


class TestCrossValidate:
    def test_flat_environment_all_routes_exactly_one(self):
        cfg = ExperimentConfig(
            kind="cross_validate",
            environment=flat_spec(),
            t_grid=[0.5, 1.0],
            n=2,
            replicas=2,
            samples=50,
            seed=3,
        )
        res = run_cross_validate(cfg)
        assert res.passed is True
        assert res.flags == []
        for rec in res.records:
            assert rec["direct"] == 1.0
            assert rec["pde"] == 1.0
            assert rec["fk"] == pytest.approx(1.0, abs=1e-12)
            assert rec["z_direct_pde"] == 0.0
            assert rec["capped_fraction"] == 0.0
        assert res.summary["fraction_within"] == 1.0

    def test_yule_routes_agree_with_closed_form(self):
        c = 0.8
        cfg = ExperimentConfig(
            kind="cross_validate",
            environment=yule_spec(c),
            t_grid=[0.5],
            n=2,
            replicas=1,
            samples=4000,
            seed=11,
        )
        res = run_cross_validate(cfg)
        assert res.passed is True
        by_order = {r["order"]: r for r in res.records}
        t = 0.5
        m1 = math.exp(c * t)
        m2 = 2.0 * math.exp(2 * c * t) - math.exp(c * t)
        assert by_order[1]["pde"] == pytest.approx(m1, rel=1e-7)
        assert by_order[2]["pde"] == pytest.approx(m2, rel=1e-7)
        for order, exact in ((1, m1), (2, m2)):
            rec = by_order[order]
            for route in ("direct", "fk"):
                se = max(rec[f"{route}_stderr"], 1e-12)
                assert abs(rec[route] - exact) <= 4.0 * se

    def test_threading_does_not_change_records(self):
        kw = dict(
            kind="cross_validate",
            environment=random_spec(R=2),
            t_grid=[0.4],
            n=2,
            replicas=2,
            samples=400,
            seed=5,
        )
        seq = run_cross_validate(ExperimentConfig(**kw, threads=1))
        par = run_cross_validate(ExperimentConfig(**kw, threads=4))
        assert seq.records == par.records
        assert seq.summary == par.summary


class TestJensen:
    def test_first_order_chain_ends_in_exact_tie(self):
        cfg = ExperimentConfig(
            kind="jensen",
            environment=random_spec(),
            t_grid=[0.5, 1.0],
            n=1,
            p=2,
            replicas=3,
            seed=21,
        )
        res = run_jensen(cfg)
        assert res.passed is True
        for rec in res.records:
            # with n = 1 the local moment and its first-power bound coincide
            assert rec["mean_first_power"] == rec["mean_local"]
            assert rec["violations_local_first"] == 0

    def test_yule_global_moment_matches_closed_form(self):
        c = 1.0
        cfg = ExperimentConfig(
            kind="jensen",
            environment=yule_spec(c),
            t_grid=[1.0],
            n=2,
            p=1,
            replicas=1,
            seed=0,
        )
        res = run_jensen(cfg)
        assert res.passed is True
        exact = 2.0 * math.exp(2 * c) - math.exp(c)
        assert res.records[0]["mean_global"] == pytest.approx(exact, rel=1e-7)

    def test_random_ensemble_has_zero_violations(self):
        cfg = ExperimentConfig(
            kind="jensen",
            environment=random_spec(),
            t_grid=[0.75, 1.5],
            n=3,
            p=2,
            replicas=6,
            seed=33,
        )
        res = run_jensen(cfg)
        assert res.passed is True
        assert res.summary["violations"] == 0
        for rec in res.records:
            assert rec["mean_global"] >= rec["mean_local"] * (1 - 1e-9)
            assert rec["mean_local"] >= rec["mean_first_power"] * (1 - 1e-9)


class TestMomentsGrowth:
    def test_constant_environment_matches_cumulant_exactly(self):
        c = 0.6
        cfg = ExperimentConfig(
            kind="moments_growth",
            environment=yule_spec(c),
            kappa=0.0,
            t_grid=[1.0, 2.0],
            n=1,
            p=2,
            replicas=1,
            seed=0,
        )
        res = run_moments_growth(cfg)
        assert res.passed is True
        assert res.summary["chi"] is None
        for rec in res.records:
            t = rec["t"]
            assert rec["A_log_annealed"] == pytest.approx(2 * c * t, rel=1e-7)
            assert rec["gap_AB_over_t"] == pytest.approx(0.0, abs=1e-7)
            assert rec["gap_AC_over_t"] == pytest.approx(0.0, abs=1e-7)
        assert res.summary["finite_size_drift_A"] == pytest.approx(0.0, abs=1e-7)

    def test_yule_second_moment_gap_approaches_log_two(self):
        c = 1.0
        cfg = ExperimentConfig(
            kind="moments_growth",
            environment=yule_spec(c),
            kappa=0.0,
            t_grid=[5.0, 15.0],
            n=2,
            p=1,
            replicas=1,
            seed=0,
        )
        res = run_moments_growth(cfg)
        assert res.passed is True
        gaps = [r["A_log_annealed"] - r["B_log_first_moment_power"] for r in res.records]
        # A - B = log(2 - e^{-ct}), increasing toward log 2
        assert gaps[0] < gaps[1]
        assert abs(gaps[1] - math.log(2.0)) < 1e-6

    def test_random_ensemble_direction_and_summary(self):
        cfg = ExperimentConfig(
            kind="moments_growth",
            environment=random_spec(R=2),
            t_grid=[0.5, 1.0],
            n=2,
            p=1,
            replicas=4,
            seed=7,
        )
        res = run_moments_growth(cfg)
        assert res.passed is True
        assert res.summary["jensen_direction_held"] is True
        assert res.summary["rho"] == 1.0
        assert res.summary["chi"] is not None and 0.0 < res.summary["chi"] < 1.0
        assert res.summary["finite_size_drift_A"] >= 0.0
        for rec in res.records:
            assert rec["A_log_annealed"] >= rec["B_log_first_moment_power"] - 1e-9


class TestLdpSanity:
    def test_single_walk_occupation_flattens(self):
        cfg = ExperimentConfig(
            kind="ldp_sanity",
            environment=EnvironmentSpec(dist0=CONST0, dist2=CONST0, d=1, R=1),
            t_grid=[0.1, 50.0],
            k=0,
            samples=300,
            seed=9,
        )
        res = run_ldp_sanity(cfg)
        assert res.passed is True
        assert res.summary["mean_S_decreasing"] is True
        assert res.summary["drop_fraction"] >= 0.5
        assert res.summary["tv_last"] < 0.1

    def test_one_split_skeleton_energy_drops(self):
        cfg = ExperimentConfig(
            kind="ldp_sanity",
            environment=EnvironmentSpec(dist0=CONST0, dist2=CONST0, d=1, R=2),
            t_grid=[0.2, 5.0],
            k=1,
            samples=100,
            seed=13,
        )
        res = run_ldp_sanity(cfg)
        assert res.records[1]["mean_S_per"] < res.records[0]["mean_S_per"]
        assert res.summary["k"] == 1 and res.summary["fold_R"] == 2


class TestConfigAndDeterminism:
    def test_config_json_round_trip(self):
        cfg = ExperimentConfig(
            kind="jensen",
            environment=random_spec(),
            t_grid=[0.5, 1.0],
            n=2,
            p=3,
            replicas=2,
            seed=42,
            y=[1],
        )
        again = ExperimentConfig.model_validate(json.loads(cfg.model_dump_json()))
        assert again == cfg
        res = run_experiment(cfg)
        assert res.config == cfg

    def test_identical_configs_give_identical_data(self):
        kw = dict(
            kind="cross_validate",
            environment=random_spec(R=2),
            t_grid=[0.4],
            n=2,
            replicas=2,
            samples=300,
            seed=17,
        )
        a = run_experiment(ExperimentConfig(**kw))
        b = run_experiment(ExperimentConfig(**kw))
        assert a.data_dict() == b.data_dict()
        assert json.dumps(a.data_dict(), sort_keys=True) == json.dumps(
            b.data_dict(), sort_keys=True
        )
        assert a.meta["version"] == b.meta["version"]

    def test_dispatch_routes_by_kind(self):
        cfg = ExperimentConfig(
            kind="ldp_sanity",
            environment=EnvironmentSpec(dist0=CONST0, dist2=CONST0, d=1, R=1),
            t_grid=[0.3],
            k=0,
            samples=20,
            seed=1,
        )
        res = run_experiment(cfg)
        assert res.kind == "ldp_sanity"
        assert len(res.records) == 1

    def test_validation_rejects_bad_configs(self):
        good = dict(
            kind="jensen",
            environment=random_spec(),
            t_grid=[0.5],
            seed=0,
        )
        ExperimentConfig(**good)
        with pytest.raises(ValidationError):
            ExperimentConfig(**{**good, "t_grid": [1.0, 0.5]})
        with pytest.raises(ValidationError):
            ExperimentConfig(**{**good, "t_grid": []})
        with pytest.raises(ValidationError):
            ExperimentConfig(**{**good, "t_grid": [-1.0]})
        with pytest.raises(ValidationError):
            ExperimentConfig(**{**good, "x": [0, 0]})
        with pytest.raises(ValidationError):
            ExperimentConfig(**{**good, "k": 3})
        with pytest.raises(ValidationError):
            ExperimentConfig(**{**good, "samples": 1})
        with pytest.raises(ValidationError):
            EnvironmentSpec(dist0={"kind": "nope"}, dist2=CONST0)

    def test_environment_spec_builds_reproducibly(self):
        spec = random_spec()
        e1 = spec.build(123)
        e2 = spec.build(123)
        assert np.array_equal(e1.xi0, e2.xi0)
        assert np.array_equal(e1.xi2, e2.xi2)
        assert e1.boundary == "periodic" and e1.R == 3
