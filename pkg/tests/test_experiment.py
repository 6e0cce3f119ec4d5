import csv
import dataclasses
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from caraman.experiment import (
    ABSORBER,
    Dataset,
    Outcome,
    ProtocolConfig,
    RateMatrix,
    build_rate_matrix,
    default_delays,
    effective_decay_bias,
    protocol_for,
    run_protocol,
    simulate_trial,
)
from caraman.fit import FitError, fit_exponential
from caraman.scattering import LaserField, d5_rate_table, double_scatter_bias

I_MAX = 8.7e7
TAU_NAT = 1.168


def test_shutter_closed_matrix_has_only_natural_decay(species):
    m = build_rate_matrix(ProtocolConfig(), species)
    assert np.all(m.exit_rates[:ABSORBER] == 1 / TAU_NAT)
    assert np.all(m.rates[:ABSORBER, :ABSORBER] == 0)
    assert m.exit_rates[ABSORBER] == 0


def test_laser_rates_scale_with_intensity(species):
    cfg = protocol_for("+5/2", "sigma-", I_MAX)
    m = build_rate_matrix(cfg, species)
    table = d5_rate_table(cfg.laser, species)
    assert np.allclose(m.rates[:6, :6], table[:6, :6] * I_MAX, rtol=1e-14, atol=0)
    assert np.allclose(m.rates[:6, 6], table[:6, 6] * I_MAX + 1 / TAU_NAT, rtol=1e-14, atol=0)


def test_generator_columns_conserve_probability(species):
    gen = build_rate_matrix(protocol_for("+3/2", "x", I_MAX), species).generator()
    assert np.allclose(gen.sum(axis=0), 0, atol=1e-12)


def test_single_step_keeps_event_rates_and_absorber_rates(species):
    full = build_rate_matrix(protocol_for("+3/2", "sigma-", I_MAX), species)
    single = full.single_step()
    assert np.allclose(single.rates.sum(axis=1), full.rates.sum(axis=1), rtol=1e-14)
    assert np.array_equal(single.rates[:, ABSORBER], full.rates[:, ABSORBER])
    assert np.all(single.rates[:6, :6][~np.eye(6, dtype=bool)] == 0)


def test_rate_matrix_validation(species):
    labels = tuple("abcdefg")
    with pytest.raises(ValueError):
        RateMatrix(np.zeros((6, 6)), labels)
    bad = np.zeros((7, 7))
    bad[0, 1] = -1
    with pytest.raises(ValueError):
        RateMatrix(bad, labels)
    leaky = np.zeros((7, 7))
    leaky[6, 0] = 1
    with pytest.raises(ValueError):
        RateMatrix(leaky, labels)


def test_simulate_trial_at_time_zero(species):
    m = build_rate_matrix(protocol_for("+5/2", "sigma-", I_MAX), species)
    rng = np.random.default_rng(0)
    for start in range(6):
        assert simulate_trial(m, start, 0.0, rng) == start
    assert simulate_trial(m, species.sublevel("D5/2", "-5/2"), 0.0, rng) == 5


def test_simulate_trial_follows_natural_decay(species):
    m = build_rate_matrix(ProtocolConfig(), species)
    rng = np.random.default_rng(1)
    n = 4000
    alive = sum(simulate_trial(m, 0, TAU_NAT, rng) != ABSORBER for _ in range(n))
    p = math.exp(-1)
    assert abs(alive / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_one_delay_at_natural_lifetime_survives_with_probability_1_over_e(species):
    cfg = ProtocolConfig(delays=(TAU_NAT,), trials_per_delay=20_000, depump_fidelity=1.0, seed=4)
    rec = run_protocol(cfg, species).records[0]
    p = math.exp(-1)
    assert abs(rec.n_survived / rec.n_trials - p) < 4 * math.sqrt(p * (1 - p) / rec.n_trials)


def test_shutter_closed_survival_consistent_with_natural_decay(species):
    data = run_protocol(ProtocolConfig(trials_per_delay=10_000, seed=21), species)
    t, n, k = data.arrays()
    p = np.exp(-t / TAU_NAT)
    chi2 = float(np.sum((k - n * p) ** 2 / (n * p * (1 - p))))
    assert stats.chi2.sf(chi2, t.size) > 0.001


def test_two_state_toy_recovers_its_rate(species):
    r = 2.0
    rates = np.zeros((7, 7))
    rates[0, ABSORBER] = r
    toy = RateMatrix(rates, tuple("abcdefg"))
    cfg = ProtocolConfig(delays=(0.1, 0.3, 0.6, 1.0), trials_per_delay=10_000, depump_fidelity=1.0, seed=8)
    fit = fit_exponential(run_protocol(cfg, species, toy))
    assert abs(fit.rate - r) < 3 * fit.sigma_rate


def test_same_seed_gives_identical_dataset(species):
    cfg = protocol_for("+3/2", "pi", I_MAX, trials_per_delay=2000, seed=5, prep_error=0.01,
                       classify_error={"DARK_LOWER": {"FLUORESCES_SD": 0.01}})
    assert run_protocol(cfg, species).to_json() == run_protocol(cfg, species).to_json()
    other = dataclasses.replace(cfg, seed=6)
    assert run_protocol(other, species).to_json() != run_protocol(cfg, species).to_json()


knobs = st.fixed_dictionaries(
    {
        "prep_error": st.floats(0, 0.5),
        "depump_fidelity": st.floats(0.5, 1),
        "ion_loss_per_trial": st.floats(0, 0.3),
        "discard_on_up_detect": st.booleans(),
        "seed": st.integers(0, 2**64 - 1),
        "classify_error": st.fixed_dictionaries(
            {"FLUORESCES_SD": st.fixed_dictionaries({"DARK_LOWER": st.floats(0, 0.2), "DARK_UP": st.floats(0, 0.2)}),
             "DARK_UP": st.fixed_dictionaries({"FLUORESCES_SD": st.floats(0, 0.5)})}
        ),
    }
)


@settings(max_examples=30, deadline=None)
@given(knobs=knobs, m=st.sampled_from(["+5/2", "+3/2", "-1/2"]), pol=st.sampled_from(["sigma-", "pi", None]))
def test_outcomes_partition_trials(species, knobs, m, pol):
    cfg = protocol_for(m, pol, I_MAX * 10, delays=(0.1, 1.0), trials_per_delay=300, **knobs)
    for rec in run_protocol(cfg, species).records:
        assert rec.n_survived + rec.n_exited + rec.n_discarded == rec.n_trials
        assert sum(rec.histogram.values()) == rec.n_trials
        assert rec.n_discarded >= rec.histogram["LOST"]


def test_pi_discard_rule_removes_up_detections(species):
    base = protocol_for("+3/2", "pi", 10 * I_MAX, trials_per_delay=5000, depump_fidelity=1.0, seed=3)
    kept = run_protocol(base, species)
    dropped = run_protocol(dataclasses.replace(base, discard_on_up_detect=True), species)
    for a, b in zip(kept.records, dropped.records):
        up = a.histogram["DARK_UP"]
        assert up > 0
        assert b.n_discarded == up
        assert b.n_survived == a.n_survived - up
        assert b.n_exited == a.n_exited


def test_depump_failure_relabels_lower_states(species):
    cfg = protocol_for("+3/2", "sigma-", I_MAX, trials_per_delay=1000, depump_fidelity=0.0, seed=2)
    for rec in run_protocol(cfg, species).records:
        assert rec.histogram["DARK_LOWER"] == 0
        assert rec.n_survived == rec.histogram["DARK_UP"]


def test_detection_extremes(species):
    prep = run_protocol(ProtocolConfig(trials_per_delay=500, prep_error=1.0), species)
    assert all(r.n_exited == r.n_trials for r in prep.records)
    blind = ProtocolConfig(trials_per_delay=500, classify_error={"FLUORESCES_SD": {"DARK_LOWER": 1.0}})
    assert all(r.n_exited == 0 for r in run_protocol(blind, species).records)
    lost = run_protocol(ProtocolConfig(trials_per_delay=500, ion_loss_per_trial=1.0), species)
    assert all(r.n_discarded == r.n_trials for r in lost.records)
    with pytest.raises(FitError):
        fit_exponential(lost)


def test_expected_survival_non_increasing(species):
    cfg = protocol_for("+5/2", "sigma-", I_MAX, delays=default_delays(1.0, 8), trials_per_delay=20_000, seed=12)
    t, n, k = run_protocol(cfg, species).arrays()
    frac = k / n
    sigma = np.sqrt(frac * (1 - frac) / n)
    assert np.all(np.diff(frac) < 3 * np.hypot(sigma[1:], sigma[:-1]))
    m = build_rate_matrix(cfg, species)
    exact = [m.survival(0, x) for x in t]
    assert all(b < a for a, b in zip(exact, exact[1:]))


def test_simulated_survival_matches_exact_solution(species):
    cfg = protocol_for("+3/2", "sigma-", 3 * I_MAX, trials_per_delay=20_000, depump_fidelity=1.0, seed=14)
    m = build_rate_matrix(cfg, species)
    t, n, k = run_protocol(cfg, species).arrays()
    p = np.array([m.survival(1, x) for x in t])
    chi2 = float(np.sum((k - n * p) ** 2 / (n * p * (1 - p))))
    assert stats.chi2.sf(chi2, t.size) > 0.001


def test_dataset_round_trip_and_csv(species):
    data = run_protocol(protocol_for("+5/2", "sigma-", I_MAX, trials_per_delay=100, seed=1), species)
    back = Dataset.from_json(data.to_json())
    assert back.to_json() == data.to_json()
    assert back.intensity == I_MAX
    rows = list(csv.DictReader(io.StringIO(data.to_csv())))
    assert list(rows[0]) == ["delay_s", "n_trials", "n_survived", "n_discarded", "n_exited"]
    assert len(rows) == 5
    prov = json.loads(data.to_json())["provenance"]
    assert prov["seed"] == 1 and len(prov["config_hash"]) == 64
    with pytest.raises(ValueError):
        Dataset.from_json('{"records": []}')


def test_config_hash_tracks_settings():
    a = ProtocolConfig(seed=1)
    assert a.config_hash() == ProtocolConfig(seed=1).config_hash()
    assert a.config_hash() != ProtocolConfig(seed=2).config_hash()
    assert a.config_hash() != dataclasses.replace(a, laser=LaserField.named("pi", 976e-9, 1.0)).config_hash()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"delays": ()},
        {"delays": (0.5, 0.2)},
        {"delays": (0.0, 0.2)},
        {"trials_per_delay": 0},
        {"prep_error": 1.5},
        {"classify_error": {"BOGUS": {}}},
        {"classify_error": {"DARK_UP": {"FLUORESCES_SD": 0.7, "DARK_LOWER": 0.7}}},
        {"seed": -1},
    ],
)
def test_protocol_config_validation(kwargs):
    with pytest.raises(ValueError):
        ProtocolConfig(**kwargs)


def test_outcome_classes():
    assert [o.name for o in Outcome] == ["FLUORESCES_SD", "DARK_LOWER", "DARK_UP", "LOST"]


def test_bias_needs_light(species):
    with pytest.raises(ValueError):
        effective_decay_bias(ProtocolConfig(), species)


def test_bias_vanishes_at_low_intensity(species):
    cfg = protocol_for("+3/2", "sigma-", I_MAX / 100, trials_per_delay=20_000, seed=3)
    est = effective_decay_bias(cfg, species, n_batches=4)
    assert abs(est.bias) < max(3 * est.sigma, 1e-4)


def test_bias_agrees_with_exact_survival_curve(species):
    cfg = protocol_for("+3/2", "sigma-", I_MAX, trials_per_delay=30_000, seed=30)
    est = effective_decay_bias(cfg, species, n_batches=6)
    exact = double_scatter_bias(species.sublevel("D5/2", "+3/2"), cfg.laser, cfg.delays, species)
    assert abs(est.bias - exact) < 4 * est.sigma
    assert est.bias > 0
