"""Acceptance criteria, each at its stated tolerance and runtime limit.

Every test prints one ``[PASS]``/``[FAIL]`` line (visible without ``-s``).
"""

import time

import numpy as np
import pytest

from caraman.angular import clebsch_gordan, sublevels, wigner3j
from caraman.atomic import load_species, zeeman_splitting
from caraman.experiment import ProtocolConfig, effective_decay_bias, protocol_for, run_protocol
from caraman.fit import fit_decay
from caraman.gates import (
    default_single_qubit_config,
    default_two_qubit_config,
    error_budget,
    one_qubit_error,
    two_qubit_error,
    wavelength_scan,
)
from caraman.reproduce import MAX_SIGMA_INTENSITY, closed_loop
from caraman.scattering import LaserField, rate_breakdown, rate_per_intensity

WL = 976e-9


@pytest.fixture
def report(capsys):
    def _report(label, passed, detail, seconds):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {label}: {detail} ({seconds:.2f} s)")
        return passed

    return _report


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def _reference_rates(species):
    cases = (("+5/2", "sigma-"), ("+3/2", "sigma-"), ("+3/2", "pi"))
    return [rate_per_intensity(species.sublevel("D5/2", m), LaserField.named(p, WL), species=species) for m, p in cases]


def test_criterion_1_reference_rates(species, report):
    with Timer() as t:
        rates = _reference_rates(species)
    targets = ((3.60e-9, 0.06e-9), (2.16e-9, 0.04e-9), (1.44e-9, 0.03e-9))
    ok = all(abs(r - v) <= tol for r, (v, tol) in zip(rates, targets)) and t.seconds < 1
    detail = ", ".join(f"{r * 1e9:.4f}" for r in rates) + " x1e-9 Hz/(W/m^2); target 3.60(6), 2.16(4), 1.44(3)"
    assert report("1 (reference rates)", ok, detail, t.seconds)


def test_criterion_2_exact_ratio(species, raw_species, write_species, report):
    with Timer() as t:
        a, b, c = _reference_rates(species)
        raw_species["upper_levels"][0].update(lifetime_ns=9.0, branching={"S1/2": 0.8, "D3/2": 0.05, "D5/2": 0.15})
        a2, b2, c2 = _reference_rates(load_species(write_species(raw_species)))
    dev = max(abs(a / c - 2.5) / 2.5, abs(b / c - 1.5) / 1.5, abs(a2 / c2 - 2.5) / 2.5, abs(b2 / c2 - 1.5) / 1.5)
    ok = dev < 1e-10 and t.seconds < 1
    assert report("2 (5:3:2 ratio)", ok, f"max relative deviation {dev:.1e} (default and altered data)", t.seconds)


def test_criterion_3a_single_qubit_error(species, report):
    with Timer() as t:
        p = one_qubit_error(default_single_qubit_config(), species).p_raman
    ok = abs(p - 1.25e-6) <= 0.02e-6 and t.seconds < 1
    assert report("3a (1q Raman error)", ok, f"{p:.4e}; target 1.25(2)e-6", t.seconds)


def test_criterion_3b_two_qubit_error(species, report):
    with Timer() as t:
        p = two_qubit_error(default_two_qubit_config(secular_frequency=2e6), species).p_raman
    ok = abs(p - 5e-5) <= 0.2 * 5e-5 and t.seconds < 1
    assert report("3b (2q Raman error, 2 MHz)", ok, f"{p:.4e}; target 5e-5 +/- 20%", t.seconds)


def test_criterion_3c_rayleigh_bound(species, report):
    with Timer() as t:
        one = one_qubit_error(default_single_qubit_config(), species).rayleigh_decoherence_bound
        two = two_qubit_error(default_two_qubit_config(), species).rayleigh_decoherence_bound
    ok = one < 1e-7 and t.seconds < 1
    assert report("3c (Rayleigh bound, 1q gate)", ok, f"{one:.3e} < 1e-7 (2q gate: {two:.2e})", t.seconds)


def test_criterion_3d_recoil_bound(species, report):
    with Timer() as t:
        one = one_qubit_error(default_single_qubit_config(), species).recoil_bound
        two = two_qubit_error(default_two_qubit_config(), species).recoil_bound
    ok = max(one, two) < 1e-8 and t.seconds < 1
    assert report("3d (recoil bound)", ok, f"2q {two:.3e}, 1q {one:.3e}; target < 1e-8", t.seconds)


def test_criterion_4_threshold_scan(species, report):
    with Timer() as t:
        scan = wavelength_scan((880e-9, 1100e-9), 221, default_two_qubit_config(), species)
    thr = scan.threshold
    ok = thr is not None and abs(thr - 963e-9) <= 5e-9 and t.seconds < 10
    value = "no crossing" if thr is None else f"{thr * 1e9:.2f} nm"
    assert report("4 (1e-4 threshold wavelength)", ok, f"{value}; target 963 +/- 5 nm", t.seconds)


def test_criterion_5_zeeman(species, report):
    with Timer() as t:
        z = zeeman_splitting(species.manifold("D5/2"), 1.56)
    ok = abs(z - 2.63e6) <= 0.01 * 2.63e6
    assert report("5 (D5/2 Zeeman splitting)", ok, f"{z / 1e6:.4f} MHz; target 2.63 MHz +/- 1%", t.seconds)


def test_criterion_6_closed_loop(species, report):
    with Timer() as t:
        slope, truth, dark = closed_loop(species)
    pull = (slope.slope - truth) / slope.sigma_slope
    pull_nat = (dark.tau_meas - species.d5half_lifetime) / dark.sigma_tau
    ok = abs(pull) <= 3 and abs(pull_nat) <= 3 and t.seconds < 300
    detail = (f"slope {slope.slope * 1e9:.3f}({slope.sigma_slope * 1e9:.3f})e-9 vs {truth * 1e9:.3f}e-9, pull {pull:+.2f}; "
              f"tau_nat {dark.tau_meas:.3f}({dark.sigma_tau:.3f}) s, pull {pull_nat:+.2f}")
    assert report("6 (closed loop)", ok, detail, t.seconds)


@pytest.mark.parametrize("m,target,tol", [("+5/2", 0.006, 0.003), ("+3/2", 0.014, 0.004)])
def test_criterion_7_double_scatter_bias(species, report, m, target, tol):
    with Timer() as t:
        cfg = protocol_for(m, "sigma-", MAX_SIGMA_INTENSITY, trials_per_delay=100_000, seed=7)
        est = effective_decay_bias(cfg, species, n_batches=10)
    ok = abs(est.bias - target) <= tol and t.seconds < 300
    detail = f"{est.bias * 100:.3f}({est.sigma * 100:.3f}) %; target {target * 100:.1f} +/- {tol * 100:.1f} pp"
    assert report(f"7 (double-scatter bias, {m} sigma-)", ok, detail, t.seconds)


def _cg_worst():
    worst_orth = worst_sym = 0.0
    halves = [x / 2 for x in range(0, 7)]
    for j1 in halves:
        for j2 in halves:
            for m1 in sublevels(j1):
                for m2 in sublevels(j2):
                    tot, J = 0.0, abs(j1 - j2)
                    M = float(m1) + float(m2)
                    while J <= j1 + j2:
                        if abs(M) <= J:
                            tot += clebsch_gordan(j1, m1, j2, m2, J, M) ** 2
                            a = wigner3j(j1, j2, J, m1, m2, -M)
                            b = wigner3j(j2, j1, J, m2, m1, -M) * (-1) ** int(j1 + j2 + J)
                            c = wigner3j(J, j1, j2, -M, m1, m2)
                            worst_sym = max(worst_sym, abs(a - b), abs(a - c))
                        J += 1
                    worst_orth = max(worst_orth, abs(tot - 1))
    return worst_orth, worst_sym


def test_criterion_8_property_suites(species, report):
    with Timer() as t:
        orth, sym = _cg_worst()
        add = 0.0
        rng = np.random.default_rng(0)
        for _ in range(20):
            pol = rng.normal(size=3) + 1j * rng.normal(size=3)
            laser = LaserField.normalized(WL, pol)
            for s in species.sublevels("D5/2"):
                br = rate_breakdown(s, laser, species)
                parts = br.gamma_SD + sum(br.gamma_back_D5.values()) + br.gamma_elastic
                add = max(add, abs(parts - br.gamma_total) / br.gamma_total)
        inv = 0.0
        for cfg in (default_single_qubit_config(), default_two_qubit_config()):
            a = error_budget(cfg, species)
            for f in (1e-3, 0.37, 17.0, 1e4):
                b = error_budget(cfg.scaled(f), species)
                for key in ("p_raman", "p_leak_S", "p_leak_D3", "p_leak_D5_outside", "p_bitflip",
                            "rayleigh_decoherence_bound", "recoil_bound"):
                    inv = max(inv, abs(getattr(b, key) - getattr(a, key)) / getattr(a, key))
        cfg = protocol_for("+3/2", "pi", MAX_SIGMA_INTENSITY, trials_per_delay=5000, seed=123, prep_error=0.01)
        same = run_protocol(cfg, species).to_json() == run_protocol(cfg, species).to_json()
        truth = 1 / species.d5half_lifetime + MAX_SIGMA_INTENSITY * _reference_rates(species)[0]
        pulls = []
        for rep in range(200):
            c = ProtocolConfig(laser=LaserField.named("sigma-", WL, MAX_SIGMA_INTENSITY), trials_per_delay=2000,
                               seed=10_000 + rep)
            f = fit_decay(*run_protocol(c, species).arrays())
            pulls.append((f.rate - truth) / f.sigma_rate)
        mu, sd = float(np.mean(pulls)), float(np.std(pulls, ddof=1))
    checks = {
        "CG orthogonality": orth < 1e-12,
        "3j symmetry": sym < 1e-12,
        "breakdown additivity": add < 1e-10,
        "budget intensity invariance": inv < 1e-10,
        "seed determinism": same,
        "pull calibration": abs(mu) < 0.2 and 0.8 <= sd <= 1.25,
    }
    detail = (f"orth {orth:.1e}, sym {sym:.1e}, additivity {add:.1e}, invariance {inv:.1e}, "
              f"deterministic {same}, pulls mean {mu:+.3f} sd {sd:.3f}")
    failed = [k for k, v in checks.items() if not v]
    assert report("8 (property suites)", not failed, detail + (f"; failing: {failed}" if failed else ""), t.seconds)

