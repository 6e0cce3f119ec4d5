"""End-to-end regression of the headline numbers.

Each check returns a :class:`Check` with the computed value, the target band
and a pass flag.  The CLI ``reproduce`` subcommand prints them as a table.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .angular import clebsch_gordan, sublevels
from .atomic import SpeciesData, default_species, zeeman_splitting
from .experiment import ProtocolConfig, default_delays, effective_decay_bias, protocol_for, run_protocol
from .fit import fit_decay, fit_exponential, fit_rate_vs_intensity, subtract_natural
from .gates import (
    default_single_qubit_config,
    default_two_qubit_config,
    one_qubit_error,
    two_qubit_error,
    wavelength_scan,
)
from .scattering import LaserField, rate_breakdown, rate_per_intensity

__all__ = ["Check", "REFERENCE_CASES", "run_all", "CHECKS"]

REFERENCE_CASES = (
    ("+5/2", "sigma-", 3.60e-9, 0.06e-9),
    ("+3/2", "sigma-", 2.16e-9, 0.04e-9),
    ("+3/2", "pi", 1.44e-9, 0.03e-9),
)
MAX_SIGMA_INTENSITY = 8.7e7


@dataclass(frozen=True)
class Check:
    criterion: int
    name: str
    value: str
    target: str
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.criterion}. {self.name}: {self.value} (target {self.target}, {self.seconds:.2f} s)"


def _timed(fn: Callable[[], list[Check]]) -> list[Check]:
    start = time.perf_counter()
    checks = fn()
    dt = time.perf_counter() - start
    return [Check(c.criterion, c.name, c.value, c.target, c.passed, dt) for c in checks]


def reference_rates(species: SpeciesData, wavelength: float = 976e-9) -> list[float]:
    return [
        rate_per_intensity(species.sublevel("D5/2", m), LaserField.named(pol, wavelength), species=species)
        for m, pol, _v, _s in REFERENCE_CASES
    ]


def check_reference_rates(species: SpeciesData) -> list[Check]:
    rates = reference_rates(species)
    out = []
    for (m, pol, val, tol), r in zip(REFERENCE_CASES, rates):
        out.append(
            Check(1, f"Gamma_SD({m}, {pol}) per intensity", f"{r * 1e9:.4f}e-9 Hz/(W/m^2)",
                  f"{val * 1e9:.2f}(+/-{tol * 1e9:.2f})e-9", abs(r - val) <= tol)
        )
    return out


def check_ratio(species: SpeciesData) -> list[Check]:
    a, b, c = reference_rates(species)
    dev = max(abs(a / c - 2.5), abs(b / c - 1.5)) / 2.5
    return [Check(2, "5:3:2 rate ratio", f"{a / c * 2:.12f}:{b / c * 2:.12f}:2", "5:3:2 to 1e-10", dev < 1e-10)]


def check_gates(species: SpeciesData) -> list[Check]:
    one = one_qubit_error(default_single_qubit_config(), species)
    two = two_qubit_error(default_two_qubit_config(), species)
    return [
        Check(3, "1q Raman error", f"{one.p_raman:.4e}", "1.25(+/-0.02)e-6", abs(one.p_raman - 1.25e-6) <= 0.02e-6),
        Check(3, "2q Raman error (2 MHz)", f"{two.p_raman:.4e}", "5e-5 +/- 20%", abs(two.p_raman - 5e-5) <= 0.2 * 5e-5),
        Check(3, "Rayleigh decoherence bound (1q)", f"{one.rayleigh_decoherence_bound:.3e}", "< 1e-7",
              one.rayleigh_decoherence_bound < 1e-7),
        Check(3, "recoil bound (2q)", f"{two.recoil_bound:.3e}", "< 1e-8", two.recoil_bound < 1e-8),
    ]


def check_threshold(species: SpeciesData) -> list[Check]:
    scan = wavelength_scan((880e-9, 1100e-9), 221, default_two_qubit_config(), species)
    thr = scan.threshold
    value = "none" if thr is None else f"{thr * 1e9:.2f} nm"
    ok = thr is not None and abs(thr - 963e-9) <= 5e-9
    return [Check(4, "2q error floor crosses 1e-4", value, "963 +/- 5 nm", ok)]


def check_zeeman(species: SpeciesData) -> list[Check]:
    z = zeeman_splitting(species.manifold("D5/2"), 1.56)
    return [Check(5, "D5/2 splitting at 1.56 G", f"{z / 1e6:.4f} MHz", "2.63 MHz +/- 1%", abs(z - 2.63e6) <= 0.01 * 2.63e6)]


def closed_loop(species: SpeciesData, seed: int = 2024, trials: int = 10_000):
    """Simulate (+5/2, sigma-) at four intensities and fit the slope; returns (fit, truth, natural fit)."""
    intensities = np.linspace(0.25, 1.0, 4) * MAX_SIGMA_INTENSITY
    delays = default_delays(1.0, 5)
    tau_nat, sigma_nat = species.d5half_lifetime, species.d5half_lifetime_uncertainty
    points = []
    for i, inten in enumerate(intensities):
        cfg = protocol_for("+5/2", "sigma-", float(inten), delays=delays, trials_per_delay=trials, seed=seed + i)
        fit = fit_exponential(run_protocol(cfg, species))
        g, s = subtract_natural(fit.tau_meas, fit.sigma_tau, tau_nat, sigma_nat)
        points.append((float(inten), g, s))
    slope = fit_rate_vs_intensity(points)
    truth = rate_per_intensity(species.sublevel("D5/2", "+5/2"), LaserField.named("sigma-", 976e-9), species=species)
    dark = fit_exponential(run_protocol(ProtocolConfig(delays=delays, trials_per_delay=trials, seed=seed + 100), species))
    return slope, truth, dark


def check_closed_loop(species: SpeciesData) -> list[Check]:
    slope, truth, dark = closed_loop(species)
    pull = (slope.slope - truth) / slope.sigma_slope
    pull_nat = (dark.tau_meas - species.d5half_lifetime) / dark.sigma_tau
    return [
        Check(6, "closed-loop slope (+5/2, sigma-)",
              f"{slope.slope * 1e9:.4f}(+/-{slope.sigma_slope * 1e9:.4f})e-9, pull {pull:+.2f}",
              f"{truth * 1e9:.4f}e-9 within 3 sigma", abs(pull) <= 3),
        Check(6, "shutter-closed lifetime", f"{dark.tau_meas:.4f}(+/-{dark.sigma_tau:.4f}) s, pull {pull_nat:+.2f}",
              f"{species.d5half_lifetime:.3f} s within 3 sigma", abs(pull_nat) <= 3),
    ]


def check_bias(species: SpeciesData, trials: int = 100_000, batches: int = 10) -> list[Check]:
    out = []
    for m, target, tol in (("+5/2", 0.006, 0.003), ("+3/2", 0.014, 0.004)):
        cfg = protocol_for(m, "sigma-", MAX_SIGMA_INTENSITY, trials_per_delay=trials, seed=7)
        est = effective_decay_bias(cfg, species, n_batches=batches)
        out.append(
            Check(7, f"double-scatter bias ({m}, sigma-)", f"{est.bias * 100:.3f}(+/-{est.sigma * 100:.3f}) %",
                  f"{target * 100:.1f} +/- {tol * 100:.1f} %", abs(est.bias - target) <= tol)
        )
    return out


def check_properties(species: SpeciesData) -> list[Check]:
    # CG orthogonality for all j1, j2 <= 2
    worst = 0.0
    halves = [x / 2 for x in range(0, 5)]
    for j1 in halves:
        for j2 in halves:
            for m1 in sublevels(j1):
                for m2 in sublevels(j2):
                    tot = 0.0
                    J = abs(j1 - j2)
                    while J <= j1 + j2:
                        M = float(m1) + float(m2)
                        if abs(M) <= J:
                            tot += clebsch_gordan(j1, m1, j2, m2, J, M) ** 2
                        J += 1
                    worst = max(worst, abs(tot - 1))
    add = 0.0
    laser = LaserField.named("x", 976e-9)
    for s in species.sublevels("D5/2"):
        br = rate_breakdown(s, laser, species)
        parts = br.gamma_SD + sum(br.gamma_back_D5.values()) + br.gamma_elastic
        add = max(add, abs(parts - br.gamma_total) / br.gamma_total)
    cfg = default_two_qubit_config()
    p1, p2 = two_qubit_error(cfg, species).p_raman, two_qubit_error(cfg.scaled(17.0), species).p_raman
    inv = abs(p1 - p2) / p1
    small = ProtocolConfig(trials_per_delay=500, seed=99)
    same = run_protocol(small, species).to_json() == run_protocol(small, species).to_json()
    pulls = []
    for rep in range(200):
        cfg = ProtocolConfig(laser=LaserField.named("sigma-", 976e-9, MAX_SIGMA_INTENSITY), trials_per_delay=2000,
                             seed=10_000 + rep)
        d = run_protocol(cfg, species)
        f = fit_decay(*d.arrays())
        truth = species.d5half_lifetime
        rate_true = 1 / truth + MAX_SIGMA_INTENSITY * reference_rates(species)[0]
        pulls.append((f.rate - rate_true) / f.sigma_rate)
    mu, sd = float(np.mean(pulls)), float(np.std(pulls, ddof=1))
    return [
        Check(8, "CG orthogonality", f"{worst:.1e}", "< 1e-12", worst < 1e-12),
        Check(8, "RateBreakdown additivity", f"{add:.1e}", "< 1e-10", add < 1e-10),
        Check(8, "error budget intensity invariance", f"{inv:.1e}", "< 1e-10", inv < 1e-10),
        Check(8, "seed determinism", "identical" if same else "differs", "identical", same),
        Check(8, "fit pull distribution", f"mean {mu:+.3f}, sd {sd:.3f}", "|mean| < 0.2, sd in [0.8, 1.25]",
              abs(mu) < 0.2 and 0.8 <= sd <= 1.25),
    ]


CHECKS = (check_reference_rates, check_ratio, check_gates, check_threshold, check_zeeman, check_closed_loop, check_bias,
          check_properties)


def run_all(species: SpeciesData | None = None) -> list[Check]:
    species = default_species() if species is None else species
    results: list[Check] = []
    for check in CHECKS:
        results.extend(_timed(lambda: check(species)))
    return results


def summary_ok(results: list[Check]) -> bool:
    return all(c.passed for c in results)

