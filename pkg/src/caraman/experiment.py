"""Monte Carlo model of the D5/2 decay-rate measurement.

One trial prepares a D5/2 sublevel, illuminates it for a delay, lets the
sublevel populations evolve as a continuous-time Markov chain (laser scattering
plus natural decay), and classifies the final state the way the fluorescence
check would.  States 0-5 are D5/2 m = +5/2 ... -5/2; state 6 collects S1/2 and
D3/2, from which the ion never returns within a trial.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import _rng
from ._kernel import run_jump_chain
from .atomic import SpeciesData, Sublevel, default_species
from .fit import FitError, fit_decay
from .scattering import D5_LABEL, LaserField, ScatteringOptions, d5_rate_table

__all__ = [
    "Outcome",
    "ProtocolConfig",
    "RateMatrix",
    "DelayRecord",
    "Dataset",
    "BiasEstimate",
    "build_rate_matrix",
    "simulate_trial",
    "simulate_terminal_states",
    "run_protocol",
    "effective_decay_bias",
    "ABSORBER",
    "protocol_for",
    "default_delays",
]

ABSORBER = 6
UP_INDEX = 0  # |D5/2, +5/2>


class Outcome(enum.IntEnum):
    FLUORESCES_SD = 0
    DARK_LOWER = 1
    DARK_UP = 2
    LOST = 3


_CLASS_NAMES = {o.name: o for o in Outcome}


def _check_prob(value: float, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be a probability, got {value}")


@dataclass(frozen=True)
class ProtocolConfig:
    """Settings for one measurement series.

    ``laser=None`` means the shutter stays closed.  ``classify_error`` maps a
    true class name (``FLUORESCES_SD``, ``DARK_LOWER``, ``DARK_UP``) to
    ``{reported class name: probability}``.
    """

    initial_m: str = "+5/2"
    laser: LaserField | None = None
    delays: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    trials_per_delay: int = 10_000
    prep_error: float = 0.0
    classify_error: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    depump_fidelity: float = 0.99
    ion_loss_per_trial: float = 0.0
    discard_on_up_detect: bool = False
    seed: int = 0
    options: ScatteringOptions = field(default_factory=ScatteringOptions)

    def __post_init__(self):
        delays = tuple(float(d) for d in self.delays)
        if not delays:
            raise ValueError("at least one delay is required")
        if any(d <= 0 for d in delays):
            raise ValueError("delays must be strictly positive")
        if any(b <= a for a, b in zip(delays, delays[1:])):
            raise ValueError("delays must be strictly increasing")
        object.__setattr__(self, "delays", delays)
        if int(self.trials_per_delay) < 1:
            raise ValueError("trials_per_delay must be at least 1")
        for name in ("prep_error", "depump_fidelity", "ion_loss_per_trial"):
            _check_prob(getattr(self, name), name)
        for true, row in self.classify_error.items():
            if true not in _CLASS_NAMES or true == "LOST":
                raise ValueError(f"unknown true class {true!r}")
            for rep, p in row.items():
                if rep not in _CLASS_NAMES or rep == "LOST":
                    raise ValueError(f"unknown reported class {rep!r}")
                _check_prob(p, f"classify_error[{true}][{rep}]")
            if sum(p for rep, p in row.items() if rep != true) > 1 + 1e-12:
                raise ValueError(f"misreport probabilities for {true} exceed 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def intensity(self) -> float:
        return 0.0 if self.laser is None else self.laser.intensity

    def to_dict(self) -> dict:
        laser = None
        if self.laser is not None:
            laser = {
                "wavelength_m": self.laser.wavelength,
                "polarization": [[a.real, a.imag] for a in self.laser.polarization],
                "intensity_w_m2": self.laser.intensity,
                "direction": list(self.laser.direction),
            }
        return {
            "initial_m": self.initial_m,
            "laser": laser,
            "delays_s": list(self.delays),
            "trials_per_delay": int(self.trials_per_delay),
            "prep_error": self.prep_error,
            "classify_error": {k: dict(sorted(v.items())) for k, v in sorted(self.classify_error.items())},
            "depump_fidelity": self.depump_fidelity,
            "ion_loss_per_trial": self.ion_loss_per_trial,
            "discard_on_up_detect": self.discard_on_up_detect,
            "seed": int(self.seed),
            "options": asdict(self.options),
        }

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class RateMatrix:
    """Event rates ``rates[from, to]`` in Hz between the 7 model states.

    Diagonal entries are null events: the kernel draws them like any other
    jump but the state does not change.  They leave the physics untouched and
    let two models share random numbers jump for jump.
    """

    rates: np.ndarray
    labels: tuple

    def __post_init__(self):
        r = np.array(self.rates, dtype=float)
        if r.shape != (7, 7):
            raise ValueError("rate matrix must be 7x7")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("rates must be finite and non-negative")
        if np.any(r[ABSORBER] != 0):
            raise ValueError("the absorber must have zero exit rate")
        r.setflags(write=False)
        object.__setattr__(self, "rates", r)

    @property
    def exit_rates(self) -> np.ndarray:
        """Physical exit rate of each state (null events excluded)."""
        return self.rates.sum(axis=1) - np.diag(self.rates)

    def cumulative(self) -> np.ndarray:
        return np.ascontiguousarray(np.cumsum(self.rates, axis=1))

    def generator(self) -> np.ndarray:
        """Column-convention generator: ``dp/dt = G @ p``."""
        gen = self.rates.T.copy()
        gen[np.diag_indices_from(gen)] = -self.exit_rates
        return gen

    def single_step(self) -> "RateMatrix":
        """Same absorber rates with D5/2-internal transitions turned into null events.

        Total event rates are unchanged, so under shared random numbers the two
        models follow identical trajectories until the first scatter back into
        D5/2.
        """
        r = np.zeros_like(self.rates)
        r[:, ABSORBER] = self.rates[:, ABSORBER]
        internal = self.rates[:ABSORBER, :ABSORBER].sum(axis=1)
        r[np.arange(ABSORBER), np.arange(ABSORBER)] = internal
        return RateMatrix(r, self.labels)

    def survival(self, initial: int, t: float) -> float:
        from scipy.linalg import expm

        p0 = np.zeros(7)
        p0[initial] = 1.0
        return float(1.0 - (expm(self.generator() * t) @ p0)[ABSORBER])


def _state_index(species: SpeciesData, m) -> int:
    sub = species.sublevel(D5_LABEL, m)
    return species.sublevels(D5_LABEL).index(sub)


def build_rate_matrix(config: ProtocolConfig, species: SpeciesData | None = None) -> RateMatrix:
    """Laser-driven rates at the configured intensity plus natural decay into the absorber."""
    species = default_species() if species is None else species
    labels = tuple(s.label for s in species.sublevels(D5_LABEL)) + ("S1/2+D3/2",)
    rates = np.zeros((7, 7))
    if config.laser is not None and config.laser.intensity > 0:
        rates += d5_rate_table(config.laser, species, config.options) * config.laser.intensity
    rates[:ABSORBER, ABSORBER] += 1.0 / species.d5half_lifetime
    return RateMatrix(rates, labels)


def simulate_trial(matrix: RateMatrix, initial: int | Sublevel, t: float, rng: np.random.Generator) -> int:
    """Sample one trajectory with a numpy ``Generator``; returns the state index at ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if isinstance(initial, Sublevel):
        initial = 5 - (initial.m.twice + 5) // 2
    state = int(initial)
    events = matrix.rates.sum(axis=1)
    now = 0.0
    while events[state] > 0:
        now += rng.exponential(1.0 / events[state])
        if now > t:
            break
        probs = matrix.rates[state] / events[state]
        state = int(rng.choice(7, p=probs))
    return state


def simulate_terminal_states(
    matrix: RateMatrix, initial: np.ndarray, horizon: float, seed: int, delay_index: int
) -> np.ndarray:
    """Kernel-backed batch simulation with per-trial counter-based streams."""
    keys = _rng.trial_keys(seed, _rng.STREAM_DYNAMICS, delay_index, np.arange(initial.size))
    return run_jump_chain(matrix.cumulative(), np.asarray(initial, dtype=np.int64), keys, float(horizon))


@dataclass(frozen=True)
class DelayRecord:
    delay: float
    n_trials: int
    n_survived: int
    n_exited: int
    n_discarded: int
    histogram: Mapping[str, int]

    def __post_init__(self):
        if self.n_survived + self.n_exited + self.n_discarded != self.n_trials:
            raise ValueError("outcome counts do not partition the trials")


@dataclass(frozen=True)
class Dataset:
    records: tuple
    config: Mapping
    config_hash: str
    seed: int

    def arrays(self):
        """(delays, usable trials, survivors) with discarded trials removed."""
        t = np.array([r.delay for r in self.records])
        n = np.array([r.n_trials - r.n_discarded for r in self.records], dtype=float)
        k = np.array([r.n_survived for r in self.records], dtype=float)
        return t, n, k

    @property
    def intensity(self) -> float:
        laser = self.config.get("laser")
        return 0.0 if laser is None else float(laser["intensity_w_m2"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delay_s", "n_trials", "n_survived", "n_discarded", "n_exited"])
        for r in self.records:
            w.writerow([repr(r.delay), r.n_trials, r.n_survived, r.n_discarded, r.n_exited])
        return buf.getvalue()

    def to_json(self) -> str:
        body = {
            "records": [
                {
                    "delay_s": r.delay,
                    "n_trials": r.n_trials,
                    "n_survived": r.n_survived,
                    "n_exited": r.n_exited,
                    "n_discarded": r.n_discarded,
                    "histogram": dict(r.histogram),
                }
                for r in self.records
            ],
            "provenance": {"config": self.config, "config_hash": self.config_hash, "seed": self.seed},
        }
        return json.dumps(body, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Dataset":
        body = json.loads(text)
        try:
            records = tuple(
                DelayRecord(
                    float(r["delay_s"]),
                    int(r["n_trials"]),
                    int(r["n_survived"]),
                    int(r["n_exited"]),
                    int(r["n_discarded"]),
                    dict(r.get("histogram", {})),
                )
                for r in body["records"]
            )
            prov = body["provenance"]
            return cls(records, prov.get("config", {}), prov.get("config_hash", ""), int(prov.get("seed", 0)))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"not a dataset file: {exc}") from None

    def resampled(self, rng: np.random.Generator) -> "Dataset":
        """Multinomial redraw of each delay's (survived, exited, discarded) counts."""
        out = []
        for r in self.records:
            p = np.array([r.n_survived, r.n_exited, r.n_discarded], dtype=float) / r.n_trials
            s, e, d = (int(x) for x in rng.multinomial(r.n_trials, p))
            out.append(DelayRecord(r.delay, r.n_trials, s, e, d, {}))
        return replace(self, records=tuple(out))


def _detect(true_cls: np.ndarray, config: ProtocolConfig, keys: np.ndarray) -> np.ndarray:
    """Apply depump failure, classifier confusion and ion loss; draws 1-3 of the detection stream."""
    reported = true_cls.copy()
    u_depump = _rng.draw(keys, 1)
    lower = reported == Outcome.DARK_LOWER
    reported[lower & (u_depump >= config.depump_fidelity)] = Outcome.DARK_UP
    if config.classify_error:
        u_cls = _rng.draw(keys, 2)
        before = reported.copy()
        for true_name, row in sorted(config.classify_error.items()):
            sel = before == _CLASS_NAMES[true_name]
            edge = 0.0
            for rep_name, p in sorted(row.items()):
                if rep_name == true_name or p == 0:
                    continue
                hit = sel & (u_cls > edge) & (u_cls <= edge + p)
                reported[hit] = _CLASS_NAMES[rep_name]
                edge += p
    u_loss = _rng.draw(keys, 3)
    reported[u_loss <= config.ion_loss_per_trial] = Outcome.LOST
    return reported


def run_protocol(
    config: ProtocolConfig,
    species: SpeciesData | None = None,
    matrix: RateMatrix | None = None,
) -> Dataset:
    """Simulate every delay of ``config``; deterministic in ``config.seed``.

    ``matrix`` overrides the rate matrix built from ``config`` (used for the
    single-step comparison model).
    """
    species = default_species() if species is None else species
    if matrix is None:
        matrix = build_rate_matrix(config, species)
    start = _state_index(species, config.initial_m)
    n = int(config.trials_per_delay)
    records = []
    for d_idx, delay in enumerate(config.delays):
        det_keys = _rng.trial_keys(config.seed, _rng.STREAM_DETECTION, d_idx, np.arange(n))
        init = np.full(n, start, dtype=np.int64)
        init[_rng.draw(det_keys, 0) <= config.prep_error] = ABSORBER
        final = simulate_terminal_states(matrix, init, delay, config.seed, d_idx)
        true_cls = np.where(
            final == ABSORBER,
            Outcome.FLUORESCES_SD,
            np.where(final == UP_INDEX, Outcome.DARK_UP, Outcome.DARK_LOWER),
        ).astype(np.int64)
        reported = _detect(true_cls, config, det_keys)
        counts = np.bincount(reported, minlength=4)
        hist = {o.name: int(counts[o]) for o in Outcome}
        lost = hist["LOST"]
        up = hist["DARK_UP"]
        discarded = lost + (up if config.discard_on_up_detect else 0)
        survived = hist["DARK_LOWER"] + (0 if config.discard_on_up_detect else up)
        records.append(DelayRecord(delay, n, survived, hist["FLUORESCES_SD"], discarded, hist))
    return Dataset(tuple(records), config.to_dict(), config.config_hash(), int(config.seed))


@dataclass(frozen=True)
class BiasEstimate:
    bias: float
    sigma: float
    batches: tuple

    def __float__(self) -> float:
        return self.bias


def effective_decay_bias(
    config: ProtocolConfig,
    species: SpeciesData | None = None,
    n_batches: int = 10,
) -> BiasEstimate:
    """Relative shortfall of the fitted scattering rate against the single-step model.

    Each batch simulates the full chain and the single-step chain (D5/2-internal
    transitions removed) on identical random streams, fits both, and records
    ``(G_single - G_full) / G_single`` with ``G = 1/tau_fit - 1/tau_nat``.
    Batches use seeds ``config.seed + b``; the spread across batches gives ``sigma``.
    """
    species = default_species() if species is None else species
    if config.intensity() <= 0:
        raise ValueError("bias needs a nonzero laser intensity")
    if n_batches < 2:
        raise ValueError("need at least two batches for an uncertainty")
    full = build_rate_matrix(config, species)
    single = full.single_step()
    tau_nat = species.d5half_lifetime
    values = []
    for b in range(n_batches):
        cfg = replace(config, seed=(config.seed + b) % 2**64)
        fits = []
        for mat in (full, single):
            data = run_protocol(cfg, species, mat)
            try:
                fits.append(fit_decay(*data.arrays()).rate - 1.0 / tau_nat)
            except FitError:
                fits.append(math.nan)
        values.append((fits[1] - fits[0]) / fits[1])
    arr = np.array(values)
    arr = arr[np.isfinite(arr)]
    if arr.size < 2:
        raise FitError("too few batches produced a usable fit")
    return BiasEstimate(float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size)), tuple(values))


def default_delays(max_delay: float = 1.0, n: int = 5) -> tuple:
    return tuple(float(x) for x in np.linspace(max_delay / n, max_delay, n))


def protocol_for(
    initial_m: str,
    polarization: str | None,
    intensity: float,
    wavelength: float = 976e-9,
    **kwargs,
) -> ProtocolConfig:
    """Convenience constructor; ``polarization=None`` or zero intensity closes the shutter."""
    laser = None
    if polarization is not None and intensity > 0:
        laser = LaserField.named(polarization, wavelength, intensity)
    return ProtocolConfig(initial_m=initial_m, laser=laser, **kwargs)
