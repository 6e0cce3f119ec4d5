"""Command-line entry point: ``caraman <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 physics or domain error, 4 a
``reproduce`` check failed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from ._kernel import BACKEND
from .angular import QuantumNumberError
from .atomic import SPECIES_ENV_VAR, SpeciesValidationError, default_species, species_file_hash
from .experiment import Dataset, ProtocolConfig, run_protocol
from .fit import FitError, FitResult, bootstrap_uncertainty, fit_exponential, fit_rate_vs_intensity, subtract_natural
from .gates import (
    ERROR_THRESHOLD,
    GateConfigError,
    default_single_qubit_config,
    default_two_qubit_config,
    error_budget,
    wavelength_scan,
)
from .scattering import (
    LaserField,
    ResonanceError,
    ScatteringOptions,
    intensity_from_power,
    rate_breakdown,
)

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_REGRESSION = 0, 2, 3, 4

DOMAIN_ERRORS = (
    ResonanceError,
    GateConfigError,
    FitError,
    SpeciesValidationError,
    QuantumNumberError,
    ValueError,
    KeyError,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, seed: bool = False) -> None:
    p.add_argument("--species", help=f"species JSON (default: ${SPECIES_ENV_VAR} or the bundled 40Ca+ file)")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--output", "-o", help="write the primary output here; a .manifest.json sidecar is added")
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--b-field", type=float, default=0.0, help="magnetic field in gauss (default 0)")
    p.add_argument("--no-counter-rotating", action="store_true", help="drop the counter-rotating detuning term")
    p.add_argument("--min-detuning-ghz", type=float, default=1000.0,
                   help="refuse lasers closer than this to a resonance (default 1000 GHz)")


def _add_intensity(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--intensity", type=float, help="W/m^2")
    g.add_argument("--power", type=float, help="beam power in W (needs --waist)")
    p.add_argument("--waist", type=float, help="1/e^2 intensity radius in m")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="caraman", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rates", help="per-intensity scattering rates out of a D5/2 sublevel")
    _add_common(p)
    _add_model(p)
    p.add_argument("--pol", default="sigma-", help="sigma-, pi, sigma+ or x")
    p.add_argument("--m", default="+5/2", help="initial D5/2 sublevel, e.g. +5/2")
    p.add_argument("--wavelength", type=float, default=976e-9, help="m")
    _add_intensity(p)

    p = sub.add_parser("gate-errors", help="Raman error budgets of the 1q and 2q gates")
    _add_common(p)
    _add_model(p)
    p.add_argument("--gate", choices=("1q", "2q", "both"), default="both")
    p.add_argument("--wavelength", type=float, default=976e-9, help="m")
    p.add_argument("--secular-mhz", type=float, default=2.0)
    _add_intensity(p)

    p = sub.add_parser("scan", help="2q error floor versus wavelength")
    _add_common(p)
    _add_model(p)
    p.add_argument("--min-nm", type=float, default=880.0)
    p.add_argument("--max-nm", type=float, default=1100.0)
    p.add_argument("--steps", type=int, default=221)
    p.add_argument("--secular-mhz", type=float, default=2.0)

    p = sub.add_parser("simulate", help="simulate the decay-rate protocol")
    _add_common(p, seed=True)
    _add_model(p)
    p.add_argument("--m", default="+5/2")
    p.add_argument("--pol", default="sigma-", help="polarization, or 'none' for shutter closed")
    p.add_argument("--wavelength", type=float, default=976e-9)
    _add_intensity(p)
    p.add_argument("--delays", default="0.2,0.4,0.6,0.8,1.0", help="comma-separated seconds")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--prep-error", type=float, default=0.0)
    p.add_argument("--depump-fidelity", type=float, default=0.99)
    p.add_argument("--ion-loss", type=float, default=0.0)
    p.add_argument("--discard-up", action="store_true", help="discard trials detected in |+5/2>")

    p = sub.add_parser("fit", help="fit simulated datasets (JSON)")
    _add_common(p, seed=True)
    p.add_argument("datasets", nargs="+")
    p.add_argument("--free-amplitude", action="store_true")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples (0 = off, else >= 100)")

    p = sub.add_parser("reproduce", help="run every regression check and report pass/fail")
    _add_common(p)
    return parser


def _options(args) -> ScatteringOptions:
    return ScatteringOptions(
        b_field_gauss=args.b_field,
        counter_rotating=not args.no_counter_rotating,
        min_detuning_hz=args.min_detuning_ghz * 1e9,
    )


def _intensity(args, default: float | None = None) -> float | None:
    if getattr(args, "power", None) is not None:
        if args.waist is None:
            raise _UsageError("--power requires --waist")
        return intensity_from_power(args.power, args.waist)
    if getattr(args, "waist", None) is not None and getattr(args, "intensity", None) is None:
        raise _UsageError("--waist requires --power")
    if getattr(args, "intensity", None) is not None:
        if args.intensity < 0:
            raise ValueError("intensity must be non-negative")
        return args.intensity
    return default


class _UsageError(Exception):
    pass


def _format_rows(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    keys = list(rows[0]) if rows else []
    if fmt == "csv":
        import csv
        import io

        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    cells = [[str(r[k]) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    lines = ["  ".join(k.ljust(w) for k, w in zip(keys, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def _emit(text: str, args, extra: dict | None = None) -> None:
    if args.output:
        path = Path(args.output)
        path.write_text(text)
        _write_manifest(path, args, extra)
    else:
        sys.stdout.write(text)


def _write_manifest(path: Path, args, extra: dict | None = None) -> None:
    species = _load_species(args)
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("output",)}
    manifest = {
        "command": args.command,
        "config": config,
        "species_file": species.path,
        "species_sha256": species_file_hash(species),
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "kernel_backend": BACKEND,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    Path(str(path) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


_SPECIES_CACHE: dict = {}


def _load_species(args):
    key = args.species or os.environ.get(SPECIES_ENV_VAR) or ""
    if key not in _SPECIES_CACHE:
        _SPECIES_CACHE[key] = default_species(args.species)
    return _SPECIES_CACHE[key]


def cmd_rates(args) -> int:
    species = _load_species(args)
    laser = LaserField.named(args.pol, args.wavelength)
    initial = species.sublevel("D5/2", args.m)
    br = rate_breakdown(initial, laser, species, _options(args))
    intensity = _intensity(args)
    entries = [("gamma_SD", br.gamma_SD)]
    entries += [(f"gamma_back_D5[{m.signed()}]", r) for m, r in sorted(br.gamma_back_D5.items(), reverse=True)]
    entries += [
        ("gamma_elastic", br.gamma_elastic),
        ("gamma_Raman", br.gamma_Raman),
        ("gamma_total", br.gamma_total),
    ]
    entries += [(f"to {lab}", r) for lab, r in br.by_manifold.items()]
    rows = []
    for name, r in entries:
        row = {
            "initial_m": initial.m.signed(),
            "polarization": laser.describe(),
            "quantity": name,
            "rate_per_intensity_Hz_per_W_m2": f"{r:.6e}",
        }
        if intensity is not None:
            row["rate_Hz"] = f"{r * intensity:.6e}"
        rows.append(row)
    _emit(_format_rows(rows, args.format), args)
    return EXIT_OK


def cmd_gate_errors(args) -> int:
    species = _load_species(args)
    opts = _options(args)
    intensity = _intensity(args)
    configs = []
    if args.gate in ("1q", "both"):
        configs.append(default_single_qubit_config(args.wavelength, intensity))
    if args.gate in ("2q", "both"):
        configs.append(default_two_qubit_config(args.wavelength, intensity, args.secular_mhz * 1e6))
    budgets = []
    for cfg in configs:
        budgets.append(error_budget(replace(cfg, options=opts), species).to_dict())
    if args.format == "json":
        text = json.dumps(budgets, indent=2) + "\n"
    else:
        rows = []
        for b in budgets:
            for k, v in b.items():
                if k == "gate_kind":
                    continue
                unit = {"rabi_frequency": "rad/s", "gate_time": "s", "gamma_raman": "Hz", "lamb_dicke": "dimensionless"}.get(k, "probability")
                rows.append({"gate": b["gate_kind"], "quantity": k, "unit": unit,
                             "value": "" if v is None else f"{v:.6e}"})
        text = _format_rows(rows, args.format)
    _emit(text, args)
    return EXIT_OK


def cmd_scan(args) -> int:
    species = _load_species(args)
    cfg = replace(default_two_qubit_config(secular_frequency=args.secular_mhz * 1e6), options=_options(args))
    result = wavelength_scan((args.min_nm * 1e-9, args.max_nm * 1e-9), args.steps, cfg, species)
    thr = None if result.threshold is None else result.threshold * 1e9
    if args.format == "json":
        text = json.dumps(
            {
                "threshold_nm": thr,
                "level": ERROR_THRESHOLD,
                "points": [
                    {"wavelength_nm": p.wavelength * 1e9, "error_floor": None if p.resonant else p.error_floor,
                     "resonant": p.resonant}
                    for p in result.points
                ],
            },
            indent=2,
        ) + "\n"
    else:
        text = result.to_csv()
    _emit(text, args, {"threshold_nm": thr})
    msg = "no crossing in window" if thr is None else f"{thr:.3f} nm"
    print(f"threshold (2q error floor = {ERROR_THRESHOLD:g}): {msg}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    species = _load_species(args)
    delays = tuple(float(x) for x in args.delays.split(",") if x.strip())
    intensity = _intensity(args, 0.0)
    laser = None
    if args.pol.lower() != "none" and intensity > 0:
        laser = LaserField.named(args.pol, args.wavelength, intensity)
    cfg = ProtocolConfig(
        initial_m=args.m,
        laser=laser,
        delays=delays,
        trials_per_delay=args.trials,
        prep_error=args.prep_error,
        depump_fidelity=args.depump_fidelity,
        ion_loss_per_trial=args.ion_loss,
        discard_on_up_detect=args.discard_up,
        seed=args.seed,
        options=_options(args),
    )
    data = run_protocol(cfg, species)
    text = data.to_json() + "\n" if args.format == "json" else data.to_csv()
    if args.output and args.format != "json":
        # the JSON form is what `fit` reads; keep it next to the CSV
        Path(str(args.output) + ".json").write_text(data.to_json() + "\n")
    _emit(text, args, {"config_hash": data.config_hash})
    return EXIT_OK


def cmd_fit(args) -> int:
    species = _load_species(args)
    results = []
    points = []
    for path in args.datasets:
        data = Dataset.from_json(Path(path).read_text())
        fit = fit_exponential(data, free_amplitude=args.free_amplitude)
        sigma_tau = fit.sigma_tau
        method = fit.method
        if args.bootstrap:
            boot = bootstrap_uncertainty(data, resamples=args.bootstrap, seed=args.seed)
            sigma_tau = boot.sigma
            method += "+bootstrap"
        res = FitResult(tau_s=fit.tau_meas, sigma_tau_s=sigma_tau, chi2=fit.chi2, dof=fit.dof, method=method,
                        seed=data.seed)
        if data.intensity > 0:
            g, s = subtract_natural(fit.tau_meas, sigma_tau, species.d5half_lifetime,
                                    species.d5half_lifetime_uncertainty)
            res.gamma_sd_hz, res.sigma_hz = g, s
            points.append((data.intensity, g, s))
        results.append({"dataset": str(path), **json.loads(res.to_json())})
    summary = None
    if len(points) == 1 or len({p[0] for p in points}) >= 2:
        slope = fit_rate_vs_intensity(points)
        summary = json.loads(
            FitResult(slope_si=slope.slope, sigma_slope_si=slope.sigma_slope, chi2=slope.chi2, dof=slope.dof,
                      method="weighted-lsq-through-origin").to_json()
        )
    if args.format == "json":
        text = json.dumps({"fits": results, "slope": summary}, indent=2) + "\n"
    else:
        rows = [
            {"dataset": r["dataset"], "tau_s": f"{r['tau_s']:.6f}", "sigma_tau_s": f"{r['sigma_tau_s']:.6f}",
             "gamma_sd_Hz": "" if r["gamma_sd_hz"] is None else f"{r['gamma_sd_hz']:.6f}",
             "sigma_Hz": "" if r["sigma_hz"] is None else f"{r['sigma_hz']:.6f}"}
            for r in results
        ]
        text = _format_rows(rows, args.format)
        if summary is not None:
            text += (f"slope_Hz_per_W_m2={summary['slope_si']:.6e} "
                     f"sigma_slope_Hz_per_W_m2={summary['sigma_slope_si']:.6e}\n")
    _emit(text, args)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .reproduce import run_all

    checks = run_all(_load_species(args))
    if args.format == "json":
        text = json.dumps([asdict(c) for c in checks], indent=2) + "\n"
    elif args.format == "csv":
        text = _format_rows([{k: v for k, v in asdict(c).items() if k != "seconds"} for c in checks], "csv")
    else:
        text = "\n".join(c.line() for c in checks) + "\n"
        n_fail = sum(not c.passed for c in checks)
        text += f"{len(checks) - n_fail}/{len(checks)} checks passed\n"
    _emit(text, args)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_REGRESSION


COMMANDS = {
    "rates": cmd_rates,
    "gate-errors": cmd_gate_errors,
    "scan": cmd_scan,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "reproduce": cmd_reproduce,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"caraman: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DOMAIN_ERRORS as exc:
        print(f"caraman: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
