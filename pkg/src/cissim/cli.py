"""Command line interface: ``cissim run|validate|transitions|plot``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure. Failures
print a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, bundled_configs, load_config
from .experiments import (
    PowderGrid,
    nmr_absorption,
    oriented_parallel,
    transfer_sequence,
    trepr_map,
    trepr_spectrum,
    broaden,
)
from .results import SpectrumResult
from .spinsys import build_static_hamiltonian, spin_operator, transition_table
from .states import assemble_initial, polarization

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _write(spec: SpectrumResult, out: Path, name: str, plots: bool, written: list) -> None:
    csv, js = out / f"{name}.csv", out / f"{name}.json"
    spec.to_csv(csv)
    spec.to_json(js)
    written += [csv, js]
    if plots:
        from .plotting import plot_spectrum

        written.append(plot_spectrum(spec, out / f"{name}.svg", title=name))


def run(
    config: RunConfig,
    out_dir=None,
    threads: int | None = None,
    orientations: int | None = None,
    plots: bool | None = None,
) -> list[Path]:
    """Execute the configured experiment and write its artifacts.

    Returns the written paths. Command-line overrides take precedence over
    the configuration file.
    """
    out = Path(out_dir or config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    n_jobs = threads or config.threads
    plots = config.output.plots if plots is None else plots
    stem = config.output.stem
    provenance = {"provenance": f"cissim {__version__} config:{config.digest()[:12]}"}

    system = config.build_system()
    rp = config.build_rp_state()
    sensor = config.build_sensor()
    exp = config.experiment
    written: list[Path] = []

    def trepr_outputs(plan, tcfg, rho0=None, rp_=rp, name=stem):
        if orientations is not None and isinstance(plan.orientation, PowderGrid):
            plan = replace(plan, orientation=PowderGrid(orientations, plan.orientation.n_gamma))
        if "map" in tcfg.outputs:
            m = broaden(trepr_map(system, rp_, sensor, plan, n_jobs=n_jobs, rho0=rho0), plan.fwhm_mT)
            m.metadata.update(provenance)
            _write(m, out, f"{name}_map", plots, written)
        if "spectrum" in tcfg.outputs and plan.window_ns is not None:
            s = trepr_spectrum(system, rp_, sensor, plan, n_jobs=n_jobs, rho0=rho0)
            s.metadata.update(provenance)
            _write(s, out, f"{name}_spectrum", plots, written)

    if exp.kind == "trepr":
        trepr_outputs(config.build_trepr_plan(), exp)
    elif exp.kind == "nmr":
        spec = nmr_absorption(system, rp, sensor, config.build_nmr_plan())
        spec.metadata.update(provenance)
        _write(spec, out, f"{stem}_nmr", plots, written)
    else:
        oriented = oriented_parallel(system)
        rho0 = assemble_initial(rp, sensor, oriented)
        rho1 = transfer_sequence(oriented, rho0, config.build_program())
        summary = {
            "before": {c: polarization(rho0, oriented, c, [0, 0, 1]) for c in oriented.electron_labels},
            "after": {c: polarization(rho1, oriented, c, [0, 0, 1]) for c in oriented.electron_labels},
            "purity_before": float(np.trace(rho0 @ rho0).real),
            "purity_after": float(np.trace(rho1 @ rho1).real),
            **provenance,
        }
        path = out / f"{stem}_transfer.json"
        path.write_text(json.dumps(summary, indent=1, sort_keys=True))
        written.append(path)
        if exp.readout is not None:
            trepr_outputs(config.build_trepr_plan(exp.readout), exp.readout, rho0=rho1, rp_=None)
    return written


def _transitions(config: RunConfig, field_mT: float | None, threshold: float) -> list[dict]:
    system = oriented_parallel(config.build_system())
    exp = config.experiment
    if field_mT is not None:
        B = np.array([0.0, 0.0, field_mT * 1e-3])
    elif exp.kind == "trepr":
        B = np.array([0.0, 0.0, 0.5e-3 * (exp.b_start_mT + exp.b_stop_mT)])
    elif exp.kind == "nmr":
        B = np.asarray(exp.b0_T, dtype=float)
    else:
        B = np.array([0.0, 0.0, exp.b_T])
    H = build_static_hamiltonian(system, B)
    observables = [sum(spin_operator(system, c, "x") for c in system.electron_labels)]
    names = ["sum S_x"]
    if system.nuclei:
        observables.append(sum(spin_operator(system, n.label, "x") for n in system.nuclei))
        names.append("sum I_x")
    rows = transition_table(H, observables, threshold)
    return [
        {"i": r.i + 1, "j": r.j + 1, "gap_MHz": r.gap_MHz, "weight": r.weight, "observable": names[r.observable],
         "B_T": B.tolist()}
        for r in rows
    ]


def _error(kind: str, exc: Exception, code: int) -> int:
    print(json.dumps({"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cissim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cissim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the configured experiment")
    r.add_argument("--config", required=True, help="config path or bundled config name")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.add_argument("--threads", type=int, help="worker processes")
    r.add_argument("--orientations", type=int, help="powder grid size override")
    r.add_argument("--no-plots", action="store_true", help="skip SVG output")

    v = sub.add_parser("validate", help="validate a config and echo it with defaults applied")
    v.add_argument("--config", required=True)

    t = sub.add_parser("transitions", help="dump the EPR/NMR transition table")
    t.add_argument("--config", required=True)
    t.add_argument("--field-mT", type=float, help="field along the chiral axis (default: plan center)")
    t.add_argument("--threshold", type=float, default=1e-6)

    pl = sub.add_parser("plot", help="render result CSV files as SVG")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("--out", help="output directory (default: next to each CSV)")

    sub.add_parser("list", help="list bundled configs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            print("\n".join(bundled_configs()))
            return EXIT_OK
        if args.command == "plot":
            from .plotting import plot_spectrum

            for c in args.csv:
                c = Path(c)
                target = Path(args.out) / (c.stem + ".svg") if args.out else c.with_suffix(".svg")
                target.parent.mkdir(parents=True, exist_ok=True)
                print(plot_spectrum(SpectrumResult.from_csv(c), target, title=c.stem))
            return EXIT_OK
        config = load_config(args.config)
        if args.command == "validate":
            print(config.dumps())
            return EXIT_OK
        if args.command == "transitions":
            for row in _transitions(config, args.field_mT, args.threshold):
                print(json.dumps(row))
            return EXIT_OK
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        for path in run(config, args.out, args.threads, args.orientations, False if args.no_plots else None):
            print(path)
        return EXIT_OK
    except (ConfigError, FileNotFoundError) as exc:
        return _error("config", exc, EXIT_CONFIG)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _error("numerical", exc, EXIT_NUMERICAL)
    except ValueError as exc:
        return _error("config", exc, EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
