"""Command-line front end: tomography, simulation, certification and
reproduction runs with JSON/CSV persistence.

Conventions
-----------
* CSV files carry a header row, UTF-8, LF endings; complex quantities are
  stored as paired ``*_re``/``*_im`` columns.
* Configs are JSON objects whose keys mirror ``CircuitConfig`` fields.
* Every command writes a ``manifest.json`` with the exact configuration
  and seed needed to reproduce its outputs bit-identically.
* The environment variable ``QIL_LOG`` selects the log level.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from importlib import metadata, resources

import numpy as np

from . import certify, linops, simulate, tomography

log = logging.getLogger("mcfkit")

FIXTURES = {
    "measured-4x4": ("u4_tilde", "u4_hat"),
    "measured-7x7": ("u7_tilde", "u7_hat"),
}
# Calibrated so that propagated 3-sigma fidelity errors match the
# reported +-0.003 (model) and +-0.001 (raw vs unitary) uncertainties.
FIXTURE_INTENSITY_RELERR = 0.12
FIXTURE_PHASE_ERR = 0.08

REPRODUCE_TARGETS = ("fidelity-4x4", "fidelity-7x7", "ideal-entropy", "entropy-band")


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _configure_logging():
    level = os.environ.get("QIL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def atomic_write(path, text):
    tmp = "%s.tmp.%d" % (path, os.getpid())
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    atomic_write(path, "\n".join(lines) + "\n")


def load_fixture_matrix(name):
    path = resources.files("mcfkit.fixtures").joinpath(name + ".json")
    obj = json.loads(path.read_text(encoding="utf-8"))
    return np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)


class RunManifest:
    """Reproducibility record written next to every command's outputs."""

    def __init__(self, command, config, seed):
        self.command = command
        self.config = {k: v for k, v in config.items() if k != "func"}
        self.seed = seed
        self.inputs = []
        self.outputs = []
        self.started = time.time()

    def record_input(self, path):
        self.inputs.append(str(path))

    def record_output(self, path):
        self.outputs.append(str(path))

    def write(self, out_dir):
        path = os.path.join(out_dir, "manifest.json")
        write_json(path, {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": _version(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_seconds": round(time.time() - self.started, 3),
        })
        return path


# --- CSV parsing -----------------------------------------------------------

class CsvFormatError(ValueError):
    def __init__(self, path, line, message):
        super().__init__("%s:%d: %s" % (path, line, message))


def _read_rows(path, required):
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise CsvFormatError(path, 1, "missing header row")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise CsvFormatError(path, 1, "missing columns: %s" % ", ".join(missing))
        rows = []
        for i, row in enumerate(reader, start=2):
            try:
                rows.append({c: float(row[c]) for c in required})
            except (TypeError, ValueError) as exc:
                raise CsvFormatError(path, i, "bad numeric value (%s)" % exc) from exc
    if not rows:
        raise CsvFormatError(path, 2, "no data rows")
    return rows


def read_intensity_csv(path):
    """Columns: output_port, input_mode, intensity, error."""
    rows = _read_rows(path, ["output_port", "input_mode", "intensity", "error"])
    n = int(max(max(r["output_port"], r["input_mode"]) for r in rows)) + 1
    values = np.full((n, n), np.nan)
    errors = np.zeros((n, n))
    for r in rows:
        j, k = int(r["output_port"]), int(r["input_mode"])
        values[j, k] = r["intensity"]
        errors[j, k] = r["error"]
    if np.isnan(values).any():
        raise CsvFormatError(path, 2, "incomplete intensity table")
    return tomography.IntensityTable(values, errors)


def read_scan_csv(path):
    """Columns: input_mode, output_port, phase, probability, error."""
    rows = _read_rows(path, ["input_mode", "output_port", "phase",
                             "probability", "error"])
    grouped = {}
    for r in rows:
        key = (int(r["output_port"]), int(r["input_mode"]))
        grouped.setdefault(key, []).append(
            (r["phase"], r["probability"], r["error"])
        )
    return {
        (k, j): tomography.PhaseScan(j, k, np.array(samples))
        for (k, j), samples in sorted(grouped.items())
    }


def read_frequency_csv(path):
    """Columns: input (x), outcome (a), count; plus rounds per input."""
    rows = _read_rows(path, ["input", "outcome", "count", "rounds"])
    nx = int(max(r["input"] for r in rows)) + 1
    counts = np.zeros((nx, certify.N_OUTCOMES))
    rounds = np.zeros(nx)
    for r in rows:
        counts[int(r["input"]), int(r["outcome"])] += r["count"]
        rounds[int(r["input"])] = r["rounds"]
    return certify.FrequencyTable.from_counts(counts, rounds=rounds)


def write_frequency_csv(path, table: certify.FrequencyTable, counts=None):
    rows = []
    for x in range(table.frequencies.shape[0]):
        for a in range(table.frequencies.shape[1]):
            c = (counts[x, a] if counts is not None
                 else table.frequencies[x, a] * table.rounds[x])
            rows.append((x, a, repr(float(c)), repr(float(table.rounds[x]))))
    write_csv(path, ["input", "outcome", "count", "rounds"], rows)


def _matrix_json(M):
    M = np.asarray(M, dtype=complex)
    return {"re": M.real.tolist(), "im": M.imag.tolist()}


def _matrix_from_json(obj):
    return np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)


# --- commands ---------------------------------------------------------------

def _tomography_from_matrix(raw, reference, mc_samples, seed):
    """Project a raw transfer-matrix estimate and propagate errors."""
    unitary = tomography.project_to_unitary(raw, seed=seed)
    out = {
        "experimental": _matrix_json(raw),
        "unitary": _matrix_json(unitary),
        "fidelity_exp_unitary": linops.matrix_fidelity(raw, unitary),
    }
    if reference is not None:
        out["fidelity_model"] = linops.matrix_fidelity(unitary, reference)
    if mc_samples:
        table = tomography.IntensityTable(
            np.abs(raw) ** 2, FIXTURE_INTENSITY_RELERR * np.abs(raw) ** 2
        )
        mc = tomography.monte_carlo_errors(
            table,
            np.angle(raw),
            np.full(raw.shape, FIXTURE_PHASE_ERR),
            samples=mc_samples,
            reference=reference,
            seed=seed,
        )
        out["err3_exp_unitary"] = mc.err3_exp_unitary
        if reference is not None:
            out["err3_model"] = mc.err3_model
    return out


def cmd_tomography(args):
    out_dir = _prepare_out(args)
    if args.seed is None:
        args.seed = 7
    manifest = RunManifest("tomography", vars(args).copy(), args.seed)
    if args.fixture:
        if args.fixture not in FIXTURES:
            raise SystemExit("unknown fixture %r; choose from %s"
                             % (args.fixture, sorted(FIXTURES)))
        raw = load_fixture_matrix(FIXTURES[args.fixture][0])
        reference = linops.symmetric_bs_4(0.0) if raw.shape[0] == 4 else None
        result = _tomography_from_matrix(raw, reference, args.mc_samples, args.seed)
    else:
        if not (args.intensities and args.scans):
            raise SystemExit("provide --fixture or both --intensities and --scans")
        table = read_intensity_csv(args.intensities)
        scans = read_scan_csv(args.scans)
        manifest.record_input(args.intensities)
        manifest.record_input(args.scans)
        rec = tomography.reconstruct(table, scans)
        result = {
            "experimental": _matrix_json(rec.experimental),
            "unitary": _matrix_json(rec.unitary),
            "fidelity_exp_unitary": rec.fidelity_exp_unitary,
        }
        if table.values.shape[0] == 4:
            result["fidelity_model"] = linops.matrix_fidelity(
                rec.unitary, linops.symmetric_bs_4(0.0)
            )
        if args.mc_samples:
            mc = tomography.monte_carlo_errors(
                table,
                np.angle(rec.experimental),
                np.full(table.values.shape, FIXTURE_PHASE_ERR),
                samples=args.mc_samples,
                reference=(linops.symmetric_bs_4(0.0)
                           if table.values.shape[0] == 4 else None),
                seed=args.seed,
            )
            result["err3_exp_unitary"] = mc.err3_exp_unitary
            if mc.err3_model is not None:
                result["err3_model"] = mc.err3_model
    path = os.path.join(out_dir, "tomography.json")
    write_json(path, result)
    manifest.record_output(path)
    manifest.write(out_dir)
    print("fidelity raw vs unitary: %.4f" % result["fidelity_exp_unitary"])
    if "fidelity_model" in result:
        line = "fidelity vs ideal 4x4:   %.4f" % result["fidelity_model"]
        if "err3_model" in result:
            line += " +- %.4f (3 sigma)" % result["err3_model"]
        print(line)
    return 0


def _load_config(args):
    fields = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            fields = json.load(f)
        known = {f.name for f in dataclasses.fields(simulate.CircuitConfig)}
        bad = sorted(set(fields) - known)
        if bad:
            raise SystemExit("unknown config fields: %s" % ", ".join(bad))
    if args.seed is not None:
        fields["seed"] = args.seed
    if getattr(args, "mu", None) is not None:
        fields["mu"] = args.mu
    try:
        config = simulate.CircuitConfig(**fields)
    except TypeError as exc:
        raise SystemExit("invalid config: %s" % exc)
    if config.mu <= 0:
        raise SystemExit("invalid config: mu must be positive")
    for name in ("mbs_transmission", "demux_transmission",
                 "modulator_transmission", "prep_transmission",
                 "detector_efficiency"):
        value = getattr(config, name)
        if not 0 < value <= 1:
            raise SystemExit("invalid config: %s must lie in (0, 1]" % name)
    return config


def _runlog_json(logrec: simulate.RunLog):
    return {
        "config": dataclasses.asdict(logrec.config),
        "zones": [list(z) for z in logrec.zones],
        "realign_events": logrec.realign_events,
        "accepted_rounds": logrec.accepted_rounds,
        "discarded_rounds": logrec.discarded_rounds,
        "blocks": [
            {
                "index": b.index,
                "inputs": b.inputs.tolist(),
                "tallies": b.tallies.tolist(),
                "p_bar": b.p_bar,
                "accepted": b.accepted,
            }
            for b in logrec.blocks
        ],
    }


def runlog_from_json(obj):
    config = simulate.CircuitConfig(**obj["config"])
    blocks = [
        simulate.BlockRecord(
            index=b["index"],
            inputs=np.array(b["inputs"]),
            tallies=np.array(b["tallies"]),
            p_bar=b["p_bar"],
            accepted=b["accepted"],
        )
        for b in obj["blocks"]
    ]
    return simulate.RunLog(
        config=config,
        blocks=blocks,
        realign_events=list(obj["realign_events"]),
        zones=[tuple(z) for z in obj["zones"]],
    )


def cmd_simulate(args):
    if args.duration <= 0:
        raise SystemExit("duration must be positive")
    out_dir = _prepare_out(args)
    config = _load_config(args)
    manifest = RunManifest("simulate", dataclasses.asdict(config), config.seed)
    logrec = simulate.run_protocol(config, args.duration)
    path = os.path.join(out_dir, "runlog.json")
    write_json(path, _runlog_json(logrec))
    manifest.record_output(path)
    for i, zone in enumerate(logrec.zones):
        zpath = os.path.join(out_dir, "zone%03d.csv" % i)
        write_frequency_csv(zpath, logrec.zone_frequency_table(zone))
        manifest.record_output(zpath)
    manifest.write(out_dir)
    accepted = len(logrec.accepted_blocks)
    print("blocks: %d accepted / %d total; zones: %d; realignments: %d"
          % (accepted, len(logrec.blocks), len(logrec.zones),
             len(logrec.realign_events)))
    if accepted:
        print("overall success probability: %.4f" % logrec.overall_p_bar())
    print("accepted rounds: %d" % logrec.accepted_rounds)
    return 0


def _certify_table(table, mu, epsilon, target, variant, duration=None,
                   clicked=None):
    ensemble = certify.build_input_states(mu, variant=variant)
    solution = certify.guessing_probability_finite(ensemble, table, epsilon, target)
    entropy = certify.min_entropy(solution.value)
    out = {
        "guessing_probability": solution.value,
        "min_entropy": entropy,
        "theoretical_upper_bound": certify.theoretical_upper_bound(
            table.frequencies, target
        ),
        "halfwidths": certify.chernoff_halfwidth(epsilon, table.rounds).tolist(),
        "duality_gap": solution.duality_gap,
        "residuals": solution.residuals,
    }
    if duration and clicked is not None:
        out["bits_per_second"] = entropy * clicked / duration
    return out


def cmd_certify(args):
    if not 0 < args.epsilon < 1:
        raise SystemExit("epsilon must lie in (0, 1)")
    if args.mu <= 0:
        raise SystemExit("mu must be positive")
    out_dir = _prepare_out(args)
    manifest = RunManifest("certify", vars(args).copy(), args.seed)
    result = {}
    if args.frequencies:
        manifest.record_input(args.frequencies)
        table = read_frequency_csv(args.frequencies)
        result["overall"] = _certify_table(
            table, args.mu, args.epsilon, args.target_input,
            args.two_photon_variant,
        )
    elif args.runlog:
        manifest.record_input(args.runlog)
        with open(args.runlog, encoding="utf-8") as f:
            logrec = runlog_from_json(json.load(f))
        duration = len(logrec.blocks) * logrec.config.block_seconds
        overall = logrec.overall_frequency_table()
        clicked = float(
            sum(b.tallies[:, : certify.N_OUTCOMES].sum()
                for b in logrec.accepted_blocks)
        )
        result["overall"] = _certify_table(
            overall, args.mu, args.epsilon, args.target_input,
            args.two_photon_variant, duration=duration, clicked=clicked,
        )
        result["zones"] = [
            _certify_table(
                logrec.zone_frequency_table(zone), args.mu, args.epsilon,
                args.target_input, args.two_photon_variant,
            )
            for zone in logrec.zones
        ]
    else:
        raise SystemExit("provide --frequencies or --runlog")
    path = os.path.join(out_dir, "certification.json")
    write_json(path, result)
    manifest.record_output(path)
    manifest.write(out_dir)
    print("P_g = %.6f" % result["overall"]["guessing_probability"])
    print("H_min = %.4f bits/round" % result["overall"]["min_entropy"])
    print("theoretical upper bound = %.4f"
          % result["overall"]["theoretical_upper_bound"])
    if "bits_per_second" in result["overall"]:
        print("throughput = %.0f bits/s" % result["overall"]["bits_per_second"])
    return 0


def _report(name, obtained, expected, tol):
    ok = abs(obtained - expected) <= tol
    print("%s: %s expected %.4f +- %.4f, obtained %.6f"
          % (name, "PASS" if ok else "FAIL", expected, tol, obtained))
    return ok


def cmd_reproduce(args):
    if args.target not in REPRODUCE_TARGETS:
        raise SystemExit("unknown target %r; valid targets: %s"
                         % (args.target, ", ".join(REPRODUCE_TARGETS)))
    ok = True
    if args.target == "fidelity-4x4":
        raw = load_fixture_matrix("u4_tilde")
        unitary = tomography.project_to_unitary(raw)
        ok &= _report("F(raw, unitary)",
                      linops.matrix_fidelity(raw, unitary), 0.999, 0.001)
        ok &= _report("F(unitary, ideal)",
                      linops.matrix_fidelity(unitary, linops.symmetric_bs_4(0.0)),
                      0.995, 0.003)
    elif args.target == "fidelity-7x7":
        raw = load_fixture_matrix("u7_tilde")
        unitary = tomography.project_to_unitary(raw)
        ok &= _report("F(raw, unitary)",
                      linops.matrix_fidelity(raw, unitary), 0.992, 0.008)
    elif args.target == "ideal-entropy":
        solution = certify.guessing_probability_ideal()
        ok &= _report("H_min(ideal)", certify.min_entropy(solution.value),
                      2.000, 0.001)
    else:  # entropy-band
        config = simulate.desk_scale_config(seed=args.seed if args.seed is not None
                                            else 13)
        logrec = simulate.run_protocol(config, args.duration or 20.0)
        table = logrec.overall_frequency_table()
        ensemble = certify.build_input_states(config.mu,
                                              variant=args.two_photon_variant)
        solution = certify.guessing_probability_finite(
            ensemble, table, args.epsilon, 4
        )
        ok &= _report("overall success probability",
                      logrec.overall_p_bar(), 0.9946, 0.0020)
        ok &= _report("certified H_min",
                      certify.min_entropy(solution.value), 1.20, 0.10)
        ok &= _report("theoretical upper bound",
                      certify.theoretical_upper_bound(table.frequencies, 4),
                      2.03, 0.05)
    return 0 if ok else 1


def _prepare_out(args):
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mcfkit",
        description="Simulation, tomography and randomness certification "
                    "for a programmable 4-arm fibre interferometer.",
    )
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: cwd)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", help="JSON config file")

    p = sub.add_parser("tomography", parents=[common],
                       help="reconstruct a transfer matrix and its nearest unitary")
    p.add_argument("--fixture", help="bundled data set: %s" % ", ".join(FIXTURES))
    p.add_argument("--intensities", help="intensity CSV")
    p.add_argument("--scans", help="phase-scan CSV")
    p.add_argument("--mc-samples", type=int, default=0,
                   help="Monte Carlo draws for 3-sigma fidelity errors")
    p.set_defaults(func=cmd_tomography)

    p = sub.add_parser("simulate", parents=[common],
                       help="run the randomness protocol simulation")
    p.add_argument("--duration", type=float, required=True, help="seconds")
    p.add_argument("--mu", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("certify", parents=[common],
                       help="certify min-entropy from observed frequencies")
    p.add_argument("--frequencies", help="frequency CSV")
    p.add_argument("--runlog", help="runlog.json from a simulate run")
    p.add_argument("--mu", type=float, default=0.4)
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument("--target-input", type=int, default=4)
    p.add_argument("--two-photon-variant", choices=("reported", "bosonic"),
                   default="reported")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("reproduce", parents=[common],
                       help="re-run a headline result and report pass/fail")
    p.add_argument("target", help="one of: %s" % ", ".join(REPRODUCE_TARGETS))
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument("--two-photon-variant", choices=("reported", "bosonic"),
                   default="reported")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None):
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    log.info("running %s", args.command)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
