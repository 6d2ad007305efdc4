"""Command-line runner: ``szilard-battery VERB [options]``.

Verbs write comma-separated tables plus ``manifest.json`` into ``--out``.
Tables start with a ``# schema_version`` comment line followed by a header
row; numbers are printed with 12 significant digits so reruns with the same
configuration and seed are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .channels import (
    DetectorModel,
    calibrate_recoil,
    crossing_times,
    recoil_kick,
    sweep_transfer_probabilities,
)
from .config import RunConfig, load_config, parse_config
from .engine import (
    estimate_m1,
    estimate_m2,
    jarzynski_check,
    run_engine,
    verify_m2,
)
from .errors import CalibrationOutOfRange, ConfigError, DomainError, LeakageExceeded
from .fock import lump
from .metrics import efficiencies, ideal_efficiencies, ideal_ergotropies
from .seeding import SCHEME, float_key, stream

SCHEMA_VERSION = 1


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def table_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue().encode()


class Output:
    """Collects files in memory and writes them all at the end."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.files = {}

    def table(self, name, header, rows):
        self.files[name] = table_bytes(header, rows)

    def commit(self, command, cfg: RunConfig, started: float):
        self.dir.mkdir(parents=True, exist_ok=True)
        for name in sorted(self.files):
            (self.dir / name).write_bytes(self.files[name])
        manifest = {
            "command": command,
            "version": __version__,
            "seed": cfg.run.seed,
            "seed_scheme": SCHEME,
            "config": cfg.as_dict(),
            "wall_time_s": round(time.perf_counter() - started, 3),
            "files": [
                {"name": n, "sha256": hashlib.sha256(self.files[n]).hexdigest()} for n in sorted(self.files)
            ],
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return sorted(self.files)


def _pmap(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- verbs -------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Output):
    n_max = cfg.space.n_max
    prob_cols = [f"p{i}" for i in range(n_max + 1)]
    header = ["backend", "p_up", "cycle", "mean_phonon", *prob_cols, "leakage"]
    jobs = [(b, p) for b in cfg.run.backends for p in cfg.run.p_up]
    runs = _pmap(lambda j: run_engine(cfg.engine_config(j[1], j[0], threads=1)), jobs, cfg.run.threads)
    readout, state = [], []
    for (backend, p), run in zip(jobs, runs):
        for st in [run.initial, *run.per_cycle]:
            for rows, dist in ((readout, st.readout), (state, st.distribution)):
                mean = float(np.arange(dist.size) @ dist)
                rows.append([backend, p, st.cycle, mean, *lump(dist, n_max), st.leakage])
    out.table("simulate.csv", header, readout)
    out.table("simulate_state.csv", header, state)


def cmd_figure4(cfg: RunConfig, out: Output):
    n_max = cfg.space.n_max
    cycles = cfg.run.cycles
    erg_rows = []
    for p in cfg.run.p_up:
        for k, e in enumerate(ideal_ergotropies(cycles, p), start=1):
            erg_rows.append(["ideal", p, k, e])
        run = run_engine(cfg.engine_config(p, cfg.figure4.backend))
        for st in run.per_cycle:
            erg_rows.append([cfg.figure4.backend, p, st.cycle, st.ergotropy(n_max)])
    out.table("ergotropy.csv", ["source", "p_up", "cycle", "ergotropy"], erg_rows)

    def one(p):
        ideal = ideal_efficiencies(p, cycles)
        run = run_engine(cfg.engine_config(p, cfg.figure4.backend, threads=1))
        sim = efficiencies(p, run.mean_work_per_cycle, run.ergotropies(n_max))
        return [
            p, ideal.k_B_T, ideal.mutual_info, ideal.info_work_eff, ideal.charging_eff,
            sim.mean_work_per_cycle, sim.mean_ergotropy_per_cycle, sim.info_work_eff, sim.charging_eff,
        ]

    rows = _pmap(one, cfg.figure4.p_grid, cfg.run.threads)
    out.table(
        "efficiency.csv",
        ["p_up", "k_B_T", "mutual_info", "ideal_info_work_eff", "ideal_charging_eff",
         "sim_mean_work", "sim_ergotropy_per_cycle", "sim_info_work_eff", "sim_charging_eff"],
        rows,
    )


def _matrix_rows(mat, n_max):
    mat = np.column_stack([lump(mat[:, i], n_max) for i in range(n_max + 1)])
    rows = []
    for r in range(n_max + 1):
        rows.append([r, *mat[r, : n_max + 1]])
    return rows


def cmd_calibrate(cfg: RunConfig, out: Output):
    c = cfg.calibrate
    n_pairs = cfg.detector.n_photon_pairs
    if n_pairs:
        geom = calibrate_recoil(c.target, n_pairs, cfg.geometry, c.shots, stream(cfg.run.seed, "calibrate", "fx"))
    else:
        # nothing scatters, so there is no recoil to calibrate
        geom = cfg.geometry
    check = stream(cfg.run.seed, "calibrate", "check")
    mc = float(np.mean(np.abs(recoil_kick(n_pairs, geom, check, size=c.shots)) ** 2)) if n_pairs else 0.0
    out.table(
        "geometry.csv",
        ["eta", "f_x", "emission_model", "n_photon_pairs", "target", "mc_mean_kick", "shots"],
        [[geom.eta, geom.f_x, geom.emission_model, n_pairs, c.target, mc, c.shots]],
    )
    ecfg = replace(cfg.engine_config(0.5, "trajectory", cycles=0), geometry=geom, recoil_samples=c.m2_samples)
    n_max = cfg.space.n_max
    m1 = estimate_m1(ecfg, c.m1_shots, stream(cfg.run.seed, "calibrate", "m1"))
    m2 = estimate_m2(ecfg, c.m2_samples, stream(cfg.run.seed, "calibrate", "m2"))
    cols = ["result"] + [f"n{i}" for i in range(n_max + 1)]
    out.table("m1.csv", cols, _matrix_rows(m1.matrix, n_max))
    out.table("m2.csv", cols, _matrix_rows(m2.matrix, n_max))
    tvd = verify_m2(ecfg, m2, c.verify_shots, stream(cfg.run.seed, "calibrate", "verify"))
    out.table("m2_verify.csv", ["i", "tvd"], [[i, v] for i, v in enumerate(tvd)])
    q = sweep_transfer_probabilities(cfg.sweep, n_max + 1)
    t = crossing_times(cfg.sweep, n_max + 1)
    out.table("sweep.csv", ["n", "transfer_probability", "crossing_time_us"],
              [[n, q[n], t[n] * 1e6] for n in range(n_max + 1)])


def _jarzynski_engine(cfg: RunConfig, p, backend):
    mode = cfg.jarzynski.mode
    ecfg = cfg.engine_config(p, backend, cycles=1, shots=cfg.jarzynski.shots)
    if mode in ("ideal", "sweep"):
        ecfg = replace(ecfg, detector=DetectorModel.perfect(), heating_per_cycle=0.0, initial_nbar=0.0,
                       use_sweep=mode == "sweep")
    return ecfg


def cmd_jarzynski(cfg: RunConfig, out: Output):
    shots = cfg.jarzynski.shots
    jobs = [(b, p) for b in cfg.run.backends for p in cfg.jarzynski.p_grid]

    def one(job):
        backend, p = job
        rng = stream(cfg.run.seed, "jarzynski", backend, float_key(p))
        chk = jarzynski_check(_jarzynski_engine(cfg, p, backend), shots, rng)
        return [p, backend, cfg.jarzynski.mode, chk.lhs, chk.lhs_stderr, chk.gamma, chk.gamma_stderr,
                2 * (1 - p), chk.agree]

    rows = _pmap(one, jobs, cfg.run.threads)
    out.table("jarzynski.csv",
              ["p_up", "backend", "mode", "lhs", "lhs_stderr", "gamma", "gamma_stderr", "ideal", "agree"],
              rows)


def cmd_emit_plots(data_dir, out_dir):
    from .plots import render_all

    files = render_all(Path(data_dir))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in sorted(files):
        (out_dir / name).write_bytes(files[name])
    return sorted(files)


VERBS = {
    "simulate": cmd_simulate,
    "figure4": cmd_figure4,
    "calibrate": cmd_calibrate,
    "jarzynski": cmd_jarzynski,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="szilard-battery", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sp = sub.add_parser(verb)
        sp.add_argument("--config", type=Path, help="TOML configuration (defaults if omitted)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--backend", help="restrict to one backend")
        sp.add_argument("--shots", type=int)
        sp.add_argument("--threads", type=int)
    sp = sub.add_parser("emit-plots")
    sp.add_argument("data_dir", type=Path)
    sp.add_argument("--out", type=Path, help="chart directory (default DATA_DIR/plots)")
    return ap


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    run = cfg.run
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        run = replace(run, seed=args.seed)
    if args.backend is not None:
        run = replace(run, backends=(args.backend,))
        cfg = replace(cfg, figure4=replace(cfg.figure4, backend=args.backend))
    if args.shots is not None:
        run = replace(run, shots=args.shots)
        cfg = replace(cfg, jarzynski=replace(cfg.jarzynski, shots=args.shots))
    if args.threads is not None:
        run = replace(run, threads=args.threads)
    return parse_config(replace(cfg, run=run).as_dict(), "command line")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "emit-plots":
            names = cmd_emit_plots(args.data_dir, args.out or args.data_dir / "plots")
        else:
            started = time.perf_counter()
            cfg = load_config(args.config) if args.config else RunConfig()
            cfg = _apply_flags(cfg, args)
            out = Output(args.out)
            VERBS[args.verb](cfg, out)
            names = out.commit(args.verb, cfg, started) + ["manifest.json"]
    except (ConfigError, CalibrationOutOfRange, DomainError, LeakageExceeded, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for n in names:
        print(n)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
