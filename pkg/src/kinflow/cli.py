"""``kinflow`` command line: simulate, invariants, stability, converge.

Exit codes: 0 ok, 1 certificate failure, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .density import PhaseGrid4D, histogram_density
from .diagnostics import BoundCertificates, certify_all, record
from .flow import advance, dobrushin_pair_run, dobrushin_rate, sample_initial
from .snapshot import save as save_snapshot
from .transport import SizeLimitError, convergence_study

log = logging.getLogger("kinflow")

EXIT_OK, EXIT_CERT, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
CSV_HEADER = ["t", "mass", "kinetic", "m2", "sup_neg_logJ", "sup_density"]
MANIFEST_VERSION = 1


class RunDirExists(OSError):
    pass


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _run_dir(cfg: RunConfig, command: str, out: str | None, force: bool) -> Path:
    root = Path(out or cfg["output.dir"])
    path = root / f"{command}-{cfg.digest()}-seed{cfg['run.seed']}"
    if path.exists():
        if not force:
            raise RunDirExists(f"run directory {path} exists; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def derived_constants(cfg: RunConfig, ensemble=None) -> dict:
    """Kernel bounds and certificate constants for a config (and its sample)."""
    cf, md, dens = cfg.cutoff_force(), cfg.drive(), cfg.density()
    m = cf.model
    out = {"f_inf_bound": m.f_inf_bound, "grad_v_bound": m.grad_v_bound,
           "lipschitz_constant": m.lipschitz_constant, "sup_lipschitz": cf.sup_lipschitz,
           "dt_max": cf.dt_max, "sup_g": md.sup_g, "lipschitz_g": md.lipschitz_g,
           "L_K": dobrushin_rate(cf, md, dens.mass), "f0_sup": dens.sup,
           "E0_analytic": dens.kinetic_energy, "m2_0_analytic": dens.second_moment}
    if ensemble is not None:
        certs = certificates_for(cfg, ensemble)
        out.update(A=certs.A, E_cap=certs.E_cap, C_max=certs.C_max, E0=certs.E0,
                   m2_0=certs.m2_0)
    return out


def certificates_for(cfg: RunConfig, ensemble, E_cap=None) -> BoundCertificates:
    # initial functionals of the sampled ensemble, i.e. of the empirical f0^N
    r0 = record(ensemble)
    return BoundCertificates.derive(cfg.cutoff_force(), cfg.drive(), ensemble.mass, r0.kinetic,
                                    r0.second_moment, cfg.density().sup, E_cap=E_cap)


def _recorder(cfg: RunConfig):
    if not cfg["grid.track_sup_density"]:
        return record

    def rec(ens):
        grid = PhaseGrid4D.covering(ens.z, cfg["grid.bins"], cfg["grid.inflate"])
        return record(ens, histogram_density(ens, grid).sup())
    return rec


def run_trajectory(cfg: RunConfig, run_dir: Path | None = None, csv_file=None, ens0=None):
    """Sample, integrate and stream diagnostics; returns (initial, final, records)."""
    cf, md = cfg.cutoff_force(), cfg.drive()
    if ens0 is None:
        ens0 = sample_initial(cfg.density(), cfg["run.n_particles"], cfg["run.seed"])
    t_final = cfg["run.t_final"]
    writer = None
    if csv_file is not None:
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(CSV_HEADER)

    def observe(ens, rec):
        if writer is not None:
            writer.writerow([_fmt(a) for a in rec.row()])

    stops = sorted({s for s in cfg["run.snapshot_times"] if 0 <= s <= t_final} | {t_final})
    recorder = _recorder(cfg)
    ens, records = ens0, []
    for k, stop in enumerate(stops):
        if k == 0:
            ens, recs = advance(ens, cf, md, stop, cfg["run.dt"], observers=[observe],
                                stride=cfg["run.record_stride"], recorder=recorder,
                                canonical_order=cfg["run.canonical_order"])
            if not recs:  # t_final == 0 or first snapshot at t = 0
                rec = recorder(ens)
                observe(ens, rec)
                recs = [rec]
        else:
            ens, recs = advance(ens, cf, md, stop, cfg["run.dt"], observers=[observe],
                                stride=cfg["run.record_stride"], include_initial=False,
                                recorder=recorder, canonical_order=cfg["run.canonical_order"])
        records.extend(recs)
        if run_dir is not None and stop in cfg["run.snapshot_times"]:
            save_snapshot(ens, run_dir / f"snapshot_t{stop:.6g}.kflo")
    return ens0, ens, records


def _manifest(cfg, command, constants, timings) -> str:
    return json.dumps({"manifest_version": MANIFEST_VERSION, "artifact_version": __version__,
                       "command": command, "config": cfg.to_dict(), "config_hash": cfg.digest(),
                       "derived": constants, "timings": timings}, indent=2, sort_keys=True)


def _simulate_like(cfg, command, args):
    run_dir = _run_dir(cfg, command, args.out, args.force)
    started = time.time()
    ens0 = sample_initial(cfg.density(), cfg["run.n_particles"], cfg["run.seed"])
    constants = derived_constants(cfg, ens0)
    _write_atomic(run_dir / "manifest.json", _manifest(cfg, command, constants, {}))
    with open(run_dir / "diagnostics.csv", "w", newline="") as fh:
        ens0, ens, records = run_trajectory(cfg, run_dir, fh, ens0)
    import numba
    timings = {"wall_seconds": time.time() - started, "threads": numba.get_num_threads()}
    _write_atomic(run_dir / "manifest.json", _manifest(cfg, command, constants, timings))
    return run_dir, ens0, ens, records


def cmd_simulate(cfg: RunConfig, args) -> int:
    run_dir, _, _, records = _simulate_like(cfg, "simulate", args)
    print(f"wrote {len(records)} records to {run_dir}")
    return EXIT_OK


def cmd_invariants(cfg: RunConfig, args) -> int:
    run_dir, ens0, _, records = _simulate_like(cfg, "invariants", args)
    certs = certificates_for(cfg, ens0, E_cap=args.debug_e_cap)
    results = certify_all(records, certs)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    summary = {"constants": certs.to_dict(), "passed": ok,
               "certificates": [{"name": r.name, "passed": r.passed, "worst": r.worst,
                                 "detail": r.detail} for r in results]}
    _write_atomic(run_dir / "certificates.json", json.dumps(summary, indent=2))
    return EXIT_OK if ok else EXIT_CERT


def cmd_stability(cfg: RunConfig, args) -> int:
    run_dir = _run_dir(cfg, "stability", args.out, args.force)
    dens_a = cfg.density()
    if args.config_b:
        dens_b = parse_config(args.config_b).density()
    else:
        dens_b = dens_a.shifted(cfg["stability.shift"])
    report = dobrushin_pair_run(dens_a, dens_b, cfg["run.n_particles"], cfg["run.seed"],
                                cfg.cutoff_force(), cfg.drive(), cfg["run.t_final"],
                                cfg["run.dt"], cfg["run.canonical_order"])
    d = report.to_dict()
    _write_atomic(run_dir / "stability.json", json.dumps(d, indent=2))
    print(f"W1(0)={d['w1_initial']:.6g}  W1(t)={d['w1_final']:.6g}  "
          f"bound={d['bound']:.6g}  L_K={d['L_K']:.6g}  {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_CERT


def cmd_converge(cfg: RunConfig, args) -> int:
    run_dir = _run_dir(cfg, "converge", args.out, args.force)
    table = convergence_study(cfg.density(), cfg["converge.sizes"], cfg["converge.seeds"],
                              cfg.cutoff_force, cfg.drive, cfg["run.t_final"], cfg["run.dt"],
                              cfg["converge.subsamples"])
    with open(run_dir / "converge.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_low", "n_high", "seed", "t", "w1"])
        for lo, hi, seed, t, w1 in table.rows:
            w.writerow([lo, hi, seed, _fmt(t), _fmt(w1)])
    summary = table.summary()
    _write_atomic(run_dir / "summary.json", json.dumps(summary, indent=2))
    for (lo, hi), m0, m1 in zip(zip(table.sizes[:-1], table.sizes[1:]),
                                summary["median_w1_t0"], summary["median_w1_final"]):
        print(f"{lo:>6} -> {hi:<6} median W1  t=0: {m0:.6g}  t={table.t_final:g}: {m1:.6g}")
    hits, total = summary["trend"]
    print(f"non-increasing comparisons: {hits}/{total}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "invariants": cmd_invariants,
            "stability": cmd_stability, "converge": cmd_converge}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"kinflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="TOML config file")
        s.add_argument("--seed", type=int, help="override run.seed")
        s.add_argument("--out", help="override output.dir")
        s.add_argument("--force", action="store_true", help="overwrite an existing run directory")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "invariants":
            s.add_argument("--debug-e-cap", type=float, default=None,
                           help="override E_cap (exercises the failure path)")
        if name == "stability":
            s.add_argument("--config-b", help="config whose density is the second ensemble")
    return p


def _set_threads():
    req = os.environ.get("KINFLOW_THREADS")
    if req:
        import numba
        numba.set_num_threads(max(1, min(int(req), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(Path(args.config))
        if args.seed is not None:
            cfg = cfg.with_overrides(**{"run__seed": args.seed})
        _set_threads()
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, SizeLimitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
