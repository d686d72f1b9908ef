"""Command-line entry point: ``gausselim {eliminate,simulate,compare,parity,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 numerical-validity failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from .eliminate import EliminationError, format_report
from .metrics import average_distance, current_histogram, postselection_sweep
from .moments import MomentError, save_matrix_csv
from .scenarios import (PARITY_NU, ConfigError, NumericalValidityError, RunReport, ScenarioConfig,
                        build, check_validity, config_hash, config_to_text, make_config,
                        parse_config, validate)
from .sde import StepSizeError, run_ensemble, write_trajectory_csv

log = logging.getLogger("gausselim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# CLI flag -> config field
_OVERRIDES = {
    "kappa": float, "chi": float, "g": float, "gamma": float, "omega": float, "nbar": float,
    "phi": float, "tmax": float, "dt": float, "ntraj": int, "seed": int, "workers": int,
    "record_every": int, "pairing": str, "out": str,
}
_FIELD = {"tmax": "T_m", "ntraj": "n_traj", "out": "out_dir"}
SWEEPABLE = ("phi", "nbar", "T_m", "g", "chi")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value configuration file")
    common.add_argument("--scenario", choices=("qnd", "parity", "jc", "twoosc"))
    for name, typ in _OVERRIDES.items():
        common.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
    common.add_argument("--cutoffs", type=_ints, help="Fock levels per mode, comma separated")
    common.add_argument("--models", type=lambda s: tuple(x.strip() for x in s.split(",")))
    common.add_argument("--nu", type=_floats, help="postselection thresholds")
    common.add_argument("--plot-script", action="store_true", help="also write a plotting script")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gausselim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("eliminate", parents=[common], help="print the effective SME and its certificate")
    s = sub.add_parser("simulate", parents=[common], help="run trajectories and write them out")
    s.add_argument("--save", type=int, default=1, help="number of trajectories written as CSV")
    sub.add_parser("compare", parents=[common], help="paired full/reduced ensembles, trace distances")
    pp = sub.add_parser("parity", parents=[common], help="current histograms and postselection")
    pp.add_argument("--hist-times", type=_floats, default=(5.0, 100.0))
    sw = sub.add_parser("sweep", parents=[common], help="time-averaged distance over a parameter grid")
    sw.add_argument("--param", required=True, choices=SWEEPABLE)
    sw.add_argument("--values", required=True, type=_floats)
    return p


def config_from_args(args: argparse.Namespace) -> ScenarioConfig:
    overrides = {}
    for name in _OVERRIDES:
        val = getattr(args, name, None)
        if val is not None:
            overrides[_FIELD.get(name, name)] = val
    for name in ("cutoffs", "models", "nu"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "plot_script", False):
        overrides["plot_script"] = True
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        cfg = parse_config(text)
        if args.scenario and args.scenario != cfg.scenario:
            raise ConfigError(f"--scenario {args.scenario} conflicts with the config file ({cfg.scenario})")
        cfg = replace(cfg, **overrides)
        validate(cfg)
        return cfg
    return make_config(args.scenario or "qnd", **overrides)


def run_dir(cfg: ScenarioConfig, command: str) -> Path:
    d = Path(cfg.out_dir) / f"{command}-{cfg.scenario}-{config_hash(cfg)}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{x:.17g}" if isinstance(x, (float, np.floating)) else x for x in row])


def _finish(report: RunReport, out: Path) -> RunReport:
    (out / "config.txt").write_text(config_to_text(report.config))
    report.files.append("config.txt")
    if report.config.plot_script:
        (out / "plot_results.py").write_text(PLOT_SCRIPT)
        report.files.append("plot_results.py")
    report.files.append("manifest.json")
    (out / "manifest.json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    return report


def _ensemble(sm, cfg: ScenarioConfig, T: float | None = None, primary: str = "Full"):
    full = sm.models.get(primary)
    if full is None:
        raise ConfigError(f"model {primary!r} is not enabled for this run")
    reduced = {k: v for k, v in sm.models.items() if k != primary}
    return run_ensemble(full, reduced, cfg.n_traj, cfg.integration(T),
                        workers=cfg.workers or None, pairing=cfg.pairing)


def run_eliminate(cfg: ScenarioConfig, stream=None) -> RunReport:
    cfg = replace(cfg, models=tuple(m for m in cfg.models if m != "Full") or ("GAE",))
    sm = build(cfg)
    summary = check_validity(sm)
    out = run_dir(cfg, "eliminate")
    text = format_report(sm.effective)
    (out / "effective_sme.txt").write_text(text)
    save_matrix_csv(out / "hamiltonian.csv", sm.effective.hamiltonian)
    save_matrix_csv(out / "decay_matrix.csv", sm.effective.decay_matrix)
    for k, M in enumerate(sm.effective.meas_ops):
        save_matrix_csv(out / f"measurement_{k}.csv", M)
    report = RunReport(cfg, backend=_backend.BACKEND)
    report.files += ["effective_sme.txt", "hamiltonian.csv", "decay_matrix.csv"]
    report.files += [f"measurement_{k}.csv" for k in range(len(sm.effective.meas_ops))]
    report.summaries["GAE"] = {"validity": summary}
    if "DOE" in sm.models:
        doe = sm.models["DOE"].generator
        gae = sm.effective.generator()
        report.summaries["DOE"] = {
            "max_generator_difference": float(np.abs(doe.superoperator() - gae.superoperator()).max()),
            "max_measurement_difference": float(max(np.abs(a - b).max() for a, b in zip(doe.meas, gae.meas))),
        }
    if stream is not None:
        stream.write(text)
    return _finish(report, out)


def run_simulate(cfg: ScenarioConfig, save: int = 1) -> RunReport:
    sm = build(cfg)
    summary = check_validity(sm)
    out = run_dir(cfg, "simulate")
    t0 = time.perf_counter()
    primary = "Full" if "Full" in sm.models else next(iter(sm.models))
    recs = _ensemble(sm, cfg, primary=primary)
    report = RunReport(cfg, backend=_backend.BACKEND)
    report.summaries["validity"] = summary
    report.summaries["runtime_s"] = time.perf_counter() - t0
    for rec in recs[:save]:
        for name, r in [(primary, rec.full), *rec.reduced.items()]:
            fname = f"trajectory_{rec.index:05d}_{name}.csv"
            write_trajectory_csv(out / fname, r, cfg.record_every)
            report.files.append(fname)
    return _finish(report, out)


def run_compare(cfg: ScenarioConfig) -> RunReport:
    sm = build(cfg)
    summary = check_validity(sm)
    if "Full" not in sm.models or not sm.reduced:
        raise ConfigError("compare needs the Full model and at least one reduced model")
    out = run_dir(cfg, "compare")
    t0 = time.perf_counter()
    recs = _ensemble(sm, cfg)
    report = RunReport(cfg, backend=_backend.BACKEND)
    report.summaries["validity"] = summary
    report.summaries["runtime_s"] = time.perf_counter() - t0
    rows = []
    for name in sm.reduced:
        ds = average_distance(recs, name)
        fname = f"distance_{name}.csv"
        _write_csv(out / fname, ["t", "D_mean", "D_stderr"], zip(ds.times, ds.mean, ds.stderr))
        report.files.append(fname)
        report.summaries[name] = {"D_avg": ds.time_average, "D_avg_stderr": ds.time_average_stderr}
        rows.append((name, ds.time_average, ds.time_average_stderr))
    _write_csv(out / "summary.csv", ["model", "D_avg", "D_avg_stderr"], rows)
    report.files.append("summary.csv")
    return _finish(report, out)


def run_parity(cfg: ScenarioConfig, hist_times: Sequence[float] = (5.0, 100.0)) -> RunReport:
    if cfg.scenario != "parity":
        raise ConfigError("the parity command needs scenario parity")
    sm = build(cfg)
    summary = check_validity(sm)
    out = run_dir(cfg, "parity")
    T = max([cfg.T_m, *hist_times])
    t0 = time.perf_counter()
    primary = "Full" if "Full" in sm.models else "GAE"
    cfg_run = replace(cfg, models=(primary,))
    recs = run_ensemble(sm.models[primary], {}, cfg.n_traj, cfg_run.integration(T),
                        workers=cfg.workers or None)
    report = RunReport(cfg, backend=_backend.BACKEND)
    report.summaries["validity"] = summary
    report.summaries["runtime_s"] = time.perf_counter() - t0
    report.summaries["model"] = primary
    for t in sorted(set([*hist_times, cfg.T_m])):
        h = current_histogram(recs, t)
        fname = f"histogram_t{t:g}.csv"
        _write_csv(out / fname, ["bin_left", "bin_right", "count"],
                   zip(h.edges[:-1], h.edges[1:], (int(c) for c in h.counts)))
        report.files.append(fname)
        report.summaries[f"histogram_t{t:g}_peaks"] = [float(x) for x in h.peaks()]
    nus = cfg.nu or PARITY_NU
    res = postselection_sweep(recs, cfg.T_m, nus)
    rows = [(nu, r.success_probability, r.n_kept, r.log_negativity) if r is not None
            else (nu, 0.0, 0, float("nan")) for nu, r in zip(nus, res)]
    _write_csv(out / "postselection.csv", ["nu", "success_prob", "n_kept", "E_N"], rows)
    report.files.append("postselection.csv")
    return _finish(report, out)


def run_sweep(cfg: ScenarioConfig, param: str, values: Sequence[float]) -> RunReport:
    out = run_dir(cfg, f"sweep-{param}")
    report = RunReport(cfg, backend=_backend.BACKEND)
    rows = []
    t0 = time.perf_counter()
    for v in values:
        c = replace(cfg, **{param: float(v)})
        validate(c)
        sm = build(c)
        check_validity(sm)
        recs = _ensemble(sm, c)
        for name in sm.reduced:
            ds = average_distance(recs, name)
            rows.append((float(v), name, ds.time_average, ds.time_average_stderr))
    report.summaries["runtime_s"] = time.perf_counter() - t0
    _write_csv(out / "sweep.csv", [param, "model", "D_avg", "D_avg_stderr"], rows)
    report.files.append("sweep.csv")
    return _finish(report, out)


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "eliminate":
            report = run_eliminate(cfg, stream=sys.stdout)
        elif args.command == "simulate":
            report = run_simulate(cfg, save=args.save)
        elif args.command == "compare":
            report = run_compare(cfg)
        elif args.command == "parity":
            report = run_parity(cfg, args.hist_times)
        else:
            report = run_sweep(cfg, args.param, args.values)
    except ConfigError as exc:
        print(f"gausselim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalValidityError, MomentError, EliminationError, StepSizeError) as exc:
        print(f"gausselim: numerical validity failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for k, v in report.summaries.items():
        if isinstance(v, dict) and "D_avg" in v:
            print(f"{k}: D_avg = {v['D_avg']:.4f} +- {v['D_avg_stderr']:.4f}")
    print(f"wrote {len(report.files)} files to {run_dir(report.config, args.command if args.command != 'sweep' else 'sweep-' + args.param)}")
    return EXIT_OK


PLOT_SCRIPT = '''"""Render the CSV outputs of one run directory (requires matplotlib)."""
import csv
import glob
import sys

import matplotlib.pyplot as plt


def read(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(x) if x not in ("", "nan") else float("nan") for x in r] for r in rows[1:]]


def main(run_dir="."):
    for path in sorted(glob.glob(f"{run_dir}/distance_*.csv")):
        _, rows = read(path)
        t, d, e = zip(*rows)
        plt.plot(t, d, label=path.split("distance_")[1][:-4])
    if plt.gca().lines:
        plt.xlabel("t [1/kappa]"); plt.ylabel("trace distance"); plt.legend()
        plt.savefig(f"{run_dir}/distance.png"); plt.clf()
    for path in sorted(glob.glob(f"{run_dir}/histogram_*.csv")):
        _, rows = read(path)
        lo, hi, c = zip(*rows)
        plt.bar(lo, c, width=[h - l for l, h in zip(lo, hi)], align="edge")
        plt.xlabel("J"); plt.savefig(path[:-4] + ".png"); plt.clf()
    for path in glob.glob(f"{run_dir}/postselection.csv"):
        _, rows = read(path)
        nu, p, _, en = zip(*rows)
        plt.plot(nu, p, label="success probability"); plt.plot(nu, en, label="E_N")
        plt.xlabel("nu"); plt.legend(); plt.savefig(f"{run_dir}/postselection.png"); plt.clf()
    for path in glob.glob(f"{run_dir}/sweep.csv"):
        head, rows = read_mixed(path)
        for model in sorted({r[1] for r in rows}):
            xs = [float(r[0]) for r in rows if r[1] == model]
            ys = [float(r[2]) for r in rows if r[1] == model]
            plt.plot(xs, ys, "o-", label=model)
        plt.xlabel(head[0]); plt.ylabel("time-averaged D"); plt.legend()
        plt.savefig(f"{run_dir}/sweep.png"); plt.clf()


def read_mixed(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


if __name__ == "__main__":
    main(*sys.argv[1:])
'''


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
