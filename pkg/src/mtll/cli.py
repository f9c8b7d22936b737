"""Command line entry point: ``mtll {simulate,filter,mtll,compare}``."""

import argparse
import json
import sys
from pathlib import Path


from .bench import (ExperimentConfig, compare_reports, dumps_report, load_config,
                    run_mtll_experiment)
from .errors import MTLLError
from .lock import first_exit
from .sde_sim import read_path_csv, simulate_pair, write_path_csv


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if changes:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **changes})
    return cfg


def _out_dir(args, cfg=None):
    out = args.out or (cfg.out if cfg is not None else None) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_simulate(args):
    cfg = _config(args)
    model, _ = cfg.build()
    path = simulate_pair(model, cfg.grid, cfg.x0, cfg.seed, trajectory=args.trajectory)
    dest = _out_dir(args, cfg) / "path.csv"
    write_path_csv(dest, path)
    return {"written": str(dest), "n_steps": cfg.grid.n_steps}


def cmd_filter(args):
    cfg = _config(args)
    model, domain = cfg.build()
    grid, x, dy = read_path_csv(args.input)
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "dt": grid.dt, "T": grid.T})
    xhat = cfg.make_filter(args.filter, model).transform(dy)
    dest = _out_dir(args, cfg) / f"xhat_{args.filter}.csv"
    t = grid.times
    with open(dest, "w") as fh:
        fh.write("t,xhat" + (",e" if x is not None else "") + "\n")
        for i in range(len(t)):
            row = [repr(float(t[i])), repr(float(xhat[i]))]
            if x is not None:
                row.append(repr(float(x[i] - xhat[i])))
            fh.write(",".join(row) + "\n")
    result = {"written": str(dest), "filter": args.filter}
    if x is not None:
        info = first_exit(x - xhat, domain, grid)
        result.update(exited=info.exited, tau=info.tau)
    return result


def cmd_mtll(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    report = run_mtll_experiment(cfg, workers=args.workers, out_dir=out)
    return {"written": str(out / "report.json"),
            "mtll": {n: f["mtll"] for n, f in report["filters"].items()}}


def cmd_compare(args):
    reports = [json.loads(Path(p).read_text()) for p in args.reports]
    summary = compare_reports(reports)
    dest = _out_dir(args) / "summary.json"
    dest.write_text(dumps_report(summary))
    return {"written": str(dest)}


def build_parser():
    p = argparse.ArgumentParser(prog="mtll", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", type=Path, help="experiment config (sectioned key = value)")
        sp.add_argument("--out", type=Path, help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")

    sp = sub.add_parser("simulate", help="write one (x, dy) sample path to CSV")
    common(sp)
    sp.add_argument("--trajectory", type=int, default=0, help="trajectory id within the seed")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="run one filter on an observation CSV")
    common(sp, seed=False)
    sp.add_argument("input", type=Path, help="CSV with columns t, dy (and optionally x)")
    sp.add_argument("--filter", choices=("mne", "pll", "ekf"), default="mne")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("mtll", help="run a Monte Carlo campaign")
    common(sp)
    sp.add_argument("--workers", type=int, default=1, help="parallel processes (speed only)")
    sp.set_defaults(func=cmd_mtll)

    sp = sub.add_parser("compare", help="merge reports from a noise sweep")
    sp.add_argument("reports", nargs="+", type=Path)
    sp.add_argument("--out", type=Path)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except MTLLError as exc:
        print(json.dumps(exc.record()), file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
