"""Command-line entry point: ``aerofed {run,evaluate,emit-plots,gradcheck,oracle}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checks
from .errors import ConfigError
from .experiment import ExperimentConfig, emit_plot_data, evaluate_run, load_config, run, validate_config


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.episodes is not None:
        cfg.run.episodes = args.episodes
    if args.synthetic:
        cfg.run.synthetic = True
    if getattr(args, "method", None):
        cfg.run.method = args.method
    validate_config(cfg)
    return cfg


def cmd_run(args):
    cfg = _config(args)
    out = Path(args.out or f"runs/{cfg.run.method}-seed{cfg.run.seed}")
    run(cfg, out)
    summary = json.loads((out / "summary").read_text())
    det = summary["detection"]["metrics"]
    print(f"{out}: {summary['episodes']} episodes, mean UAV energy "
          f"{summary['mean_uav_energy_J']:.1f} J, F1 {det['f1']:.3f}")
    return 0


def cmd_evaluate(args):
    if not args.out:
        raise ConfigError("evaluate needs --out pointing at a run directory")
    print(json.dumps(evaluate_run(args.out), indent=2, sort_keys=True))
    return 0


def cmd_emit_plots(args):
    if not args.out:
        raise ConfigError("emit-plots needs --out pointing at a run directory")
    emit_plot_data(args.out)
    print(f"wrote convergence.csv, energy.csv, detection.csv to {args.out}")
    return 0


def cmd_gradcheck(args):
    seed = args.seed or 0
    results = checks.gradcheck_suite(100, seed)
    worst = max(max(r.max_rel_param, r.max_rel_input) for r in results)
    ok = worst < 1e-4
    print(f"gradcheck: {len(results)} configurations, worst relative error {worst:.3e} "
          f"-> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_oracle(args):
    seed = args.seed or 0
    worst, perm_ok = checks.fedavg_oracle(seed=seed)
    mism = checks.greedy_oracle(seed=seed)
    fact, joint = checks.joint_vs_factorized(seed)
    cov, opt = checks.train_placement(seed)
    lines = [
        ("fedavg", worst <= 1e-12 and perm_ok, f"max dev {worst:.2e}, permutation-exact {perm_ok}"),
        ("greedy", mism == 0, f"{mism} mismatches / 1000"),
        ("joint-vs-factorized", fact >= joint - 0.05 * abs(joint), f"{fact:.4f} vs {joint:.4f}"),
        ("placement", cov >= 0.9 * opt, f"coverage {cov:.3f} vs grid optimum {opt:.3f}"),
    ]
    for name, ok, msg in lines:
        print(f"{name}: {'PASS' if ok else 'FAIL'} ({msg})")
    return 0 if all(ok for _, ok, _ in lines) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="aerofed", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    handlers = {
        "run": cmd_run, "evaluate": cmd_evaluate, "emit-plots": cmd_emit_plots,
        "gradcheck": cmd_gradcheck, "oracle": cmd_oracle,
    }
    for name, fn in handlers.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat section.key = value file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="run directory")
        sp.add_argument("--synthetic", action="store_true", help="use the Gaussian stand-in dataset")
        sp.add_argument("--episodes", type=int)
        if name == "run":
            sp.add_argument("--method", choices=("afl-ca2c", "fl-all", "standalone"))
        sp.set_defaults(func=fn)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
