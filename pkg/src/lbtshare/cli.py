"""Command-line surface: build-layout, train, evaluate, baseline, sweep-ed,
table3 and plot subcommands.

Configuration precedence is defaults < command-line flags < config file; the
merged configuration is logged to the output directory.
"""

import argparse
import json
import os
import sys

import numpy as np

from lbtshare import harness
from lbtshare.baselines import EdPolicy, PfPolicy, adaptive_ed
from lbtshare.channel import load_scenario, save_scenario
from lbtshare.harness import ExperimentConfig, derived_seeds, merge_config
from lbtshare.rl import QPolicy, evaluate, load_checkpoint, save_checkpoint, train


def _add_common(p):
    p.add_argument("--config", help="JSON config file (overrides flags)")
    p.add_argument("--layout", choices=["L1", "L2", "full"], default=None)
    p.add_argument("--scenario-path", dest="scenario_path", default=None)
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.add_argument("--master-seed", dest="master_seed", type=int, default=None)
    p.add_argument("--paper-scale", dest="desk", action="store_false", default=None,
                   help="use paper-scale presets instead of the desk preset")
    p.add_argument("--env", help="JSON dict of EnvParams overrides")
    p.add_argument("--hyper", help="JSON dict of TrainHyper overrides")
    p.add_argument("--ed-threshold-dbm", dest="ed_threshold_dbm", type=float, default=None)
    p.add_argument("--eval-realizations", dest="eval_realizations", type=int, default=None)


def _build_config(args):
    flags = {
        k: getattr(args, k, None)
        for k in (
            "layout", "scenario_path", "output_dir", "master_seed", "desk",
            "ed_threshold_dbm", "eval_realizations",
        )
    }
    for k in ("env", "hyper"):
        raw = getattr(args, k, None)
        flags[k] = json.loads(raw) if raw else None
    file_doc = None
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_doc = json.load(fh)
    cfg = merge_config(ExperimentConfig(), flags, file_doc)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "merged_config.json"), "w") as fh:
        json.dump(harness.asdict(cfg), fh, indent=1, sort_keys=True)
    return cfg


def _load_or_build_scenario(cfg):
    if cfg.scenario_path and os.path.exists(cfg.scenario_path):
        return load_scenario(cfg.scenario_path)
    scenario = harness.build_layout(cfg.layout, cfg.master_seed)
    path = cfg.scenario_path or os.path.join(cfg.output_dir, f"scenario_{cfg.layout}.json")
    save_scenario(scenario, path)
    return scenario


def _splits(cfg, scenario):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 1]))
    return harness.enumerate_splits(
        scenario, rng, train_per_bs=cfg.train_per_bs,
        n_validation=cfg.n_validation_configs, n_test=cfg.n_test_configs,
    )


def cmd_build_layout(args):
    cfg = _build_config(args)
    scenario = harness.build_layout(cfg.layout, cfg.master_seed)
    path = cfg.scenario_path or os.path.join(cfg.output_dir, f"scenario_{cfg.layout}.json")
    save_scenario(scenario, path)
    print(f"wrote {path}: {scenario.n_bs} BSs, {scenario.geometry.n_ue} UEs")


def cmd_train(args):
    cfg = _build_config(args)
    scenario = _load_or_build_scenario(cfg)
    params = cfg.env_params(scenario.n_bs)
    hyper = cfg.train_hyper()
    train_configs, val_configs, _ = _splits(cfg, scenario)
    log_path = os.path.join(cfg.output_dir, "train_log.csv")
    result = train(
        scenario.gains, train_configs, params, hyper,
        seed=cfg.master_seed, validation_configs=val_configs, log_path=log_path,
        progress=lambda it, eps, vr: print(f"iter {it}: eps={eps:.3f} val_reward={vr:.4f}"),
    )
    ckpt = os.path.join(cfg.output_dir, "checkpoint")
    save_checkpoint(ckpt, result.agents, params, hyper, hyper.iterations)
    print(f"wrote {ckpt} and {log_path}")


def cmd_evaluate(args):
    cfg = _build_config(args)
    scenario = _load_or_build_scenario(cfg)
    params = cfg.env_params(scenario.n_bs)
    hyper = cfg.train_hyper()
    agents, _ = load_checkpoint(args.checkpoint, hyper)
    _, _, test_configs = _splits(cfg, scenario)
    seeds = derived_seeds(cfg.master_seed, "eval", cfg.eval_realizations)
    policies = {
        "rl": lambda: QPolicy([a.con for a in agents], eps=0.0),
        "pf": PfPolicy,
        "ed_fixed": lambda: EdPolicy(cfg.ed_threshold_dbm),
    }
    rows = evaluate(policies, scenario.gains, test_configs, seeds, params)
    out = os.path.join(cfg.output_dir, "evaluation.csv")
    harness.write_eval_csv(out, rows, experiment_id=f"{cfg.layout}-{cfg.master_seed}")
    print(f"wrote {out}")


def cmd_baseline(args):
    cfg = _build_config(args)
    scenario = _load_or_build_scenario(cfg)
    params = cfg.env_params(scenario.n_bs)
    _, _, test_configs = _splits(cfg, scenario)
    seeds = derived_seeds(cfg.master_seed, "eval", cfg.eval_realizations)
    policies = {"pf": PfPolicy, "ed_fixed": lambda: EdPolicy(cfg.ed_threshold_dbm)}
    rows = evaluate(policies, scenario.gains, test_configs, seeds, params)
    out = os.path.join(cfg.output_dir, "baselines.csv")
    harness.write_eval_csv(out, rows, experiment_id=f"{cfg.layout}-{cfg.master_seed}")
    print(f"wrote {out}")


def cmd_sweep_ed(args):
    cfg = _build_config(args)
    scenario = _load_or_build_scenario(cfg)
    params = cfg.env_params(scenario.n_bs)
    _, _, test_configs = _splits(cfg, scenario)
    seeds = derived_seeds(cfg.master_seed, "eval", cfg.eval_realizations)
    ed = cfg.ed_config()
    out = os.path.join(cfg.output_dir, "ed_sweep.csv")
    import csv

    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "threshold_dbm", "mean_cumulative_reward", "is_best"])
        for c_idx, c in enumerate(test_configs):
            res = adaptive_ed(scenario.gains, c, ed.sweep_set, seeds, params)
            for e0, m in zip(res.thresholds, res.mean_rewards):
                w.writerow([c_idx, e0, repr(m), int(e0 == res.best_threshold_dbm)])
    print(f"wrote {out}")


def cmd_table3(args):
    cfg = _build_config(args)
    scenario = _load_or_build_scenario(cfg)
    params = cfg.env_params(scenario.n_bs)
    hyper = cfg.train_hyper()
    agents, _ = load_checkpoint(args.checkpoint, hyper)
    _, _, test_configs = _splits(cfg, scenario)
    seeds = derived_seeds(cfg.master_seed, "eval", cfg.eval_realizations)
    table = harness.run_table3(agents, scenario.gains, test_configs, params, seeds, cfg.ed_config())
    out = os.path.join(cfg.output_dir, "table3.csv")
    harness.write_table3_csv(out, table)
    print(f"wrote {out}")


def cmd_plot(args):
    cfg = _build_config(args)
    if args.train_log:
        out = os.path.join(cfg.output_dir, "validation_series.csv")
        harness.emit_validation_plot(args.train_log, out, smooth_window=args.smooth)
        print(f"wrote {out}")
    if args.eval_csv:
        out = os.path.join(cfg.output_dir, "reward_per_config_series.csv")
        harness.emit_metrics_plot(args.eval_csv, out)
        print(f"wrote {out}")


ERROR_CATEGORIES = {
    ValueError: ("input", 2),
    FileNotFoundError: ("missing-file", 2),
    RuntimeError: ("runtime", 3),
    FloatingPointError: ("numerics", 3),
}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="lbtshare")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in [
        ("build-layout", cmd_build_layout),
        ("train", cmd_train),
        ("baseline", cmd_baseline),
        ("sweep-ed", cmd_sweep_ed),
    ]:
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(func=fn)
    for name, fn in [("evaluate", cmd_evaluate), ("table3", cmd_table3)]:
        p = sub.add_parser(name)
        _add_common(p)
        p.add_argument("--checkpoint", required=True)
        p.set_defaults(func=fn)
    p = sub.add_parser("plot")
    _add_common(p)
    p.add_argument("--train-log")
    p.add_argument("--eval-csv")
    p.add_argument("--smooth", type=int, default=1)
    p.set_defaults(func=cmd_plot)

    args = parser.parse_args(argv)
    try:
        args.func(args)
    except tuple(ERROR_CATEGORIES) as exc:
        category, code = ERROR_CATEGORIES[type(exc)]
        print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
