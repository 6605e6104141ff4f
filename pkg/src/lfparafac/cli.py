"""Command-line interface: ``lfparafac {fit,predict,simulate,select-rank,benchmark}``.

Settings come from flags, then an optional JSON ``--config`` file, then
defaults.  Every command writes ``config.json`` with the effective settings
next to its outputs.  Exit codes: 0 success, 2 invalid input or
configuration, 3 numerical failure.
"""
import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .covariance import CovarianceField, assemble
from .data_model import load_csv, write_csv
from .exceptions import ConfigError, DataFormatError, LFParafacError
from .inference import predict_scores, write_scores_csv, write_trajectories_csv
from .lf_parafac import LfParafacModel, fit_lf_parafac
from .model_selection import select_rank_aic, select_rank_lcv, write_report
from .simulation import PRESETS, benchmark_grid, preset, run_benchmark, save_truth, write_rows, generate

DEFAULTS = {
    "input": None,
    "output_dir": ".",
    "model": None,
    "rank": 3,
    "ranks": "1,2,3,4,5",
    "grid_size": 51,
    "bandwidth_mean": None,
    "bandwidth_cov": None,
    "epsilon": 1e-8,
    "max_iter": 200,
    "folds": 5,
    "seed": 0,
    "workers": None,
    "preset": "d2-r3",
    "cache_cov": None,
    "criterion": "both",
    "penalty": "rank",
    "n": None,
    "snr": None,
    "sparsity": None,
    "sparsities": "0.0,0.2,0.5,0.8",
    "snrs": "0.5,1.0,2.0",
    "repeats": 1,
    "methods": "lf_parafac,cpd_baseline",
}

# the benchmark uses the preset's rank unless told otherwise
COMMAND_DEFAULTS = {"benchmark": {"ranks": None}}

USED = {
    "fit": ["input", "output_dir", "rank", "grid_size", "bandwidth_mean", "bandwidth_cov", "epsilon",
            "max_iter", "seed", "cache_cov"],
    "predict": ["input", "output_dir", "model"],
    "simulate": ["output_dir", "preset", "seed", "n", "snr", "sparsity"],
    "select-rank": ["input", "output_dir", "ranks", "grid_size", "bandwidth_mean", "bandwidth_cov", "epsilon",
                    "max_iter", "folds", "seed", "criterion", "penalty", "cache_cov"],
    "benchmark": ["output_dir", "preset", "ranks", "sparsities", "snrs", "repeats", "seed", "workers",
                  "methods", "grid_size", "epsilon", "max_iter"],
}


def _int_list(text):
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _float_list(text):
    return [float(p) for p in str(text).split(",") if p.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="lfparafac", description="Latent functional PARAFAC decomposition")
    sub = p.add_subparsers(dest="command", required=True)
    for name in USED:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file with default settings")
        for key in USED[name]:
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, default=None)
    return p


def _coerce(cfg):
    """Validate and convert settings; raises ConfigError."""
    conv = {
        "rank": int, "grid_size": int, "max_iter": int, "folds": int, "seed": int, "repeats": int,
        "workers": int, "n": int,
        "epsilon": float, "bandwidth_mean": float, "bandwidth_cov": float, "snr": float, "sparsity": float,
    }
    out = {}
    for key, value in cfg.items():
        if value is None or key not in conv:
            out[key] = value
            continue
        try:
            out[key] = conv[key](value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot interpret {value!r}") from None
    for key in ("rank", "grid_size", "max_iter", "folds", "repeats", "workers", "n"):
        if out.get(key) is not None and out[key] < 1:
            raise ConfigError(f"{key} must be positive")
    if out.get("grid_size") is not None and out["grid_size"] < 2:
        raise ConfigError("grid_size must be at least 2")
    if out.get("epsilon") is not None and out["epsilon"] < 0:
        raise ConfigError("epsilon must be non-negative")
    for key in ("bandwidth_mean", "bandwidth_cov"):
        if out.get(key) is not None and out[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if out.get("criterion") not in (None, "lcv", "aic", "both"):
        raise ConfigError("criterion must be lcv, aic or both")
    if out.get("penalty") not in (None, "rank", "params"):
        raise ConfigError("penalty must be rank or params")
    if out.get("preset") is not None and out["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {out['preset']!r}; choose from {sorted(PRESETS)}")
    try:
        if out.get("ranks") is not None:
            out["ranks"] = _int_list(out["ranks"]) if isinstance(out["ranks"], str) else [int(r) for r in out["ranks"]]
        for key in ("sparsities", "snrs"):
            if out.get(key) is not None:
                out[key] = _float_list(out[key]) if isinstance(out[key], str) else [float(v) for v in out[key]]
        if isinstance(out.get("methods"), str):
            out["methods"] = [m.strip() for m in out["methods"].split(",") if m.strip()]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad list setting: {exc}") from None
    return out


def resolve_config(command, args):
    """Merge flags > config file > defaults, restricted to the command's keys."""
    keys = USED[command]
    cfg = {k: COMMAND_DEFAULTS.get(command, {}).get(k, DEFAULTS[k]) for k in keys}
    if args.get("config"):
        try:
            with open(args["config"], encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(keys)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(file_cfg)
    for k in keys:
        if args.get(k) is not None:
            cfg[k] = args[k]
    cfg = _coerce(cfg)
    cfg["command"] = command
    return cfg


def _need(cfg, key):
    if cfg.get(key) is None:
        raise ConfigError(f"--{key.replace('_', '-')} is required for {cfg['command']}")
    return cfg[key]


def _outdir(cfg):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _covariance(cfg, dataset):
    cache = cfg.get("cache_cov")
    if cache and os.path.exists(cache):
        return CovarianceField.load(cache)
    cov = assemble(dataset, grid_size=cfg["grid_size"], bandwidth_mean=cfg["bandwidth_mean"],
                   bandwidth_cov=cfg["bandwidth_cov"])
    if cache:
        cov.save(cache)
    return cov


def _fit_config(cfg):
    return {k: cfg[k] for k in USED["fit"] if k not in ("output_dir", "cache_cov")}


def cmd_fit(cfg):
    dataset = load_csv(_need(cfg, "input"))
    out = _outdir(cfg)
    cov = _covariance(cfg, dataset)
    model, report = fit_lf_parafac(cov, cfg["rank"], dataset=dataset, epsilon=cfg["epsilon"],
                                   max_iter=cfg["max_iter"], seed=cfg["seed"], config=_fit_config(cfg))
    model.save(out / "model.json")
    _write_json(out / "fit_report.json", dict(report.to_dict(), config=cfg))
    preds = [predict_scores(model, s) for s in dataset.samples]
    write_scores_csv(preds, out / "scores.csv")
    write_trajectories_csv(model, preds, [model.grid] * len(preds), out / "trajectories.csv")
    _write_json(out / "config.json", cfg)
    return 0


def cmd_predict(cfg):
    model = LfParafacModel.load(_need(cfg, "model"))
    dataset = load_csv(_need(cfg, "input"))
    if tuple(dataset.shape) != tuple(model.shape):
        raise DataFormatError(f"dataset shape {dataset.shape} does not match model shape {model.shape}")
    out = _outdir(cfg)
    preds = [predict_scores(model, s) for s in dataset.samples]
    write_scores_csv(preds, out / "scores.csv")
    write_trajectories_csv(model, preds, [model.grid] * len(preds), out / "trajectories.csv")
    _write_json(out / "config.json", cfg)
    return 0


def simulation_config(cfg):
    overrides = {"seed": cfg["seed"]}
    for key in ("n", "snr", "sparsity"):
        if cfg.get(key) is not None:
            overrides[key] = cfg[key]
    return preset(cfg["preset"], **overrides)


def cmd_simulate(cfg):
    sim = simulation_config(cfg)
    dataset, truth = generate(sim)
    out = _outdir(cfg)
    write_csv(dataset, out / "dataset.csv")
    save_truth(truth, out / "truth.json")
    _write_json(out / "config.json", dict(cfg, simulation=sim.to_dict()))
    return 0


def cmd_select_rank(cfg):
    dataset = load_csv(_need(cfg, "input"))
    out = _outdir(cfg)
    params = {"grid_size": cfg["grid_size"], "bandwidth_mean": cfg["bandwidth_mean"],
              "bandwidth_cov": cfg["bandwidth_cov"], "epsilon": cfg["epsilon"], "max_iter": cfg["max_iter"],
              "seed": cfg["seed"]}
    lcv = aic = None
    if cfg["criterion"] in ("lcv", "both"):
        lcv = select_rank_lcv(dataset, cfg["ranks"], folds=cfg["folds"], seed=cfg["seed"], params=params)
    if cfg["criterion"] in ("aic", "both"):
        fit_only = {k: v for k, v in params.items() if k in ("epsilon", "max_iter", "seed")}
        aic = select_rank_aic(dataset, cfg["ranks"], params=fit_only, penalty=cfg["penalty"],
                              cov=_covariance(cfg, dataset))
    write_report(out / "rank_selection.csv", lcv=lcv, aic=aic)
    write_report(out / "rank_selection.json", lcv=lcv, aic=aic, config=cfg)
    _write_json(out / "config.json", cfg)
    return 0


def cmd_benchmark(cfg):
    base = preset(cfg["preset"])
    ranks = cfg["ranks"] if cfg.get("ranks") else None
    cfgs = benchmark_grid(base, ranks=ranks, sparsities=cfg["sparsities"], snrs=cfg["snrs"])
    fit_params = {"grid_size": cfg["grid_size"], "epsilon": cfg["epsilon"], "max_iter": cfg["max_iter"]}
    rows = run_benchmark(cfgs, methods=cfg["methods"], repeats=cfg["repeats"], seed=cfg["seed"],
                         workers=cfg["workers"], fit_params=fit_params)
    out = _outdir(cfg)
    write_rows(rows, out / "benchmark.csv")
    _write_json(out / "config.json", dict(cfg, cells=[c.to_dict() for c in cfgs]))
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "select-rank": cmd_select_rank,
    "benchmark": cmd_benchmark,
}


def main(argv=None):
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    try:
        cfg = resolve_config(command, args)
        return COMMANDS[command](cfg)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LFParafacError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
