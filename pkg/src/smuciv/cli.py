"""Batch command-line front end: estimate, compare, analyze, simulate.

Configuration is a flat text file of `key = value` lines; any key can be
overridden on the command line as `--key value`.  Precedence is
CLI > file > defaults.  Exit codes: 0 success, 1 numerical failure,
2 IO or configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import marglik, structural
from .chainio import ChainFileError, load_chain, save_chain
from .data import Dataset, IngestError, ingest, simulate_dgp
from .gaussian import DegeneracyError
from .marglik import estimate_ml
from .mcmc import (SamplerConfig, SamplerStepError, initial_draw,
                   prior_from_data, run_chain)
from .model import ModelSpec, PriorConfig, Variant


class ConfigError(ValueError):
    """The run configuration is missing, malformed, or inconsistent."""


DEFAULTS = {
    "p": "4",
    "variant": "baseline",
    "variants": "baseline,r1,r2,r3,r4",
    "n_burn": "20000",
    "n_keep": "20000",
    "thin": "1",
    "seed": "0",
    "n_chains": "1",
    "horizon": "40",
    "mh_target_accept": "0.30",
    "output_dir": ".",
    "T": "300",
    "use_shadow_rate": "false",
    "elb_threshold": "0.25",
}


def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                 start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve_config(config_path: str | None,
                   overrides: dict[str, str]) -> dict[str, str]:
    cfg = dict(DEFAULTS)
    if config_path is not None:
        cfg.update(parse_config_file(config_path))
    cfg.update(overrides)
    return cfg


def _get_int(cfg: dict, key: str) -> int:
    try:
        return int(cfg[key])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"config key '{key}' must be an integer") from exc


def _get_float(cfg: dict, key: str) -> float:
    try:
        return float(cfg[key])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"config key '{key}' must be a number") from exc


def _get_bool(cfg: dict, key: str) -> bool:
    v = cfg.get(key, "false").lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key '{key}' must be true or false")


def load_data(cfg: dict) -> Dataset:
    if "data" in cfg:
        path = Path(cfg["data"])
        if not path.exists():
            raise IngestError(f"data file not found: {path}")
        return Dataset.from_csv(path)
    series = ("gdp", "deflator", "rate", "instrument", "shadow_rate")
    files = {s: cfg[s] for s in series if s in cfg}
    if not files:
        raise ConfigError("no input data: set 'data' to a wide CSV or the "
                          "per-series keys gdp/deflator/rate/instrument")
    columns = {s: cfg[f"{s}_column"] for s in series if f"{s}_column" in cfg}
    return ingest(files, columns,
                  use_shadow_rate=_get_bool(cfg, "use_shadow_rate"),
                  elb_threshold=_get_float(cfg, "elb_threshold"),
                  sample_start=cfg.get("sample_start"),
                  sample_end=cfg.get("sample_end"))


def build_spec(cfg: dict, data: Dataset, variant: str | None = None) -> ModelSpec:
    p = _get_int(cfg, "p")
    prior = prior_from_data(data.to_matrix(), p)
    try:
        var = Variant(variant if variant is not None else cfg["variant"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ModelSpec(p=p, prior=prior, variant=var)


def sampler_config(cfg: dict, seed: int | None = None) -> SamplerConfig:
    return SamplerConfig(n_burn=_get_int(cfg, "n_burn"),
                         n_keep=_get_int(cfg, "n_keep"),
                         thin=_get_int(cfg, "thin"),
                         seed=seed if seed is not None else _get_int(cfg, "seed"),
                         mh_target_accept=_get_float(cfg, "mh_target_accept"))


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _chain_paths(out: Path, variant: str, n_chains: int) -> list[Path]:
    return [out / f"chain_{variant}_{i}.csv" for i in range(n_chains)]


def _run_chains(spec: ModelSpec, data: Dataset, cfg: dict):
    scfg = sampler_config(cfg)
    n_chains = _get_int(cfg, "n_chains")
    if n_chains < 1:
        raise ConfigError("n_chains must be at least 1")
    return [run_chain(spec, data, scfg, chain_index=i) for i in range(n_chains)]


def _pool(chains):
    pooled = chains[0]
    for ch in chains[1:]:
        pooled.draws.extend(ch.draws)
        pooled.spectral_radius.extend(ch.spectral_radius)
    return pooled


def cmd_estimate(cfg: dict) -> int:
    data = load_data(cfg)
    spec = build_spec(cfg, data)
    out = _outdir(cfg)
    chains = _run_chains(spec, data, cfg)
    for path, chain in zip(_chain_paths(out, spec.variant.value, len(chains)),
                           chains):
        save_chain(path, chain, spec)
    summary = structural.summarize_trends(_pool(chains), data, spec)
    structural.write_trends_csv(out / "trends.csv", summary)
    return 0


def cmd_compare(cfg: dict) -> int:
    data = load_data(cfg)
    out = _outdir(cfg)
    variants = [v.strip() for v in cfg["variants"].split(",") if v.strip()]
    if not variants:
        raise ConfigError("'variants' must name at least one model variant")
    results = []
    for variant in variants:
        spec = build_spec(cfg, data, variant=variant)
        paths = _chain_paths(out, spec.variant.value,
                             _get_int(cfg, "n_chains"))
        if all(p.exists() for p in paths):
            chains = []
            for p in paths:
                chain, stored_spec = load_chain(p)
                if stored_spec.p != spec.p:
                    raise ConfigError(f"{p}: stored lag order "
                                      f"{stored_spec.p} != configured {spec.p}")
                chains.append(chain)
        else:
            chains = _run_chains(spec, data, cfg)
            for p, chain in zip(paths, chains):
                save_chain(p, chain, spec)
        res = estimate_ml(_pool(chains), spec, data)
        results.append((variant, res.log_ml, res.mc_se))
    order = np.argsort([-ml for _, ml, _ in results])
    rank = np.empty(len(results), dtype=int)
    rank[order] = np.arange(1, len(results) + 1)
    with open(out / "compare.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("variant,log_ml,mc_se,rank\n")
        for (variant, ml, se), r in zip(results, rank):
            fh.write(f"{variant},{ml:.17g},{se:.17g},{r}\n")
    return 0


def cmd_analyze(cfg: dict) -> int:
    data = load_data(cfg)
    out = _outdir(cfg)
    variant = Variant(cfg["variant"]).value
    paths = _chain_paths(out, variant, _get_int(cfg, "n_chains"))
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise ChainFileError(f"chain files not found: {missing}; "
                             "run 'estimate' first")
    chains = []
    spec = None
    for p in paths:
        chain, spec = load_chain(p)
        chains.append(chain)
    pooled = _pool(chains)
    H = _get_int(cfg, "horizon")
    structural.write_irf_csv(out / "irf.csv",
                             structural.irf_summary(pooled, spec, H=H))
    structural.write_hd_csv(out / "hd.csv", pooled, data, spec)
    return 0


def cmd_simulate(cfg: dict) -> int:
    out = _outdir(cfg)
    p = _get_int(cfg, "p")
    T = _get_int(cfg, "T")
    seed = _get_int(cfg, "seed")
    prior = PriorConfig(sigma_sq=np.ones(3), tau00_mean=np.zeros(4), beta0=0.5)
    try:
        variant = Variant(cfg["variant"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    spec = ModelSpec(p=p, prior=prior, variant=variant)
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    data, tau, shocks = simulate_dgp(spec, initial_draw(spec), T, rng)
    data.to_csv(out / "simulated.csv")
    with open(out / "simulated_tau.csv", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("date,tau_g,tau_pi,tau_r\n")
        tau_t = tau[4:].reshape(T, 3)
        for t, date in enumerate(data.dates):
            fh.write(f"{date}," + ",".join(f"{v:.17g}" for v in tau_t[t]) + "\n")
    with open(out / "simulated_shocks.csv", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("date," + ",".join(f"eps_{j}" for j in range(1, 8)) + "\n")
        for t, date in enumerate(data.dates):
            fh.write(f"{date}," + ",".join(f"{v:.17g}" for v in shocks[t]) + "\n")
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
}


def _parse_overrides(rest: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument: {tok}")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
        else:
            if i + 1 >= len(rest):
                raise ConfigError(f"override {tok} is missing a value")
            key, value = tok[2:], rest[i + 1]
            i += 1
        out[key] = value
        i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="smuciv",
        description="Trend-cycle model estimation with an external instrument")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None,
                        help="flat key = value configuration file")
    args, rest = parser.parse_known_args(argv)
    try:
        cfg = resolve_config(args.config, _parse_overrides(rest))
        return COMMANDS[args.command](cfg)
    except (DegeneracyError, SamplerStepError, ArithmeticError,
            marglik.TuningError, marglik.SupportError,
            np.linalg.LinAlgError) as exc:
        print(f"smuciv {args.command}: numerical failure: {exc}",
              file=sys.stderr)
        return 1
    except (ConfigError, IngestError, ChainFileError, FileNotFoundError,
            OSError, ValueError) as exc:
        print(f"smuciv {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
