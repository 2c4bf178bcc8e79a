"""Chain persistence: one self-describing columnar text file per chain.

Every scalar parameter of every kept draw is written with 17 significant
digits so that save -> load reproduces the chain bit for bit.  A JSON sidecar
carries the model specification, sampler configuration, and acceptance rate
needed to reconstruct the chain object.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mcmc import PosteriorChain, SamplerConfig, companion_spectral_radius
from .model import ModelSpec, ParameterDraw, PriorConfig


class ChainFileError(ValueError):
    """A chain file or its sidecar is malformed or inconsistent."""


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(Path(path).suffix + ".meta.json")


def chain_columns(p: int, T: int) -> list[str]:
    cols = [f"Phi_{l}_{i}_{j}"
            for l in range(1, p + 1)
            for i in range(1, 4)
            for j in range(1, 4)]
    cols += [f"B_{i}_{j}" for i in range(1, 7) for j in range(1, 7)]
    cols += ["beta", "alpha", "kappa1", "kappa2"]
    cols += [f"taubar0_{k}" for k in range(1, 5)]
    for name in ("g", "pi", "r"):
        cols += [f"tau_{name}_{t}" for t in range(1, T + 1)]
    return cols


def _draw_row(draw: ParameterDraw, T: int) -> np.ndarray:
    tau_t = draw.tau[4:].reshape(T, 3)
    return np.concatenate([
        draw.Phi.reshape(-1),
        draw.B.reshape(-1),
        [draw.beta, draw.alpha, draw.kappa1, draw.kappa2],
        draw.tau[:4],
        tau_t[:, 0], tau_t[:, 1], tau_t[:, 2],
    ])


def _row_to_draw(row: np.ndarray, p: int, T: int) -> ParameterDraw:
    k = 9 * p
    Phi = row[:k].reshape(p, 3, 3)
    B = row[k:k + 36].reshape(6, 6)
    beta, alpha, kappa1, kappa2 = row[k + 36:k + 40]
    rest = row[k + 40:]
    tau = np.empty(4 + 3 * T)
    tau[:4] = rest[:4]
    tau_t = np.column_stack([rest[4:4 + T], rest[4 + T:4 + 2 * T],
                             rest[4 + 2 * T:4 + 3 * T]])
    tau[4:] = tau_t.reshape(-1)
    return ParameterDraw(Phi=Phi, B=B, beta=float(beta), alpha=float(alpha),
                         kappa1=float(kappa1), kappa2=float(kappa2), tau=tau)


def save_chain(path, chain: PosteriorChain, spec: ModelSpec) -> None:
    if not chain.draws:
        raise ChainFileError("refusing to save an empty chain")
    if any(d.tau is None for d in chain.draws):
        raise ChainFileError("chain draws carry no state paths")
    T = (chain.draws[0].tau.shape[0] - 4) // 3
    cols = chain_columns(spec.p, T)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for d in chain.draws:
            row = _draw_row(d, T)
            if row.shape[0] != len(cols):
                raise ChainFileError("draw does not match the declared layout")
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    pr = spec.prior
    cfg = chain.config
    meta = {
        "format": "smuciv-chain-v1",
        "T": T,
        "p": spec.p,
        "variant": spec.variant.value,
        "seed": chain.seed,
        "chain_index": chain.chain_index,
        "accept_rate_B": chain.accept_rate_B,
        "sampler": {
            "n_burn": cfg.n_burn,
            "n_keep": cfg.n_keep,
            "thin": cfg.thin,
            "seed": cfg.seed,
            "mh_target_accept": cfg.mh_target_accept,
            "adapt_until": cfg.adapt_until,
        },
        "prior": {
            "sigma_sq": pr.sigma_sq.tolist(),
            "tau00_mean": pr.tau00_mean.tolist(),
            "beta0": pr.beta0,
            "V_b": pr.V_b,
            "b_mean": pr.b_mean.tolist(),
            "V_beta": pr.V_beta,
            "V_alpha": pr.V_alpha,
            "alpha0": pr.alpha0,
            "V_tau00": pr.V_tau00.tolist(),
        },
    }
    with open(sidecar_path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_chain(path) -> tuple[PosteriorChain, ModelSpec]:
    side = sidecar_path(path)
    if not Path(path).exists():
        raise ChainFileError(f"chain file not found: {path}")
    if not side.exists():
        raise ChainFileError(f"metadata sidecar not found: {side}")
    with open(side, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != "smuciv-chain-v1":
        raise ChainFileError("unrecognized chain file format")
    p, T = meta["p"], meta["T"]
    prior = PriorConfig(
        sigma_sq=np.array(meta["prior"]["sigma_sq"]),
        tau00_mean=np.array(meta["prior"]["tau00_mean"]),
        beta0=meta["prior"]["beta0"],
        V_b=meta["prior"]["V_b"],
        b_mean=np.array(meta["prior"]["b_mean"]),
        V_beta=meta["prior"]["V_beta"],
        V_alpha=meta["prior"]["V_alpha"],
        alpha0=meta["prior"]["alpha0"],
        V_tau00=np.array(meta["prior"]["V_tau00"]),
    )
    spec = ModelSpec(p=p, prior=prior, variant=meta["variant"])
    cfg = SamplerConfig(**meta["sampler"])

    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        expected = chain_columns(p, T)
        if header != expected:
            raise ChainFileError("chain file header does not match its sidecar")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(expected):
                raise ChainFileError(f"line {lineno}: wrong field count")
            try:
                rows.append(np.array([float(v) for v in parts]))
            except ValueError as exc:
                raise ChainFileError(f"line {lineno}: {exc}") from exc
    if not rows:
        raise ChainFileError("chain file contains no draws")
    draws = [_row_to_draw(r, p, T) for r in rows]
    spectral = [companion_spectral_radius(d.Phi) for d in draws]
    chain = PosteriorChain(draws=draws, accept_rate_B=meta["accept_rate_B"],
                           seed=meta["seed"], chain_index=meta["chain_index"],
                           config=cfg, spectral_radius=spectral)
    return chain, spec
