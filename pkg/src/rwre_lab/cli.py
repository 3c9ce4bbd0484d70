"""Experiment orchestration: config ingestion, deterministic parallel replica
execution, aggregation, and report emission.

Configs are JSON; outputs are JSON-lines (one record per replica) and CSV
summaries.  Replicas own disjoint RNG subkeys and results are aggregated in
replica order, so identical (config, seed) yields byte-identical output
regardless of worker count.  Floats are printed with 17 significant digits.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ._rng import TAG_ENV, TAG_STEPS, hash_key, subkey
from .environment import (BlockIndependent, EnvironmentModel, Homogeneous, IsingParams,
                          IsingTwoKernel, Product, TransitionKernel, dobrushin_coefficient,
                          kalikow_sufficient_check, mixing_rate_bound)
from .estimators import (VelocityEstimate, estimate_moments, estimate_velocity,
                         kalikow_mc, compute_lambda0, exit_moment_check,
                         one_step_supermartingale_check, cone_mixing_probe)
from .geometry import Direction, make_direction
from .regeneration import (BlockSeries, RegenSequence, blocks_or_empty,
                           detect_regenerations, k_tail)
from .walker import simulate

__version__ = "0.1.0"

_KINDS = ("lln", "regen_tail", "kalikow", "moments", "diagnostics", "ising_demo")


class ConfigInvalid(ValueError):
    pass


class IoError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# canonical serialization (17 significant digits, sorted keys)


def _canon(obj) -> str:
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if v != v or v in (float("inf"), float("-inf")):
            raise IoError("non-finite float in report")
        return format(v, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple, np.ndarray)):
        items = obj.tolist() if isinstance(obj, np.ndarray) else obj
        return "[" + ",".join(_canon(x) for x in items) + "]"
    if isinstance(obj, dict):
        keys = sorted(obj.keys())
        return "{" + ",".join(json.dumps(str(k)) + ":" + _canon(obj[k]) for k in keys) + "}"
    raise IoError(f"cannot serialize {type(obj)!r}")


def dumps_canonical(obj) -> str:
    return _canon(obj)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(dumps_canonical(raw).encode()).hexdigest()


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    kind: str
    environment: dict
    ell: tuple
    zeta: float
    kappa: float
    L: tuple
    horizon: int
    replicas: int
    seed: int
    out: Optional[str] = None
    threads: int = 1
    dump_paths: bool = False
    extra: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def build_environment(spec: dict, seed: int) -> EnvironmentModel:
    kind = spec.get("kind")
    if kind == "homogeneous":
        return Homogeneous(master_seed=seed, kernel=TransitionKernel(spec["kernel"]))
    if kind == "product":
        ks = tuple(TransitionKernel(k) for k in spec["kernels"])
        return Product(master_seed=seed, kernels=ks,
                       weights=tuple(spec.get("weights", ())))
    if kind == "block_independent":
        ks = tuple(TransitionKernel(k) for k in spec["kernels"])
        return BlockIndependent(master_seed=seed, kernels=ks,
                                weights=tuple(spec.get("weights", ())),
                                l_dep=int(spec["l_dep"]))
    if kind == "ising_two_kernel":
        params = IsingParams(beta=float(spec["beta"]), h=float(spec["h"]),
                             d=int(spec["d"]), box=spec.get("box", 16),
                             burn_in_sweeps=int(spec.get("burn_in_sweeps", 8)),
                             boundary=int(spec.get("boundary", 1)))
        return IsingTwoKernel(master_seed=seed, params=params,
                              omega_plus=TransitionKernel(spec["omega_plus"]),
                              omega_minus=TransitionKernel(spec["omega_minus"]))
    raise ConfigInvalid(f"environment.kind: unknown kind {kind!r}")


def parse_config(raw: dict) -> ExperimentConfig:
    errors = []

    def need(key, typ=None):
        if key not in raw:
            errors.append(f"{key}: missing")
            return None
        return raw[key]

    kind = need("kind")
    if kind is not None and kind not in _KINDS:
        errors.append(f"kind: must be one of {_KINDS}")
    env = need("environment")
    ell = need("ell")
    seed = int(raw.get("seed", 0))
    zeta = float(raw.get("zeta", 0.0))
    kappa = float(raw.get("kappa", 0.05))
    horizon = int(raw.get("horizon", 0))
    replicas = int(raw.get("replicas", 0))
    l_list = raw.get("L", [1])
    if isinstance(l_list, (int, float)):
        l_list = [int(l_list)]

    direction = None
    if ell is not None:
        try:
            direction = make_direction(ell, zeta)
        except Exception as exc:
            errors.append(f"ell/zeta: {exc}")
    if direction is not None:
        n_e = len(direction.step_alphabet)
        if not (0.0 < kappa and kappa * n_e < 1.0):
            errors.append(f"kappa: need 0 < kappa * |E| < 1, got kappa={kappa}, |E|={n_e}")
        for L in l_list:
            if int(L) < 1 or int(L) % direction.ell_l1 != 0:
                errors.append(f"L: {L} is not a positive multiple of |ell|_1 = {direction.ell_l1}")
        if horizon < 10 * max(int(L) for L in l_list):
            errors.append(f"horizon: must be >= 10 * max(L), got {horizon}")
    if replicas < 1:
        errors.append("replicas: must be >= 1")
    model = None
    if env is not None:
        try:
            model = build_environment(env, seed)
        except ConfigInvalid as exc:
            errors.append(str(exc))
        except Exception as exc:
            errors.append(f"environment: {exc}")
    if model is not None and direction is not None and model.d != direction.d:
        errors.append(f"environment: dimension {model.d} does not match ell {direction.d}")
    if errors:
        raise ConfigInvalid("; ".join(errors))
    return ExperimentConfig(
        kind=kind, environment=env, ell=tuple(int(c) for c in ell), zeta=zeta,
        kappa=kappa, L=tuple(int(L) for L in l_list), horizon=horizon,
        replicas=replicas, seed=seed, out=raw.get("out"),
        threads=int(raw.get("threads", 1)), dump_paths=bool(raw.get("dump_paths", False)),
        extra=raw.get("extra", {}), raw=raw,
    )


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    wall_time_s: float
    criteria: dict
    outputs: list

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash, "seed": self.seed,
            "version": self.version, "wall_time_s": self.wall_time_s,
            "criteria": self.criteria, "outputs": self.outputs,
        }


# ---------------------------------------------------------------------------
# report emission


def emit_report(results: Sequence, fmt: str, path) -> Path:
    """Write results as JSON-lines or CSV with stable ordering; refuses empty
    inputs and leaves no partial file behind."""
    results = list(results)
    if not results:
        raise IoError("refusing to write an empty report")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "w") as fh:
            if fmt == "jsonl":
                for row in results:
                    fh.write(dumps_canonical(row) + "\n")
            elif fmt == "csv":
                cols = list(results[0].keys())
                fh.write(",".join(cols) + "\n")
                for row in results:
                    fh.write(",".join(_csv_cell(row.get(c)) for c in cols) + "\n")
            else:
                raise IoError(f"unknown format {fmt!r}")
    except Exception:
        tmp.unlink(missing_ok=True)
        raise
    os.replace(tmp, path)
    return path


def _csv_cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (list, tuple, np.ndarray)):
        return '"' + dumps_canonical(x) + '"'
    return str(x)


def parse_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# replica engine


def _replica_walk(config: ExperimentConfig, model, direction, rep: int, mode="coupled"):
    env = model.reseeded(subkey(config.seed, rep, TAG_ENV))
    return simulate(env, direction, config.kappa, (0,) * model.d,
                    config.horizon, mode, hash_key(config.seed, rep, TAG_STEPS))


def _detect_all(config: ExperimentConfig, direction, rec):
    out = {}
    for L in config.L:
        seq = detect_regenerations(rec, direction, config.zeta, L, config.kappa)
        out[L] = (seq, blocks_or_empty(seq, config.kappa))
    return out


def _replica_record(rep: int, per_l: dict) -> dict:
    rec = {"replica": rep}
    for L, (seq, _) in per_l.items():
        rec[f"L{L}"] = {
            "taus": seq.taus.tolist(),
            "positions": seq.positions.tolist(),
            "K": int(seq.k_values[0]) if seq.k_values.size else None,
            "k_values": seq.k_values.tolist(),
            "censored_tail": seq.censored_tail,
            "survived_at_origin": seq.survived_at_origin,
            "endpoint": seq.end_position.tolist(),
        }
    return rec


def _run_replicas(config: ExperimentConfig, model, direction, threads: int):
    """Simulate + detect per replica; returns (records, {L: (seqs, blocks)})."""

    def work(rep: int):
        rec = _replica_walk(config, model, direction, rep)
        per_l = _detect_all(config, direction, rec)
        row = _replica_record(rep, per_l)
        if config.dump_paths and rep < 4:
            row["_path"] = rec.positions.tolist()
            row["_marks"] = rec.eps_marks.tolist()
        return row, per_l

    idx = list(range(config.replicas))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, idx))
    else:
        results = [work(i) for i in idx]
    records = [r for r, _ in results]
    per_l = {L: ([res[L][0] for _, res in results],
                 [res[L][1] for _, res in results]) for L in config.L}
    return records, per_l


def _velocity_rows(config, per_l) -> List[dict]:
    rows = []
    for L in config.L:
        seqs, blocks = per_l[L]
        est = estimate_velocity(blocks)
        row = {"estimator": "velocity", "L": L,
               "value": est.v_hat.tolist(), "se": est.se.tolist(),
               "n": est.n_blocks, "censor_rate": est.censor_rate,
               "horizon": config.horizon}
        rows.append((row, est))
    return rows


# ---------------------------------------------------------------------------
# experiment kinds


def _phi_for(config, L) -> float:
    phi = config.extra.get("phi", {})
    if isinstance(phi, dict) and "gamma" in phi:
        return mixing_rate_bound(float(phi["gamma"]), float(phi.get("C", 1.0)), float(L))
    if isinstance(phi, dict):
        return float(phi.get(str(L), 0.0))
    return float(phi)


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Execute replicas in parallel, stream JSON-lines per replica, write
    aggregate reports, and return the manifest."""
    t0 = time.time()
    out_dir = Path(config.out or "rwre_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    direction = make_direction(config.ell, config.zeta)
    model = build_environment(config.environment, config.seed)
    threads = config.threads
    criteria: Dict[str, object] = {}
    outputs: List[str] = []

    def write(name, rows, fmt):
        p = emit_report(rows, fmt, out_dir / name)
        outputs.append(str(p))

    if config.kind in ("lln", "regen_tail", "moments", "ising_demo"):
        records, per_l = _run_replicas(config, model, direction, threads)
        for L in config.L:
            write(f"regen_L{L}.jsonl",
                  [{k: v for k, v in r.items()
                    if k in ("replica", f"L{L}") or k.startswith("_")} for r in records],
                  "jsonl")

    if config.kind == "lln":
        rows = _velocity_rows(config, per_l)
        write("velocity.csv", [r for r, _ in rows], "csv")
        est = rows[0][1]
        criteria["v_hat"] = est.v_hat.tolist()
        criteria["se"] = est.se.tolist()
        criteria["v_direct"] = est.v_direct.tolist()
        criteria["se_direct"] = est.se_direct.tolist()
        for (_, e), L in zip(rows, config.L):
            criteria[f"velocity_L{L}"] = e.to_row()
    elif config.kind == "regen_tail":
        tails = {}
        for L in config.L:
            seqs, _ = per_l[L]
            tails[str(L)] = k_tail(seqs)
        write("ktail.jsonl", [{"L": L, **tails[L]} for L in tails], "jsonl")
        criteria["ktail"] = {L: tails[L]["ratios"] for L in tails}
    elif config.kind == "moments":
        rows = []
        for L in config.L:
            seqs, blocks = per_l[L]
            rep = estimate_moments(blocks, seqs, L, float(config.extra.get("alpha", 2.0)),
                                   config.kappa, _phi_for(config, L))
            rows.append({"estimator": "moments", "L": L, "value": rep.product,
                         "se": float("nan"), "n": rep.n_survivors,
                         "censor_rate": rep.censor_rate, "horizon": config.horizon})
            criteria[f"moments_L{L}"] = rep.to_row()
        write("moments.csv", rows, "csv")
    elif config.kind == "kalikow":
        u_sites = [tuple(int(c) for c in x) for x in config.extra.get("U", [[0] * model.d])]
        est = kalikow_mc(model, direction, config.kappa, u_sites,
                         config.replicas, config.seed)
        rows = [{"estimator": "kalikow", "L": 0,
                 "value": est.kernels[x].tolist(), "se": est.se[x].tolist(),
                 "n": est.visits[x], "censor_rate": 0.0, "horizon": config.horizon,
                 "site": list(x), "drift": est.drifts[x].tolist()}
                for x in sorted(est.kernels)]
        write("kalikow.csv", rows, "csv")
        criteria["kalikow_sites"] = len(rows)
    elif config.kind == "diagnostics":
        delta = float(config.extra.get("delta", 0.1))
        lam0 = compute_lambda0(delta, direction.ell_l2)
        criteria["lambda0"] = lam0
        checks = [one_step_supermartingale_check(k, direction, config.zeta, delta, lam0)
                  for k in model.support()]
        criteria["one_step_all_pass"] = bool(all(checks))
        rows = [{"estimator": "lambda0", "L": 0, "value": lam0, "se": 0.0,
                 "n": len(checks), "censor_rate": 0.0, "horizon": config.horizon}]
        for r in config.extra.get("r_values", []):
            rep = exit_moment_check(model, direction, config.kappa, delta, lam0,
                                    float(r), config.replicas, config.horizon, config.seed)
            criteria[f"exit_moment_r{r}"] = rep["passes"]
            rows.append({"estimator": "exit_moment", "L": 0, "value": rep["estimate"],
                         "se": rep["se"], "n": rep["replicas"], "censor_rate": 0.0,
                         "horizon": config.horizon})
        write("diagnostics.csv", rows, "csv")
    elif config.kind == "ising_demo":
        spec = config.environment
        report = kalikow_sufficient_check(
            TransitionKernel(spec["omega_plus"]), TransitionKernel(spec["omega_minus"]),
            float(config.extra.get("delta", 0.1)), float(spec["beta"]), float(spec["h"]),
            int(spec["d"]))
        criteria["passes_L54"] = report.passes_L54
        criteria["dobrushin_c"] = dobrushin_coefficient(
            IsingParams(beta=float(spec["beta"]), h=float(spec["h"]), d=int(spec["d"])))
        rows = _velocity_rows(config, per_l)
        write("velocity.csv", [r for r, _ in rows], "csv")
        est = rows[0][1]
        criteria["v_hat_e1"] = float(est.v_hat[0])
        criteria["v_hat_se_e1"] = float(est.se[0])
        criteria["v_positive"] = bool(est.v_hat[0] > 0)
        for (_, e), L in zip(rows, config.L):
            criteria[f"velocity_L{L}"] = e.to_row()
        mrows = []
        for L in config.L:
            seqs, blocks = per_l[L]
            rep = estimate_moments(blocks, seqs, L, float(config.extra.get("alpha", 2.0)),
                                   config.kappa, _phi_for(config, L))
            mrows.append({"estimator": "moments", "L": L, "value": rep.product,
                          "se": float("nan"), "n": rep.n_survivors,
                          "censor_rate": rep.censor_rate, "horizon": config.horizon})
            criteria[f"moments_L{L}"] = rep.to_row()
        write("moments.csv", mrows, "csv")

    manifest = RunManifest(
        config_hash=config_hash(config.raw), seed=config.seed, version=__version__,
        wall_time_s=time.time() - t0, criteria=criteria, outputs=outputs)
    with open(out_dir / "manifest.json", "w") as fh:
        fh.write(dumps_canonical(manifest.to_dict()) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# entry point


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(
        prog="rwre-lab",
        description="Monte Carlo lab for random walks in random mixing environments")
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, help="override config seed")
    ap.add_argument("--replicas", type=int, help="override replica count")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=int,
                    help="worker threads (falls back to RWRE_LAB_THREADS, then 1)")
    ap.add_argument("--dump-paths", action="store_true",
                    help="dump the first four replica paths into the JSONL records")
    args = ap.parse_args(argv)
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.replicas is not None:
        raw["replicas"] = args.replicas
    if args.out is not None:
        raw["out"] = args.out
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("RWRE_LAB_THREADS", "1"))
    raw["threads"] = threads
    if args.dump_paths:
        raw["dump_paths"] = True
    try:
        config = parse_config(raw)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        manifest = run_experiment(config)
    except (IoError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # runtime failures map to exit code 3
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    print(dumps_canonical(manifest.to_dict()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
