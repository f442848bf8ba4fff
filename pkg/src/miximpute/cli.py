"""Command-line front end.

Subcommands: impute (fit + emit M completed datasets), ilb (loss-based
inference), simulate (scenario/replication harness), check (statistical
verification suites).  Shared flags: --config, --seed, --threads, --out.
Every command is a pure function of (config, seed): re-running overwrites
identically (set SOURCE_DATE_EPOCH to also pin the manifest timestamp).
Exit codes: 0 ok, 1 config/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .cgmm import PriorConfig
from .data_model import CsvSchema, VariableKind, read_dataset, write_imputations
from .errors import MiximputeError, ValidationError
from .gibbs import ChainConfig, run_chain
from .ilb import (
    MeanLoss,
    QuadraticRegressionLoss,
    QuantileLoss,
    SnapshotSource,
    ilb_run,
)
from .rng import RngStream
from .simbench import ScenarioSpec, SimConfig, run_replications

_KNOWN_KEYS = {
    "impute": {
        "input": {"path", "missing_token", "responses", "covariates", "count_cutpoints"},
        "model": {"g", "init"},
        "chain": {"burn_in", "keep", "thin", "m_imputations"},
        "priors": {"a", "s_alpha", "s_b1", "s_b2", "s_b", "nu", "s_sigma"},
        "": {"seed", "out", "threads"},
    },
    "ilb": {
        "input": {"path", "missing_token", "responses", "covariates", "count_cutpoints"},
        "model": {"g", "init"},
        "chain": {"burn_in", "keep", "thin", "m_imputations"},
        "priors": {"a", "s_alpha", "s_b1", "s_b2", "s_b", "nu", "s_sigma"},
        "ilb": {"loss", "b", "level", "thin", "mode"},
        "": {"seed", "out", "threads"},
    },
    "simulate": {
        "simulate": {
            "scenario", "outcome_mode", "population", "sample", "replications",
            "g", "b", "level", "burn_in", "keep", "thin", "m_imputations",
            "baselines", "ilb",
        },
        "": {"seed", "out", "threads"},
    },
    "check": {
        "check": {"suite", "fast"},
        "": {"seed", "out", "threads"},
    },
}


def _fail(code: int, where: str, msg: str):
    print(f"miximpute {where}: {msg}", file=sys.stderr)
    raise SystemExit(code)


def _load_config(path, command: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config parse error: {exc}")
    known = _KNOWN_KEYS[command]
    for section, value in cfg.items():
        if isinstance(value, dict):
            if section not in known:
                raise ValidationError(f"unknown config section [{section}]")
            bad = set(value) - known[section]
            if bad:
                raise ValidationError(f"unknown keys in [{section}]: {sorted(bad)}")
        else:
            if section not in known[""]:
                raise ValidationError(f"unknown top-level key {section!r}")
    return cfg


def _apply_overrides(cfg: dict, sets: list) -> dict:
    for item in sets or []:
        if "=" not in item:
            raise ValidationError(f"--set expects section.key=value, got {item!r}")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return cfg


def _schema_from_config(section: dict) -> CsvSchema:
    responses = section.get("responses")
    if not responses:
        raise ValidationError("[input] responses = {column = kind, ...} is required")
    cutpoints = section.get("count_cutpoints", {})
    kinds = {}
    for name, kind_text in responses.items():
        kinds[name] = VariableKind.parse(kind_text, cutpoints.get(name))
    covs = section.get("covariates")
    return CsvSchema(
        response_kinds=kinds,
        missing_token=section.get("missing_token", "NA"),
        covariates=tuple(covs) if covs else None,
    )


def _expand_prior_matrix(value, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1:
        if arr.size != dim:
            raise ValidationError(f"{name}: expected {dim} diagonal entries")
        return np.diag(arr)
    return arr


def _priors_from_config(section: dict, data, G: int) -> PriorConfig:
    base = PriorConfig.from_data(data, G)
    if not section:
        return base
    p, q = data.p, data.q
    return PriorConfig(
        a=float(section.get("a", base.a)),
        S_alpha=_expand_prior_matrix(section.get("s_alpha", base.S_alpha), q, "s_alpha"),
        S_B1=_expand_prior_matrix(section.get("s_b1", base.S_B1), q, "s_b1"),
        S_B2=_expand_prior_matrix(section.get("s_b2", base.S_B2), p, "s_b2"),
        S_b=float(section.get("s_b", base.S_b)),
        nu=float(section.get("nu", base.nu)),
        S_Sigma=_expand_prior_matrix(section.get("s_sigma", base.S_Sigma), p, "s_sigma"),
    )


def _chain_from_config(section: dict, model: dict) -> tuple:
    cfg = ChainConfig(
        burn_in=int(section.get("burn_in", 500)),
        keep=int(section.get("keep", 1500)),
        thin=int(section.get("thin", 1)),
        m_imputations=int(section.get("m_imputations", 10)),
        init_strategy=model.get("init", "kmeans"),
    )
    return int(model.get("g", 7)), cfg


def _log(msg: str):
    print(f"[miximpute] {msg}", file=sys.stderr, flush=True)


def _resolved(cfg: dict, seed: int) -> dict:
    out = json.loads(json.dumps(cfg, default=str))
    out["seed"] = seed
    return out


def cmd_impute(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, "impute"), args.set)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out_dir = Path(args.out or cfg.get("out", "out"))
    data = read_dataset(cfg["input"]["path"], _schema_from_config(cfg["input"]))
    G, chain_cfg = _chain_from_config(cfg.get("chain", {}), cfg.get("model", {}))
    priors = _priors_from_config(cfg.get("priors", {}), data, G)
    _log(f"impute: n={data.n} p={data.p} q={data.q} G={G} "
         f"chain={chain_cfg.burn_in}+{chain_cfg.keep}")
    t0 = time.time()
    draws, diag = run_chain(data, G, priors, chain_cfg, RngStream(seed))
    _log(f"chain done in {time.time()-t0:.1f}s; non-null avg {diag.non_null_avg:.2f}")
    draws.validate_against(data)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_imputations(draws, out_dir, seed=seed, config=_resolved(cfg, seed))
    diag.write_csv(out_dir / "diagnostics.csv")
    with open(out_dir / "diagnostics.json", "w") as fh:
        json.dump(diag.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(f"wrote {draws.m} completed datasets to {out_dir}")
    return 0


def parse_loss(text: str, data) -> object:
    """mean:COL | quantile:COL:TAU | quadreg:YCOL:XCOL (columns by name)."""
    parts = text.split(":")
    names = list(data.y_names)

    def col(tok):
        if tok in names:
            return names.index(tok)
        raise ValidationError(f"unknown response column {tok!r} (have {names})")

    if parts[0] == "mean" and len(parts) == 2:
        return MeanLoss(col(parts[1]))
    if parts[0] == "quantile" and len(parts) == 3:
        tau = float(parts[2])
        return QuantileLoss(col(parts[1]), tau)
    if parts[0] == "quadreg" and len(parts) == 3:
        return QuadraticRegressionLoss(col(parts[1]), col(parts[2]))
    raise ValidationError(f"cannot parse loss spec {text!r}")


def cmd_ilb(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, "ilb"), args.set)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out_dir = Path(args.out or cfg.get("out", "out"))
    data = read_dataset(cfg["input"]["path"], _schema_from_config(cfg["input"]))
    ilb_cfg = cfg.get("ilb", {})
    B = int(ilb_cfg.get("b", 500))
    level = float(ilb_cfg.get("level", 0.95))
    ilb_thin = int(ilb_cfg.get("thin", 10))
    mode = str(ilb_cfg.get("mode", "posterior"))
    if mode not in ("posterior", "fixed"):
        raise ValidationError(f"ilb mode must be 'posterior' or 'fixed', got {mode!r}")
    loss = parse_loss(str(ilb_cfg.get("loss", "mean:" + data.y_names[0])), data)
    G, chain_cfg = _chain_from_config(cfg.get("chain", {}), cfg.get("model", {}))
    if "keep" not in cfg.get("chain", {}):
        # size the inline chain so replicates sit ilb_thin kept sweeps apart
        chain_cfg = ChainConfig(
            burn_in=chain_cfg.burn_in, keep=B * ilb_thin, thin=chain_cfg.thin,
            m_imputations=chain_cfg.m_imputations,
            init_strategy=chain_cfg.init_strategy,
        )
    priors = _priors_from_config(cfg.get("priors", {}), data, G)
    stream = RngStream(seed)
    if np.any(data.delta == 0):
        _log(f"ilb: fitting imputation chain (G={G}) for B={B} replicates ({mode} mode)")
        _, _, snaps = run_chain(
            data, G, priors, chain_cfg, stream.child(0),
            n_snapshots=min(B, chain_cfg.keep // chain_cfg.thin),
            return_snapshots=True,
        )
        if mode == "fixed":
            snaps = snaps[-1:]  # impute from a single posterior draw of the model
        source = SnapshotSource(snaps, data, B)
    else:
        from .ilb import CompleteDataSource

        _log("ilb: data complete, bootstrap only")
        source = CompleteDataSource(data)
    res = ilb_run(source, data, loss, B, stream.child(1))
    out_dir.mkdir(parents=True, exist_ok=True)
    res.write_csv(out_dir / "ilb_samples.csv")
    res.write_json(out_dir / "ilb_summary.json", level)
    _log(f"ilb: point estimate {np.round(res.point_estimate, 4).tolist()}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, "simulate"), args.set)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out_dir = Path(args.out or cfg.get("out", "out"))
    s = cfg.get("simulate", {})
    spec = ScenarioSpec(
        scenario_id=int(s.get("scenario", 1)),
        outcome_mode=str(s.get("outcome_mode", "continuous")),
        N=int(s.get("population", 10_000)),
        n=int(s.get("sample", 500)),
    )
    sim_cfg = SimConfig(
        G=int(s.get("g", 7)),
        chain=ChainConfig(
            burn_in=int(s.get("burn_in", 500)),
            keep=int(s.get("keep", 1000)),
            thin=int(s.get("thin", 1)),
            m_imputations=int(s.get("m_imputations", 10)),
        ),
        B=int(s.get("b", 500)),
        level=float(s.get("level", 0.95)),
        run_ilb=bool(s.get("ilb", True)),
        run_baselines=bool(s.get("baselines", True)),
    )
    R = int(s.get("replications", 200))
    threads = args.threads or int(cfg.get("threads", 1))
    _log(f"simulate: scenario {spec.scenario_id} ({spec.outcome_mode}), "
         f"R={R}, n={spec.n}, B={sim_cfg.B}, threads={threads}")
    t0 = time.time()
    done = [0]

    def progress(rec):
        done[0] += 1
        if done[0] % 10 == 0 or done[0] == R:
            _log(f"replication {done[0]}/{R} ({time.time()-t0:.0f}s)")

    report = run_replications(spec, R, sim_cfg, RngStream(seed), threads=threads,
                              progress=progress)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "replications.csv")
    report.write_json(out_dir / "aggregate.json")
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(_resolved(cfg, seed), fh, indent=2, sort_keys=True)
        fh.write("\n")
    agg = report.aggregate()
    _log(f"coverage {agg['coverage']}, non-null avg {agg['non_null_avg']:.2f}")
    return 0


def cmd_check(args) -> int:
    from . import checks

    cfg = _apply_overrides(_load_config(args.config, "check"), args.set)
    section = cfg.get("check", {})
    suites = args.suite or section.get("suite", "all")
    names = list(checks.SUITES) if suites == "all" else [s.strip() for s in suites.split(",")]
    fast = args.fast or bool(section.get("fast", False))
    results = []
    if args.mutate:
        with checks.mutated(args.mutate):
            results = checks.run_suite(names, fast=fast)
    else:
        results = checks.run_suite(names, fast=fast)
    failed = 0
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="miximpute",
        description="Bayesian multiple imputation with sparse conditional "
                    "Gaussian mixtures and loss-based bootstrap inference.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="master RNG seed")
        p.add_argument("--threads", type=int, default=None, help="worker parallelism")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted sections)")

    p = sub.add_parser("impute", help="fit the mixture and emit completed datasets")
    shared(p)
    p.set_defaults(fn=cmd_impute)

    p = sub.add_parser("ilb", help="loss-based bootstrap inference on imputed data")
    shared(p)
    p.set_defaults(fn=cmd_ilb)

    p = sub.add_parser("simulate", help="scenario/replication harness")
    shared(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("check", help="run the statistical verification suites")
    shared(p)
    p.add_argument("--suite", help="comma list: samplers,prior,conjugate,geweke,gibbs")
    p.add_argument("--fast", action="store_true", help="reduced sizes for smoke runs")
    p.add_argument("--mutate", help="test fixture: plant a known bug (e.g. alpha-sign)")
    p.set_defaults(fn=cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        _fail(1, args.command, str(exc))
    except MiximputeError as exc:
        _fail(2, args.command, str(exc))
    except KeyError as exc:
        _fail(1, args.command, f"missing required config entry {exc}")
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
