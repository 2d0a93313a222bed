"""Command-line entry point: ``llp-lab {diagnose,tournament,train,train-online}``.

Exit codes: 0 pass, 1 configuration error, 2 invariant failure,
3 algorithmic failure (empty pool, every run diverged).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bagging import drifting_stream, load_csv, load_distribution_json, logistic_task
from .core import (
    BINARY_LOSSES,
    ConfigError,
    FiniteHypothesisClass,
    Hypothesis,
    LLPError,
    SyntheticDistribution,
    decompose_binary,
    multiclass_cross_entropy,
)
from .designs import three_point_task, tournament_task
from .estimators import BINARY
from .llp_train.bag_losses import LLP_LOSSES
from .llp_train.loops import LR_GRID, SweepError, TrainConfig, lr_sweep
from .metrics import estimator_sweep
from .tournament import EmptyPoolError, TournamentConfig, draw_split, regrets, run_tournament

log = logging.getLogger("llp_lab")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_ALGORITHM = 0, 1, 2, 3

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

DEFAULTS = {
    "diagnose": {"loss": "log", "k": [2, 8, 64, 512], "n_bags": 20000, "seed": 0, "estimator": "bag_loss",
                 "distribution": None, "hypothesis": None},
    "tournament": {"loss": "square", "k": 8, "m": 5000, "beta": 0.1, "delta": 0.1, "trials": 100, "seed": 0,
                   "distribution": None, "hypotheses": None},
    "train": {"llp_loss": list(LLP_LOSSES), "k": [16, 64, 256, 1024], "repeats": 1, "seed": 0, "epochs": 10,
              "smoothing": 0.1, "batch_examples": 4096, "optimizer": "adam", "model": "linear", "width": 32,
              "stop_grad_estimates": False, "lr_grid": None,
              "data": {"synthetic": {"n": 50000, "test_n": 10000, "dim": 20, "feature_shift": 0.0}}},
    "train-online": {"llp_loss": list(LLP_LOSSES), "k": [16, 64, 256], "repeats": 1, "seed": 0, "smoothing": 0.0,
                     "batch_examples": 4096, "optimizer": "adam", "model": "linear", "width": 32,
                     "stop_grad_estimates": False, "lr_grid": None, "chunk_size": 65536, "p_mode": "chunk",
                     "data": {"drifting": {"n": 262144, "dim": 20, "p_start": 0.2, "p_end": 0.6}}},
}


class InvariantFailure(LLPError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return cfg


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flags that were given."""
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    cfg.update(load_config(args.config))
    for key in ("seed", "k", "loss", "llp_loss", "repeats", "trials", "beta", "estimator", "epochs", "m"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "stop_grad_estimates", False):
        cfg["stop_grad_estimates"] = True
    unknown = set(cfg) - set(DEFAULTS[command])
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    return cfg


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _check_ks(ks) -> list:
    ks = [int(k) for k in _as_list(ks)]
    if not ks or any(k < 1 for k in ks):
        raise ConfigError("bag sizes must be >= 1")
    return ks


def _distribution(spec):
    if isinstance(spec, str):
        if not Path(spec).exists():
            raise ConfigError(f"distribution file {spec} does not exist")
        return load_distribution_json(spec)
    return SyntheticDistribution(spec["support"], spec["marginal"], spec["eta"])


def _write_outputs(out: Path, cfg: dict, records: list, header: list, rows: list, extra: dict = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(_dumps(cfg) + "\n", encoding="utf-8")
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    for name, obj in (extra or {}).items():
        (out / name).write_text(_dumps(obj) + "\n", encoding="utf-8")
    meta = {"created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "llp_lab": __version__,
            "python": platform.python_version(), "numpy": np.__version__}
    (out / "meta.json").write_text(_dumps(meta) + "\n", encoding="utf-8")


# diagnose ---------------------------------------------------------------

def cmd_diagnose(cfg: dict, out: Path) -> int:
    ks = _check_ks(cfg["k"])
    if cfg["estimator"] not in ("bag_loss", "easyllp"):
        raise ConfigError("--estimator must be bag_loss or easyllp")
    if cfg["distribution"] is None:
        dist, h = three_point_task()
    else:
        dist = _distribution(cfg["distribution"])
        if cfg["hypothesis"] is None:
            raise ConfigError("a custom distribution needs a 'hypothesis' table")
        h = Hypothesis(cfg["hypothesis"], "h", kind="probability" if dist.num_classes == 2 else "simplex")
    if dist.num_classes > 2:
        loss = multiclass_cross_entropy(dist.num_classes)
    else:
        if cfg["loss"] not in BINARY_LOSSES:
            raise ConfigError(f"unknown loss {cfg['loss']!r}")
        loss = decompose_binary(cfg["loss"])
    diag = estimator_sweep(dist, loss, h, ks, int(cfg["n_bags"]), int(cfg["seed"]),
                           include_easyllp=cfg["estimator"] == "easyllp")
    checks = {}
    for r in diag.rows:
        if r.estimator == "easyllp":
            continue
        checks[f"unbiased_k{r.k}"] = abs(r.mean - diag.population_loss) <= 3 * r.se
        checks[f"variance_bound_k{r.k}"] = r.var <= 1.05 * r.bound
    main = [r for r in diag.rows if r.estimator != "easyllp"]
    if len(main) >= 2 and main[0].var > 0:
        checks["variance_ratio"] = main[-1].var / main[0].var <= 1.5
    records = [{"estimator": r.estimator, "k": r.k, "mean": r.mean, "var": r.var, "se": r.se, "bound": r.bound,
                "n_bags": r.n_bags} for r in diag.rows]
    out.mkdir(parents=True, exist_ok=True)
    rows = [[r.k, repr(r.mean), repr(r.var), repr(r.se), repr(r.bound), r.estimator] for r in diag.rows]
    summary = {"loss": diag.loss_name, "population_loss": diag.population_loss, "checks": checks,
               "passed": all(checks.values())}
    _write_outputs(out, cfg, records, ["k", "mean", "var", "se", "bound", "estimator_name"], rows,
                   {"invariants.json": summary})
    for name, ok in checks.items():
        log.info("%s: %s", name, "pass" if ok else "FAIL")
    if not summary["passed"]:
        raise InvariantFailure("failed invariants: " + ", ".join(n for n, ok in checks.items() if not ok))
    return EXIT_OK


# tournament -------------------------------------------------------------

def cmd_tournament(cfg: dict, out: Path) -> int:
    beta = float(cfg["beta"])
    if not math.isfinite(beta) or beta <= 0:
        raise ConfigError("beta must be a finite positive number")
    if cfg["loss"] not in BINARY_LOSSES:
        raise ConfigError(f"unknown loss {cfg['loss']!r}")
    k, m, trials = int(_check_ks(cfg["k"])[0]), int(cfg["m"]), int(cfg["trials"])
    if m < 1 or trials < 1:
        raise ConfigError("m and trials must be >= 1")
    if cfg["distribution"] is None:
        dist, H = tournament_task()
    else:
        dist = _distribution(cfg["distribution"])
        if not cfg["hypotheses"]:
            raise ConfigError("a custom distribution needs a 'hypotheses' list")
        H = FiniteHypothesisClass([Hypothesis(h["table"], str(h["id"])) for h in cfg["hypotheses"]])
    loss = decompose_binary(cfg["loss"])
    tcfg = TournamentConfig(beta=beta, loss=loss, delta=float(cfg["delta"]))
    regs = regrets(dist, loss, H)
    best = {H.ids[i] for i in np.flatnonzero(regs == regs.min())}
    records, successes = [], 0
    for t in range(trials):
        S = draw_split(dist, k, m, [int(cfg["seed"]), t], BINARY)
        try:
            res = run_tournament(H, S, tcfg)
        except EmptyPoolError as exc:
            records.append({"trial": t, "winner": None, "empty_pool": True,
                            "eliminations": [list(e) for e in exc.eliminations]})
            _write_outputs(out, cfg, records, ["trials", "successes", "frequency", "target"], [],
                           {"result.json": {"error": "empty pool", "trial": t,
                                            "eliminations": [list(e) for e in exc.eliminations]}})
            log.error("trial %d: every hypothesis was eliminated", t)
            return EXIT_ALGORITHM
        winner_regret = float(regs[H.ids.index(res.winner)])
        ok = winner_regret <= beta and bool(best & set(res.surviving_pool))
        successes += ok
        records.append({"trial": t, "winner": res.winner, "winner_regret": winner_regret,
                        "surviving_pool": res.surviving_pool, "success": ok})
    freq = successes / trials
    target = 1.0 - tcfg.delta
    result = {"trials": trials, "successes": successes, "frequency": freq, "target": target,
              "passed": freq >= target, "winners": [r["winner"] for r in records]}
    _write_outputs(out, cfg, records, ["trials", "successes", "frequency", "target"],
                   [[trials, successes, repr(freq), repr(target)]], {"result.json": result})
    log.info("success frequency %.3f (target %.3f)", freq, target)
    if not result["passed"]:
        raise InvariantFailure(f"success frequency {freq:.3f} below {target:.3f}")
    return EXIT_OK


# train ------------------------------------------------------------------

def _train_data(spec: dict, seed: int, online: bool):
    if "csv" in spec:
        c = spec["csv"]
        path = c["path"] if isinstance(c, dict) else c
        if not Path(path).exists():
            raise ConfigError(f"data file {path} does not exist")
        opts = c if isinstance(c, dict) else {}
        data = load_csv(path, label_column=opts.get("label_column", -1), positive_labels=opts.get("positive_labels"),
                        header=opts.get("header", False), minmax=opts.get("minmax", False))
        if online:
            return data, None
        n_test = max(1, int(round(len(data) * opts.get("test_fraction", 0.2))))
        perm = np.random.default_rng([seed, 7]).permutation(len(data))
        return data.take(np.sort(perm[n_test:])), data.take(np.sort(perm[:n_test]))
    if "synthetic" in spec:
        s = spec["synthetic"]
        n, n_test = int(s.get("n", 50000)), int(s.get("test_n", 10000))
        data = logistic_task(n + n_test, int(s.get("dim", 20)), seed, feature_shift=float(s.get("feature_shift", 0.0)))
        return data.take(np.arange(n)), data.take(np.arange(n, n + n_test))
    if "drifting" in spec:
        s = spec["drifting"]
        return drifting_stream(int(s.get("n", 262144)), int(s.get("dim", 20)), seed,
                               float(s.get("p_start", 0.2)), float(s.get("p_end", 0.6))), None
    raise ConfigError("data must contain one of 'csv', 'synthetic', 'drifting'")


def _run_job(job):
    """One (llp_loss, k, repeat) sweep; runs in a worker process."""
    online, data_spec, data_seed, tcfg, grid, chunk_size, p_mode = job
    train, test = _train_data(data_spec, data_seed, online)
    try:
        if online:
            from .llp_train.loops import train_online
            sweep = lr_sweep(train, tcfg, grid=grid, mode="online",
                             runner=lambda c: train_online(train, c, chunk_size, p_mode))
        else:
            sweep = lr_sweep(train, tcfg, test, grid=grid)
    except SweepError:
        return {"diverged_all": True, "records": [], "best_lr": None, "best": float("nan")}
    records = []
    for lr, res in sweep.results.items():
        records.extend(res.history)
    return {"diverged_all": False, "records": records, "best_lr": sweep.best_lr, "best": sweep.best_metric,
            "diverged": sum(r.state.diverged for r in sweep.results.values())}


def cmd_train(cfg: dict, out: Path, online: bool = False, workers: int = None) -> int:
    losses = _as_list(cfg["llp_loss"])
    for name in losses:
        if name not in LLP_LOSSES:
            raise ConfigError(f"unknown LLP loss {name!r}")
    ks = _check_ks(cfg["k"])
    repeats = int(cfg["repeats"])
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    grid = [float(v) for v in cfg["lr_grid"]] if cfg["lr_grid"] else [float(v) for v in LR_GRID]
    seed = int(cfg["seed"])
    _train_data(cfg["data"], seed, online)  # validates the data spec before any work starts
    jobs, keys = [], []
    for rep in range(repeats):
        for name in losses:
            for k in ks:
                tcfg = TrainConfig(llp_loss=name, bag_size=k, smoothing=float(cfg["smoothing"]),
                                   batch_examples=max(int(cfg["batch_examples"]), 2 * k),
                                   epochs=1 if online else int(cfg["epochs"]), optimizer=cfg["optimizer"],
                                   seed=seed + rep, model=cfg["model"], width=int(cfg["width"]),
                                   stop_grad_estimates=bool(cfg["stop_grad_estimates"]))
                jobs.append((online, cfg["data"], seed, tcfg, grid, int(cfg.get("chunk_size", 65536)),
                             cfg.get("p_mode", "chunk")))
                keys.append((rep, name, k))
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    all_records, per_repeat = [], {rep: [] for rep in range(repeats)}
    best = {}
    for (rep, name, k), res in zip(keys, results):
        per_repeat[rep].extend(res["records"])
        all_records.extend(res["records"])
        best.setdefault((name, k), []).append(res)
    for rep, recs in per_repeat.items():
        with open(out / f"metrics_repeat{rep}.jsonl", "w", encoding="utf-8") as fh:
            for rec in recs:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    rows = []
    for name in losses:
        for k in ks:
            vals = np.array([r["best"] for r in best[(name, k)] if not r["diverged_all"]])
            n_div = sum(r["diverged_all"] for r in best[(name, k)])
            mean = float(vals.mean()) if vals.size else float("nan")
            sem = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0 if vals.size else float("nan")
            lrs = [r["best_lr"] for r in best[(name, k)] if r["best_lr"] is not None]
            rows.append([name, k, repr(mean), repr(sem), int(vals.size), n_div,
                         repr(float(np.exp(np.mean(np.log(lrs))))) if lrs else "nan"])
    _write_outputs(out, cfg, all_records, ["loss_name", "k", "best_log_loss", "sem", "runs", "runs_all_diverged",
                                           "geo_mean_best_lr"], rows)
    if all(r["diverged_all"] for r in results):
        log.error("every run diverged")
        return EXIT_ALGORITHM
    return EXIT_OK


# entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llp-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its entries")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out", help="output directory (default: out)")
        return p

    d = common(sub.add_parser("diagnose", help="Monte-Carlo mean/variance of the bag estimators"))
    d.add_argument("--k", type=_int_list, help="comma-separated bag sizes")
    d.add_argument("--loss", choices=BINARY_LOSSES)
    d.add_argument("--estimator", choices=["bag_loss", "easyllp"], help="easyllp adds the contrast rows")

    t = common(sub.add_parser("tournament", help="repeated MoM tournaments on a synthetic problem"))
    t.add_argument("--k", type=int)
    t.add_argument("--m", type=int, help="bags per split")
    t.add_argument("--loss", choices=BINARY_LOSSES)
    t.add_argument("--beta", type=float)
    t.add_argument("--trials", type=int)

    for name, helptext in (("train", "batch LLP training with a learning-rate sweep"),
                           ("train-online", "progressive-validation LLP training")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--k", type=_int_list, help="comma-separated bag sizes")
        p.add_argument("--llp-loss", dest="llp_loss", type=_str_list, help="comma-separated subset of "
                       + ",".join(LLP_LOSSES))
        p.add_argument("--repeats", type=int)
        p.add_argument("--workers", type=int, help="worker processes (default: logical cores)")
        p.add_argument("--stop-grad-estimates", action="store_true")
        if name == "train":
            p.add_argument("--epochs", type=int)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("LLP_LAB_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    try:
        cfg = resolve(args.command, args)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, out)
        if args.command == "tournament":
            return cmd_tournament(cfg, out)
        return cmd_train(cfg, out, online=args.command == "train-online", workers=args.workers)
    except InvariantFailure as exc:
        print(f"llp-lab: invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"llp-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LLPError as exc:
        print(f"llp-lab: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM


if __name__ == "__main__":
    sys.exit(main())
