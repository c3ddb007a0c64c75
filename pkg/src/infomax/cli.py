"""``infomax`` command line: seeded experiments that emit CSVs and a manifest.

Exit codes: 0 success, 1 runtime failure, 2 configuration error. Failures also
print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import nn
from .config import ConfigError, ExperimentConfig, load_config
from .data import (GaussianPairSpec, ProbeSpec, ToyImageSpec, gaussian_stream, sample_toy_images,
                   train_probe)
from .dim import METRIC_COLUMNS, DimHyperparams, DimModel, train_dim
from .discrete import monotonicity_experiment
from .estimators import NegativeSamplingConfig, mine_fit
from .ndm import NdmConfig, dependent_pairs, ndm_estimate
from .reporting import RunManifest
from .rng import stream
from .serialization import load_labels, load_tensor, save_checkpoint, save_dataset
from .suite import run_suite

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class RunFailed(RuntimeError):
    """A run finished but its own checks failed; outputs are still written."""


def workers() -> int:
    try:
        return max(1, int(os.environ.get("INFOMAX_THREADS", "1")))
    except ValueError:
        return 1


def map_points(fn, points) -> list:
    """Evaluate ``fn(index, point)`` for every sweep point, results in index order."""
    points = list(points)
    n = min(workers(), len(points))
    if n <= 1:
        return [fn(i, p) for i, p in enumerate(points)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, range(len(points)), points))


def _dtype(cfg: ExperimentConfig):
    return np.float64 if cfg["run.dtype"] == "float64" else np.float32


def _schedule(cfg: ExperimentConfig):
    if cfg["optimizer.schedule"] == "exponential":
        return nn.ExponentialDecay(cfg["optimizer.decay_rate"], cfg["optimizer.decay_interval"])
    return None


def _positive(cfg: ExperimentConfig, *keys: str) -> None:
    for key in keys:
        if cfg[key] < 1:
            raise ConfigError(key, "must be at least 1")


# -- subcommands --------------------------------------------------------------

def cmd_gradcheck(cfg: ExperimentConfig, man: RunManifest) -> None:
    _positive(cfg, "eval.gradcheck_seeds")
    rows = run_suite(cfg["eval.gradcheck_seeds"], cfg["eval.gradcheck_tol"])
    man.csv("gradcheck.csv", ["target", "seed", "max_rel_error", "tol", "passed"],
            [(r.target, r.seed, r.max_rel_error, r.tol, r.passed) for r in rows])
    failed = sorted({r.target for r in rows if not r.passed})
    if failed:
        raise RunFailed(f"finite-difference check failed for {', '.join(failed)}")


def _mine_kwargs(cfg: ExperimentConfig, negatives) -> dict:
    return dict(critic_kind=cfg["model.critic"], hidden=cfg["model.hidden"], steps=cfg["optimizer.steps"],
                batch_size=cfg["optimizer.batch_size"], lr=cfg["optimizer.lr0"], schedule=_schedule(cfg),
                negatives=NegativeSamplingConfig(negatives), dtype=_dtype(cfg))


def cmd_estimate_mi(cfg: ExperimentConfig, man: RunManifest) -> None:
    _positive(cfg, "optimizer.steps", "data.dim")
    if cfg["optimizer.batch_size"] < 2:
        raise ConfigError("optimizer.batch_size", "must be at least 2")
    corrs, kinds = cfg["data.corr"], cfg["objective.estimators"]
    specs = []
    for c in corrs:
        try:
            specs.append(GaussianPairSpec(cfg["data.dim"], c))
        except ValueError as exc:
            raise ConfigError("data.corr", str(exc)) from None
    points = [(i, k) for i in range(len(corrs)) for k in kinds]
    seed, shuffled = cfg["run.seed"], cfg["data.shuffled"]

    def run(idx, point):
        i, kind = point
        return mine_fit(gaussian_stream(specs[i], shuffled), None, kind, rng=stream(seed, idx),
                        **_mine_kwargs(cfg, cfg["objective.negatives"]))

    results = dict(zip(points, map_points(run, points)))
    for (i, kind), res in results.items():
        man.csv(f"curves/{kind}_corr{i}.csv", ["step", "estimate", "loss", "lr"], res.curve)
    header = ["corr", "analytic_mi"] + [c for k in kinds for c in (k, f"{k}_mi")] + ["K"]
    rows = []
    for i, spec in enumerate(specs):
        cells = [spec.corr, 0.0 if shuffled else spec.mutual_information]
        for k in kinds:
            cells += [results[(i, k)].estimate, results[(i, k)].mi]
        rows.append(cells + [results[(i, kinds[0])].K])
    man.csv("summary.csv", header, rows)


def cmd_negsweep(cfg: ExperimentConfig, man: RunManifest) -> None:
    _positive(cfg, "optimizer.steps", "data.dim")
    B = cfg["optimizer.batch_size"]
    for n in cfg["objective.negative_counts"]:
        if not 1 <= n <= B - 1:
            raise ConfigError("objective.negative_counts", f"{n} negatives need 1 <= n <= batch_size - 1 = {B - 1}")
    try:
        specs = [GaussianPairSpec(cfg["data.dim"], c) for c in cfg["data.corr"]]
    except ValueError as exc:
        raise ConfigError("data.corr", str(exc)) from None
    points = [(s, k, n) for s in specs for k in cfg["objective.estimators"] for n in cfg["objective.negative_counts"]]
    seed = cfg["run.seed"]

    def run(idx, point):
        spec, kind, n = point
        return mine_fit(gaussian_stream(spec), None, kind, rng=stream(seed, idx), **_mine_kwargs(cfg, n))

    results = map_points(run, points)
    man.csv("negsweep.csv", ["corr", "analytic_mi", "estimator", "negatives", "K", "estimate", "mi_estimate"],
            [(s.corr, s.mutual_information, k, n, r.K, r.estimate, r.mi) for (s, k, n), r in zip(points, results)])


def cmd_jsd_kl(cfg: ExperimentConfig, man: RunManifest) -> None:
    _positive(cfg, "data.draws")
    rates = cfg["data.dropout_rates"]
    for r in rates:
        if not 0 <= r < 1:
            raise ConfigError("data.dropout_rates", f"{r} is outside [0, 1)")
    if cfg["data.draws"] < 2 or any(s < 2 for s in cfg["data.sizes"]):
        raise ConfigError("data.sizes", "sizes and draws must be at least 2")
    seed = cfg["run.seed"]
    results = map_points(lambda i, rate: monotonicity_experiment(cfg["data.sizes"], cfg["data.draws"], rate,
                                                                 stream(seed, i)), rates)
    for rate, res in zip(rates, results):
        suffix = f"_dropout{rate!r}"
        man.csv(f"scatter{suffix}.csv", ["size", "draw_index", "mi_nats", "jsd_nats"], res.scatter)
        man.csv(f"summary{suffix}.csv", ["size", "spearman_rho", "draws", "degenerate"], res.summary)


def _ndm_config(cfg: ExperimentConfig) -> NdmConfig:
    _positive(cfg, "optimizer.steps")
    if cfg["optimizer.batch_size"] < 2:
        raise ConfigError("optimizer.batch_size", "must be at least 2")
    return NdmConfig(cfg["model.hidden"], cfg["optimizer.steps"], cfg["optimizer.batch_size"], cfg["optimizer.lr0"],
                     preprocess=cfg["model.ndm_preprocess"])


def _load_matrix(path: str, key: str) -> np.ndarray:
    if not path:
        raise ConfigError(key, "a DIMT file path is required")
    if not Path(path).is_file():
        raise ConfigError(key, f"no such file: {path}")
    x = load_tensor(path)
    return x.reshape(len(x), -1)


def cmd_ndm(cfg: ExperimentConfig, man: RunManifest) -> None:
    ncfg, seed = _ndm_config(cfg), cfg["run.seed"]
    if cfg["data.features"]:
        z = _load_matrix(cfg["data.features"], "data.features")
        res = ndm_estimate(z, ncfg, stream(seed, 0), _dtype(cfg))
        man.csv("ndm_features.csv", ["source", "ndm_raw", "ndm_clamped", "steps"],
                [(Path(cfg["data.features"]).name, res.raw, res.estimate, ncfg.steps)])
        return
    rhos = cfg["data.rhos"]
    if any(not -1 < r < 1 for r in rhos):
        raise ConfigError("data.rhos", "every rho must lie strictly inside (-1, 1)")
    results = map_points(lambda i, r: ndm_estimate(dependent_pairs(r, cfg["data.dim"]), ncfg, stream(seed, i),
                                                   _dtype(cfg)), rhos)
    man.csv("ndm.csv", ["rho", "ndm_raw", "ndm_clamped", "steps"],
            [(r, res.raw, res.estimate, ncfg.steps) for r, res in zip(rhos, results)])


def _probe_rows(features, labels, cfg: ExperimentConfig, stream_base: int, tag: str) -> list:
    rows = []
    for j, kind in enumerate(cfg["eval.probes"]):
        acc = train_probe(features, labels, ProbeSpec(kind, epochs=cfg["eval.probe_epochs"]),
                          stream(cfg["run.seed"], stream_base + j))
        rows.append((tag, kind, acc, len(labels), features.shape[1]))
    return rows


_PROBE_HEADER = ["encoder", "probe", "accuracy", "n_samples", "n_features"]


def cmd_probe(cfg: ExperimentConfig, man: RunManifest) -> None:
    _positive(cfg, "eval.probe_epochs")
    x = _load_matrix(cfg["data.features"], "data.features")
    if not cfg["data.labels"] or not Path(cfg["data.labels"]).is_file():
        raise ConfigError("data.labels", "a labels CSV path is required")
    y = load_labels(cfg["data.labels"])
    if len(y) != len(x):
        raise ConfigError("data.labels", f"{len(y)} labels for {len(x)} feature rows")
    man.csv("probes.csv", _PROBE_HEADER, _probe_rows(x, y, cfg, 0, Path(cfg["data.features"]).name))


def _dim_hyperparams(cfg: ExperimentConfig) -> DimHyperparams:
    o = cfg.section("objective")
    try:
        return DimHyperparams(o["alpha"], o["beta"], o["gamma"], o["estimator"], o["scorer"], o["occlude"],
                              o["abs_coord"], o["rel_coord"])
    except ValueError as exc:
        raise ConfigError("objective", str(exc)) from None


def cmd_train_dim(cfg: ExperimentConfig, man: RunManifest) -> None:
    h = _dim_hyperparams(cfg)
    _positive(cfg, "optimizer.steps", "data.n_train", "data.n_eval")
    if cfg["optimizer.batch_size"] < 2:
        raise ConfigError("optimizer.batch_size", "must be at least 2")
    seed, dtype = cfg["run.seed"], _dtype(cfg)
    if cfg["data.features"]:
        images = load_tensor(cfg["data.features"]).astype(np.float32)
        if images.ndim == 3:
            images = images[:, None]
        labels = load_labels(cfg["data.labels"]) if cfg["data.labels"] else None
        n_eval = min(cfg["data.n_eval"], len(images) // 2)
        x_train, x_eval = images[:-n_eval], images[-n_eval:]
        y_eval = labels[-n_eval:] if labels is not None else None
    else:
        try:
            spec = ToyImageSpec(cfg["data.image_size"], cfg["data.n_classes"], patch_noise=cfg["data.patch_noise"],
                                pixel_noise=cfg["data.pixel_noise"])
        except ValueError as exc:
            raise ConfigError("data.image_size", str(exc)) from None
        data_rng = stream(seed, 0)
        x_train, _ = sample_toy_images(spec, data_rng, cfg["data.n_train"])
        x_eval, y_eval = sample_toy_images(spec, data_rng, cfg["data.n_eval"])

    m = cfg.section("model")
    model = DimModel(h, image_size=x_train.shape[2], in_channels=x_train.shape[1], widths=m["widths"],
                     hidden=m["encoder_hidden"], out_dim=m["out_dim"], scorer_width=m["scorer_width"],
                     global_scorer_width=m["global_scorer_width"], coord_hidden=m["coord_hidden"],
                     rng=stream(seed, 1), dtype=dtype)
    probe_rows = []
    want_probes = y_eval is not None and cfg["eval.probes"]
    if want_probes and cfg["eval.random_baseline"]:
        model.calibrate_batch_norm(x_train)
        probe_rows += _probe_rows(model.transform(x_eval), y_eval, cfg, 100, "random")

    o = cfg.section("optimizer")
    history = train_dim(model, x_train, o["steps"], o["batch_size"], o["lr0"], _schedule(cfg), stream(seed, 2),
                        NegativeSamplingConfig(cfg["objective.negatives"]), prior_lr=o["prior_lr"],
                        betas=(o["beta1"], o["beta2"]))
    man.csv("metrics.csv", list(METRIC_COLUMNS), [[row[c] for c in METRIC_COLUMNS] for row in history])
    man.add(save_checkpoint(man.out_dir / "checkpoint", model.state_dict()))

    feats = model.transform(x_eval)
    eval_labels = y_eval if y_eval is not None else np.zeros(len(feats), np.int64)
    for p in save_dataset(man.out_dir, feats, eval_labels, stem="features"):
        man.add(p)
    if want_probes:
        probe_rows += _probe_rows(feats, y_eval, cfg, 200, "dim")
        man.csv("probes.csv", _PROBE_HEADER, probe_rows)
    if cfg["eval.ndm"]:
        ncfg = NdmConfig(preprocess=cfg["model.ndm_preprocess"])
        res = ndm_estimate(feats.astype(np.float64), ncfg, stream(seed, 3), dtype)
        man.csv("ndm.csv", ["source", "ndm_raw", "ndm_clamped", "steps"], [("dim", res.raw, res.estimate, ncfg.steps)])
    if cfg["eval.mine"]:
        flat = x_eval.reshape(len(x_eval), -1).astype(np.float64)
        res = mine_fit(flat, feats.astype(np.float64), "dv", hidden=m["hidden"], steps=cfg["eval.mine_steps"],
                       batch_size=o["batch_size"], rng=stream(seed, 4), dtype=dtype)
        man.csv("mine.csv", ["estimator", "estimate", "steps"], [("dv", res.estimate, cfg["eval.mine_steps"])])


COMMANDS = {
    "gradcheck": (cmd_gradcheck, "finite-difference suite over ops and scorers"),
    "estimate-mi": (cmd_estimate_mi, "MINE estimators on Gaussian pairs across a correlation sweep"),
    "jsd-kl": (cmd_jsd_kl, "rank correlation of exact JSD and MI on random discrete joints"),
    "train-dim": (cmd_train_dim, "train a DIM encoder on toy images, then probe its features"),
    "ndm": (cmd_ndm, "neural dependency measure on a dependence sweep or saved features"),
    "probe": (cmd_probe, "linear / MLP probes on saved features"),
    "negsweep": (cmd_negsweep, "estimator value against the number of negatives per positive"),
}


# -- entry point --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit({"error": "usage", "message": message})
        self.exit(EXIT_CONFIG)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="infomax", description="Seeded mutual-information and Deep InfoMax experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help="INI file; defaults apply when omitted")
        sp.add_argument("--seed", type=int, help="overrides run.seed")
        sp.add_argument("--out", help="overrides run.out_dir")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"run.out_dir={Path(args.out).resolve()}")
    try:
        cfg = load_config(args.config, overrides, args.command)
    except ConfigError as exc:
        _emit({"error": "config", "key": exc.key, "message": exc.message})
        return EXIT_CONFIG

    out = Path(cfg["run.out_dir"])
    man = RunManifest(out, args.command, cfg["run.seed"], cfg.snapshot(), cfg.source)
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, man)
    except ConfigError as exc:
        _emit({"error": "config", "key": exc.key, "message": exc.message})
        return EXIT_CONFIG
    except Exception as exc:  # any runtime failure maps to exit 1
        err = {"error": "runtime", "type": type(exc).__name__, "message": str(exc)}
        _emit(err)
        try:
            man.write("failed", err)
        except OSError:
            pass
        return EXIT_RUNTIME
    man.write()
    print(json.dumps({"status": "ok", "out_dir": str(out), "files": len(man.files)}, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
