"""Acceptance criteria 1-12.

Each criterion is a function returning ``(passed, detail)``. Under pytest every
criterion is one test and the terminal summary lists one PASS/FAIL line per
criterion; ``python3 tests/test_acceptance.py [N ...]`` prints the same lines
directly.
"""

import contextlib
import io
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from infomax import nn
from infomax.auxiliary import (
    abs_coord_loss, rel_coord_loss, sample_occlusion_mask, uniform_baseline,
)
from infomax.cli import run as cli_run
from infomax.data import GaussianPairSpec, ProbeSpec, ToyImageSpec, gaussian_stream, sample_toy_images, train_probe
from infomax.dim import (
    DimEncoder, DimHyperparams, DimModel, dim_train_step, global_mi_objective, local_mi_objective, make_scorer, train_dim,
)
from infomax.discrete import monotonicity_experiment
from infomax.estimators import (
    NegativeSamplingConfig, ScoreMatrix, infonce_estimate, mi_lower_bound, mine_fit, zero_mi_value,
)
from infomax.ndm import NdmConfig, dependent_pairs, duplicated_uniform, independent_uniform, ndm_estimate
from infomax.serialization import save_tensor
from infomax.suite import DIFFERENTIABLE_OPS, SCORER_KINDS, run_suite
from infomax.tensor import Tensor

RESULTS: dict[int, tuple[bool, str, float]] = {}
CRITERIA = {}


def criterion(n, budget=None):
    """Register criterion ``n``; ``budget`` is its runtime limit in seconds, if it has one."""
    def wrap(fn):
        CRITERIA[n] = (fn, budget)
        return fn
    return wrap


def evaluate(n):
    fn, budget = CRITERIA[n]
    t0 = time.perf_counter()
    passed, detail = fn()
    elapsed = time.perf_counter() - t0
    if budget is not None and elapsed > budget:
        passed = False
        detail += f"; over the {budget:.0f} s budget"
    RESULTS[n] = (bool(passed), detail, elapsed)
    return RESULTS[n]


def line(n):
    passed, detail, elapsed = RESULTS[n]
    return f"{'PASS' if passed else 'FAIL'} criterion {n:2d}: {detail} ({elapsed:.1f} s)"


# -- shared fixtures ----------------------------------------------------------

MINE = dict(critic_kind="concat", hidden=(64, 64), steps=500, batch_size=64, lr=1e-3)


def _mine(corr, kind, seed, shuffled=False, **extra):
    spec = GaussianPairSpec(1, corr)
    return mine_fit(gaussian_stream(spec, shuffled), None, kind, rng=np.random.default_rng(seed), **{**MINE, **extra})


# -- criteria -----------------------------------------------------------------

@criterion(1, budget=60)
def gradient_suite():
    rows = run_suite(seeds=20, tol=1e-4)
    targets = DIFFERENTIABLE_OPS + list(SCORER_KINDS)
    failed = sorted({r.target for r in rows if not r.passed})
    worst = max(r.max_rel_error for r in rows)
    complete = {r.target for r in rows} == set(targets) and len(rows) == 20 * len(targets)
    return complete and not failed, (f"{len(targets)} targets x 20 seeds, worst rel err {worst:.2e}"
                                     + (f", failed: {', '.join(failed)}" if failed else ""))


@criterion(2, budget=180)
def analytic_mi_recovery():
    corrs = (0.3, 0.6, 0.9)
    truth = [GaussianPairSpec(1, c).mutual_information for c in corrs]
    est = {k: [_mine(c, k, seed=i) for i, c in enumerate(corrs)] for k in ("dv", "jsd", "infonce")}
    mi = {k: [r.mi for r in v] for k, v in est.items()}
    assert all(r.K == 64 for r in est["infonce"])
    close = all(abs(m - t) <= 0.15 for k in ("dv", "infonce") for m, t in zip(mi[k], truth))
    mono = all(a < b for v in mi.values() for a, b in zip(v, v[1:]))
    fmt = lambda v: "/".join(f"{x:.3f}" for x in v)
    return close and mono, (f"truth {fmt(truth)}; dv {fmt(mi['dv'])}; infonce(K=64) {fmt(mi['infonce'])}; "
                            f"jsd {fmt(mi['jsd'])}; monotone={mono}")


@criterion(3, budget=120)
def zero_mi_floors():
    parts, ok = [], True
    for i, kind in enumerate(("dv", "jsd", "infonce")):
        r = _mine(0.9, kind, seed=10 + i, shuffled=True)
        floor = zero_mi_value(kind, r.K)
        ok &= abs(r.estimate - floor) <= 0.05
        parts.append(f"{kind} {r.estimate:.4f} vs {floor:.4f}")
    return ok, "; ".join(parts)


@criterion(4)
def infonce_cap():
    r = np.random.default_rng(4)
    worst = -math.inf
    for i in range(10_000):
        n, K = int(r.integers(1, 9)), int(r.integers(2, 130))
        s = r.normal(scale=float(r.choice([0.1, 1.0, 10.0, 100.0])), size=(n, K))
        if i % 4 == 0:
            s[:, 0] += 1e3          # overwhelming positives push toward the cap
        raw = infonce_estimate(ScoreMatrix(Tensor(s))).item()
        worst = max(worst, mi_lower_bound("infonce", raw, K) - math.log(K))
    return worst <= 1e-9, f"max(estimate - ln K) over 10^4 matrices = {worst:.3e}"


@criterion(5, budget=120)
def jsd_mi_monotonicity():
    res = monotonicity_experiment((8, 16, 32, 64, 128), 1000, 0.5, np.random.default_rng(5))
    rhos = [row[1] for row in res.summary]
    ok = all(not row[3] and row[1] >= 0.9 for row in res.summary)
    return ok, "Spearman rho " + ", ".join(f"{s}:{rho:.4f}" for s, rho in zip((8, 16, 32, 64, 128), rhos))


@criterion(6)
def local_equals_global_at_one_location():
    worst = 0.0
    for scorer in SCORER_KINDS:
        for est in ("dv", "jsd", "infonce"):
            r = np.random.default_rng(6)
            # a 4x4 input through two stride-2 convs leaves a single location
            enc = DimEncoder(1, 4, widths=(8, 16), hidden=12, out_dim=6, rng=r, dtype=np.float64)
            assert enc.M == 1
            sc = make_scorer(scorer, 16, 6, 10, rng=r, dtype=np.float64)
            x = Tensor(r.normal(size=(6, 1, 4, 4)))
            g = global_mi_objective(enc, sc, x, est, rng=np.random.default_rng(0)).item()
            l = local_mi_objective(enc, sc, x, est, rng=np.random.default_rng(0)).item()
            worst = max(worst, abs(g - l))
    return worst <= 1e-6, f"max |local - global| = {worst:.2e} over 2 scorers x 3 estimators"


@criterion(7)
def negative_count_sensitivity():
    counts = (1, 4, 16, 64)
    extra = dict(batch_size=72)
    nce = [_mine(0.9, "infonce", 70 + i, negatives=NegativeSamplingConfig(n), **extra).mi for i, n in enumerate(counts)]
    jsd = [_mine(0.9, "jsd", 80 + i, negatives=NegativeSamplingConfig(n), **extra).estimate
           for i, n in enumerate(counts)]
    drop, spread = nce[-1] - nce[0], max(jsd) - min(jsd)
    fmt = lambda v: "/".join(f"{x:.3f}" for x in v)
    return drop >= 0.2 and spread <= 0.1, (f"infonce {fmt(nce)} (gain {drop:.3f}); jsd {fmt(jsd)} "
                                           f"(spread {spread:.3f})")


@criterion(8, budget=180)
def prior_matching():
    r = np.random.default_rng(0)
    x_train, _ = sample_toy_images(ToyImageSpec(), r, 4000)
    x_eval, _ = sample_toy_images(ToyImageSpec(), r, 2000)
    m = DimModel(DimHyperparams(0, 1, 1.0, "infonce", "encode-dot"), scorer_width=256,
                 rng=np.random.default_rng(1))
    sched = nn.ExponentialDecay(0.5, 800)
    train_dim(m, x_train, 2000, 32, 3e-4, sched, rng=r, prior_lr=3e-3, betas=(0.5, 0.999))
    f = m.transform(x_eval)
    ks = np.array([stats.kstest(f[:, j], "uniform").statistic for j in range(f.shape[1])])
    mu = f.mean(axis=0)
    ok = f.shape[1] == 64 and ks.max() <= 0.15 and mu.min() >= 0.4 and mu.max() <= 0.6
    return ok, f"max KS {ks.max():.3f}, mean KS {ks.mean():.3f}, dim means in [{mu.min():.3f}, {mu.max():.3f}]"


@criterion(9, budget=300)
def shared_information():
    gaps = []
    for seed in range(3):
        r = np.random.default_rng(seed)
        x_train, _ = sample_toy_images(ToyImageSpec(), r, 4000)
        x_eval, y_eval = sample_toy_images(ToyImageSpec(), r, 2000)
        m = DimModel(DimHyperparams.preset("dim-l", estimator="infonce", scorer="encode-dot"), scorer_width=256,
                     rng=np.random.default_rng(100 + seed))
        m.calibrate_batch_norm(x_train)
        spec = ProbeSpec(epochs=30)
        rand = train_probe(m.transform(x_eval), y_eval, spec, np.random.default_rng(7))
        train_dim(m, x_train, 800, 32, 1e-3, rng=r)
        dim = train_probe(m.transform(x_eval), y_eval, spec, np.random.default_rng(7))
        gaps.append((rand, dim))
    mean_gap = 100 * np.mean([d - a for a, d in gaps])
    return mean_gap >= 15, (f"DIM(L) vs random probe accuracy "
                            + ", ".join(f"{d:.3f}/{a:.3f}" for a, d in gaps) + f"; mean gap {mean_gap:.1f} points")


@criterion(10, budget=120)
def ndm_sanity():
    cfg = NdmConfig()
    ind = ndm_estimate(independent_uniform(8), cfg, np.random.default_rng(0)).raw
    dup = ndm_estimate(duplicated_uniform, cfg, np.random.default_rng(0)).raw
    sweep = [ndm_estimate(dependent_pairs(rho), cfg, np.random.default_rng(0)).raw for rho in (0, 0.5, 0.9, 0.99)]
    inc = all(a < b for a, b in zip(sweep, sweep[1:]))
    ok = ind <= 0.1 and dup >= 1.0 and inc
    return ok, (f"independent {ind:.3f}, duplicated {dup:.3f}, rho 0/0.5/0.9/0.99 -> "
                + "/".join(f"{v:.3f}" for v in sweep))


@criterion(11)
def occlusion_and_coordinates():
    r = np.random.default_rng(11)
    h = DimHyperparams(0, 1, 0.1, abs_coord=1, rel_coord=1)
    m = DimModel(h, rng=r)
    m.eval()
    x = Tensor(sample_toy_images(ToyImageSpec(), r, 16)[0])
    local, glob = m.encode(x)
    M = m.encoder.M
    a = abs_coord_loss(m.abs_coord, glob, local).item()
    b = rel_coord_loss(m.rel_coord, glob, local, r).item()
    base_ok = abs(a - uniform_baseline(M)) <= 0.05 and abs(b - uniform_baseline(M, True)) <= 0.05

    masks_ok = True
    for _ in range(1000):
        mk = sample_occlusion_mask(r, (16, 16), 4)
        blocks = mk.blocks().reshape(-1, 16)
        masks_ok &= mk.is_valid() and bool((blocks.min(axis=1) == blocks.max(axis=1)).all())

    xb = sample_toy_images(ToyImageSpec(), np.random.default_rng(3), 8)[0]
    models = [DimModel(DimHyperparams(0, 1, 0.1), scorer_width=32, rng=np.random.default_rng(5)) for _ in range(2)]
    opts = [mm.make_optimizers(1e-3) for mm in models]
    for step in range(3):
        m0 = dim_train_step(models[0], xb, opts[0], np.random.default_rng(step))
        m1 = dim_train_step(models[1], xb, opts[1], np.random.default_rng(step), mask=np.ones_like(xb))
    same_metrics = np.array_equal(np.array(list(m0.values())), np.array(list(m1.values())), equal_nan=True)
    same_state = all(np.array_equal(p, q) for p, q in zip(models[0].state_dict().values(),
                                                           models[1].state_dict().values()))
    ok = base_ok and masks_ok and same_metrics and same_state
    return ok, (f"abs {a:.4f} vs {uniform_baseline(M):.4f}, rel {b:.4f} vs {uniform_baseline(M, True):.4f}; "
                f"1000 masks valid={masks_ok}; all-ones mask bit-identical={same_metrics and same_state}")


def _small_runs(tmp: Path) -> dict:
    r = np.random.default_rng(12)
    y = r.integers(0, 4, size=120)
    save_tensor(tmp / "f.dimt", (np.eye(4)[y] + 0.1 * r.normal(size=(120, 4))).astype(np.float32))
    (tmp / "l.csv").write_text("index,label\n" + "".join(f"{i},{v}\n" for i, v in enumerate(y)))
    feats = [f"data.features={tmp / 'f.dimt'}", f"data.labels={tmp / 'l.csv'}"]
    mi = ["optimizer.steps=20", "model.hidden=16", "optimizer.batch_size=32", "data.corr=0.3, 0.9"]
    return {
        "gradcheck": ["eval.gradcheck_seeds=1"],
        "estimate-mi": mi,
        "negsweep": mi[:3] + ["objective.negative_counts=1, 8"],
        "jsd-kl": ["data.sizes=4, 8", "data.draws=50"],
        "ndm": ["optimizer.steps=20", "model.hidden=16", "data.rhos=0, 0.9"],
        "probe": feats + ["eval.probes=linear, mlp200", "eval.probe_epochs=3"],
        "train-dim": ["optimizer.steps=5", "data.n_train=200", "data.n_eval=100", "optimizer.batch_size=16",
                      "model.scorer_width=32", "eval.probe_epochs=3", "eval.ndm=true", "eval.mine=true",
                      "eval.mine_steps=5", "objective.occlude=true"],
    }


@criterion(12)
def determinism():
    with tempfile.TemporaryDirectory() as d:
        tmp = Path(d)
        runs = _small_runs(tmp)
        mismatched, n_files = [], 0
        for cmd, sets in runs.items():
            outs = []
            for rep in ("a", "b"):
                out = tmp / cmd / rep
                args = [cmd, "--out", str(out), "--seed", "3"] + [a for s in sets for a in ("--set", s)]
                with contextlib.redirect_stdout(io.StringIO()):
                    code = cli_run(args)
                if code != 0:
                    return False, f"{cmd} exited non-zero"
                outs.append(out)
            csvs = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
            n_files += len(csvs)
            mismatched += [f"{cmd}/{p}" for p in csvs if (outs[0] / p).read_bytes() != (outs[1] / p).read_bytes()]
        ok = not mismatched and n_files > 0
        return ok, (f"{len(runs)} subcommands, {n_files} CSVs byte-identical on rerun" if ok
                    else "differing: " + ", ".join(mismatched))


# -- pytest entry -------------------------------------------------------------

@pytest.mark.acceptance
@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n):
    passed, detail, _ = evaluate(n)
    print(line(n))
    assert passed, detail


if __name__ == "__main__":
    chosen = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    for n in chosen:
        evaluate(n)
        print(line(n), flush=True)
    sys.exit(0 if all(RESULTS[n][0] for n in chosen) else 1)
