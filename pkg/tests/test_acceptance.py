"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single ``[PASS]``/``[FAIL]`` line (also repeated in the
terminal summary) before asserting.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from zigzag import analysis as an
from zigzag import experiments as ex
from zigzag.cli import run
from zigzag.core import PhaseState, validate_skeleton
from zigzag.models import CauchyModel, GaussianMeanModel, ProductGaussianModel, synth_gaussian, synth_logistic, synth_nonident
from zigzag.poisson import AffinePlus, Constant, HorizonConst, MinConstAffine, first_event_time, integrated_rate
from zigzag.samplers import (
    MaxEpochs,
    MaxTime,
    find_reference,
    simulate_zz,
    simulate_zz_cv,
    simulate_zz_hessian,
    simulate_zz_ss,
)

from conftest import VERDICTS


def verdict(num, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} ({detail})"
    VERDICTS.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------


def test_criterion_1_stationarity():
    t0 = time.perf_counter()
    model = GaussianMeanModel.standard_normal(100, seed=0)
    ref = find_reference(model)
    start = PhaseState([0.0], [1])
    runners = {
        "zz": lambda s: simulate_zz(model, start, MaxEpochs(1e4), seed=s, record="switches"),
        "zz-hessian": lambda s: simulate_zz_hessian(model, start, MaxEpochs(1e4), seed=s, record="switches"),
        "zz-ss": lambda s: simulate_zz_ss(model, start, MaxEpochs(1e4), seed=s, record="switches"),
        "zz-cv": lambda s: simulate_zz_cv(model, ref, None, MaxEpochs(1e4), seed=s, record="switches"),
    }
    passes = {}
    for name, go in runners.items():
        k = 0
        for seed in range(10):
            rep = go(seed)
            assert validate_skeleton(rep.skeleton)[0]
            x = an.sample_trajectory(rep.skeleton, 10_000, burn_in=0.1).coord(0)
            k += stats.kstest(x, "norm").pvalue > 1e-3
        passes[name] = int(k)
    wall = time.perf_counter() - t0
    ok = all(k >= 9 for k in passes.values()) and wall < 30
    verdict(1, "stationarity KS", ok, f"passing seeds {passes}, {wall:.1f}s")


def test_criterion_2_conjugate_moments(tmp_path):
    t0 = time.perf_counter()
    cfg = ex.make_config(["experiment=gaussian-mse"])
    doc = run(cfg, tmp_path)
    wall = time.perf_counter() - t0
    summ = doc["summary"]
    worst = {}
    for method in ("zz", "zz-cv", "zz-socv"):
        for n in (100, 10_000):
            row = summ[f"{method}/n={n}"]
            worst[f"{method}/{n}"] = round(max(abs(row["final_m1_z"]), abs(row["final_m2_z"])), 2)
    sgld = {n: summ[f"sgld/n={n}"]["last_decade_m2_ratio"] for n in (100, 10_000)}
    cv = {n: summ[f"zz-cv/n={n}"]["last_decade_m2_ratio"] for n in (100, 10_000)}
    ok = (all(z <= 4 for z in worst.values()) and all(r < 2 for r in sgld.values())
          and all(r > 5 for r in cv.values()) and wall < 300)
    detail = (f"max |z| {worst}; last-decade MSE drop sgld {({k: round(v, 2) for k, v in sgld.items()})}, "
              f"zz-cv {({k: round(v, 2) for k, v in cv.items()})}; {wall:.0f}s")
    verdict(2, "conjugate moments and SGLD plateau", ok, detail)


def test_criterion_3_super_efficiency(tmp_path):
    t0 = time.perf_counter()
    cfg = ex.make_config(["experiment=logistic-scaling"])
    doc = run(cfg, tmp_path)
    wall = time.perf_counter() - t0
    slopes = {m: doc["summary"][m].get("slope", math.nan) for m in cfg.methods}
    ok = (0.7 <= slopes["zz-cv"] <= 1.1
          and all(-0.25 <= slopes[m] <= 0.25 for m in ("zz-hessian", "zz-ss", "mala"))
          and wall < 1800)
    verdict(3, "ESS-per-epoch slopes", ok, f"slopes { {k: round(v, 3) for k, v in slopes.items()} }, {wall:.0f}s")


def test_criterion_4_thinning_and_no_violations():
    rng = np.random.default_rng(2024)
    families = {
        "Constant": lambda: Constant(rng.uniform(0, 20)),
        "AffinePlus": lambda: AffinePlus(rng.uniform(-20, 20), rng.uniform(-20, 20)),
        "MinConstAffine": lambda: MinConstAffine(rng.uniform(0, 20), rng.uniform(-20, 20), rng.uniform(-20, 20)),
        "HorizonConst": lambda: HorizonConst(rng.uniform(0, 20), rng.uniform(0.01, 20)),
    }
    worst, tried = 0.0, {}
    for name, make in families.items():
        finite = tried[name] = 0
        while finite < 1000:
            bound, u = make(), rng.uniform(1e-12, 1)
            t = first_event_time(bound, u)
            tried[name] += 1
            if isinstance(t, float):
                finite += 1
                worst = max(worst, abs(integrated_rate(bound, t) + math.log(u)))
    # long runs on every model; a violation would raise and fail the test
    proposals = 0
    g = synth_gaussian(1000, seed=1)
    proposals += simulate_zz_ss(g, PhaseState([g.posterior_mean], [1]), MaxEpochs(300), seed=1,
                                record="switches").proposals
    lg = synth_logistic(1000, 2, seed=2)
    ref = find_reference(lg)
    proposals += simulate_zz_cv(lg, ref, None, MaxEpochs(300), seed=2, record="switches").proposals
    proposals += simulate_zz_ss(lg, PhaseState(ref.xi_star, [1, 1]), MaxEpochs(300), seed=2,
                                record="switches").proposals
    proposals += simulate_zz_hessian(lg, PhaseState(ref.xi_star, [1, 1]), MaxEpochs(2e4), seed=2,
                                     record="switches").proposals
    nl = synth_nonident(1000, seed=3)
    nref = find_reference(nl, init=[-1.0, 0.5])
    proposals += simulate_zz_cv(nl, nref, None, MaxEpochs(300), seed=3, record="switches").proposals
    proposals += simulate_zz(nl, PhaseState(nref.xi_star, [1, 1]), MaxEpochs(1e4), seed=3,
                             record="switches").proposals
    ok = worst <= 1e-10 and proposals >= 10**6
    verdict(4, "inversion and bound validity", ok,
            f"max |H(G(y)) - y| = {worst:.2e} over 1000 finite event times per family (draws {tried}); {proposals} proposals, 0 violations")


def test_criterion_5_cauchy_return():
    ts = np.linspace(0.0, 200.0, 2_000_001)
    hits, times = 0, []
    for seed in range(100):
        rep = simulate_zz(CauchyModel(), PhaseState([100.0], [-1]), MaxTime(200.0), bounds=lambda s: [Constant(1.0)],
                          seed=seed)
        x = an.positions_at(rep.skeleton, ts)[:, 0]
        inside = np.abs(x) <= 10.0
        t_hit = ts[np.argmax(inside)] if inside.any() else math.inf
        times.append(t_hit)
        hits += 90 <= t_hit <= 115
    verdict(5, "Cauchy first passage", hits >= 95,
            f"{hits}/100 runs in [90, 115]; passage times {min(times):.3f}..{max(times):.3f}")


def test_criterion_6_switch_point_bias():
    wins = 0
    for seed in range(10):
        rep = simulate_zz(ProductGaussianModel([1.0]), PhaseState([0.0], [1]), MaxTime(10_000.0), seed=seed,
                          record="switches")
        sw = np.abs(an.switch_positions(rep.skeleton)[:, 0]).mean()
        wins += int(sw > an.mean_abs_time_average(rep.skeleton))
    verdict(6, "switch points biased to the tails", wins >= 9, f"{wins}/10 seeds")


def test_criterion_7_nonidentifiable(tmp_path):
    cfg = ex.make_config(["experiment=nonidentifiable", "write_samples=false", "write_skeleton=false"])
    doc = run(cfg, tmp_path)
    summ = doc["summary"]
    s = {m: summ[f"{m}/n=1000"]["s_mean"][0] for m in ("zz", "zz-cv")}
    sg = summ["sgld/n=1000"]
    sgld_mean = sg["s_mean"][0]
    sgld_bad = sg["diverged"][0] or sgld_mean is None or not (-1.3 <= sgld_mean <= -0.7)
    ok = all(-1.3 <= v <= -0.7 for v in s.values()) and sgld_bad
    verdict(7, "non-identifiable model", ok,
            f"mean xi1+xi2^2 zz {s['zz']:.3f}, zz-cv {s['zz-cv']:.3f}; "
            f"sgld at {cfg.sgld_step_factor:g}x stable step diverged={sg['diverged'][0]} mean={sgld_mean}")


def test_criterion_8_property_suites():
    # the module suites hold the full checks; this re-runs one instance of each
    import test_analysis
    import test_core
    import test_models
    import test_samplers

    checks = {
        "gradient vs finite differences": lambda: [test_models.test_gradient_matches_finite_differences(m)
                                                   for m in test_models.MODELS],
        "Hessian domination": test_models.test_logistic_hessian_domination,
        "Lipschitz": lambda: [test_models.test_lipschitz_oracle(m) for m in ("gaussian", "product", "logistic")],
        "sub-sampling rate identity": test_samplers.test_subsampling_switch_rate_matches_exact_sum,
        "pruning invariance": lambda: (test_analysis.test_pruning_invariance(),
                                       test_analysis.test_sampler_output_pruning_invariance()),
        "estimator agreement": lambda: test_analysis.test_estimator_agreement(0),
        "skeleton flow": test_core.TestValidate().test_random_skeletons_valid,
        "rate identity": lambda: [test_core.TestCanonicalRate().test_rate_identity(m) for m in test_core.all_models()],
        "estimator consistency": lambda: [test_core.test_estimator_consistency(m) for m in test_core.all_models()[2:]],
    }
    failed = []
    for name, fn in checks.items():
        try:
            fn()
        except AssertionError:
            failed.append(name)
    verdict(8, "property suites", not failed, f"{len(checks) - len(failed)}/{len(checks)} groups pass"
            + (f"; failing {failed}" if failed else ""))
