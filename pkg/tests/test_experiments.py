import math

import numpy as np
import pytest

from zigzag import analysis as an
from zigzag import experiments as ex
from zigzag.core import PhaseState, Skeleton, positions_at
from zigzag.models import synth_gaussian, synth_nonident
from zigzag.samplers import ConfigurationError, MaxEpochs, simulate_zz_ss

from test_core import random_skeleton


def test_defaults_and_aliases():
    cfg = ex.make_config(["experiment=gaussian-mse"], ["n=100", "method=zz"])
    assert cfg.ns == (100,) and cfg.methods == ("zz",)
    assert cfg.replicates == 50 and cfg.fixed_data
    cfg = ex.make_config(["experiment=logistic-scaling"])
    assert cfg.ns == tuple(2**k for k in range(8, 15))


def test_config_text_round_trips():
    cfg = ex.make_config(["experiment=nonidentifiable", "epochs=123.5", "xi0=-2,1"])
    again = ex.make_config(ex.config_text(cfg).splitlines())
    assert again == cfg


def test_bad_boolean():
    with pytest.raises(ConfigurationError):
        ex.make_config(["fixed_data=maybe"])


def test_cells_enumerate_sweep():
    cfg = ex.make_config(["method=zz,zz-cv", "n=10,20", "replicates=3"])
    cs = ex.cells(cfg)
    assert len(cs) == 12 and len({c.key for c in cs}) == 12


def truncated(sk, t):
    """The skeleton cut off at time ``t``."""
    cut = sk.times < t
    end = positions_at(sk, np.array([t]))
    return Skeleton(np.append(sk.times[cut], t), np.vstack([sk.positions[cut], end]),
                    np.vstack([sk.velocities[cut], sk.velocities[cut][-1:]]))


def test_running_moment_matches_integration():
    sk = random_skeleton(np.random.default_rng(0), k=80)
    ts = np.array([0.3, sk.times[10], 0.5 * sk.final_time, sk.final_time])
    for p in (1, 2):
        got = ex.running_moment(sk, 0, p, ts)
        for t, g in zip(ts, got):
            assert g == pytest.approx(an.integrate_moment(truncated(sk, t), 0, p), rel=1e-10)


def test_epoch_times_are_monotone():
    model = synth_gaussian(50, seed=1)
    rep = simulate_zz_ss(model, PhaseState([model.posterior_mean], [1]), MaxEpochs(100), seed=1)
    E = np.logspace(0, 2, 7)
    ts = ex.epoch_times(rep, E)
    assert np.all(np.diff(ts) > 0) and ts[-1] <= rep.skeleton.final_time
    # at a checkpoint the work recorded so far has reached the budget
    k = np.searchsorted(rep.skeleton.times, ts)
    assert np.all(rep.work[k] >= E * 50)


def test_last_decade_ratio():
    E = np.logspace(0, 3, 13)
    assert ex.last_decade_ratio(E, 1.0 / E) == pytest.approx(10.0)
    assert ex.last_decade_ratio(E, np.ones(13)) == 1.0


def test_sgld_step_conventions():
    cfg = ex.make_config(["experiment=gaussian-mse", "sgld_c1=2", "sgld_c2=0.05"])
    model = synth_gaussian(400)
    assert ex.sgld_step(cfg, model, np.zeros(1)) == (2 / 400, 20)
    cfg = ex.make_config(["experiment=nonidentifiable", "sgld_step_factor=1"])
    model = synth_nonident(1000)
    mode = np.array([-1.0, 0.0])
    h, batch = ex.sgld_step(cfg, model, mode)
    assert batch == 10
    assert h == pytest.approx(1 / np.linalg.eigvalsh(model.hessian(mode)).max())


def test_summary_slope():
    cfg = ex.make_config(["experiment=logistic-scaling", "method=zz-cv", "n=100,1000"])
    metrics = [{"method": "zz-cv", "n": 100, "esspe": 1.0}, {"method": "zz-cv", "n": 1000, "esspe": 10.0}]
    assert ex.summarize(cfg, metrics)["zz-cv"]["slope"] == pytest.approx(1.0)


def test_long_rows_flatten_vectors():
    cfg = ex.make_config()
    rows = ex.long_rows(cfg, [{"method": "zz", "n": 5, "seed": 0, "replicate": 0, "m1": [1.0, 2.0], "ok": True}])
    assert {r["metric"] for r in rows} == {"m1[0]", "m1[1]", "ok"}
    assert not any(isinstance(r["value"], str) for r in rows)
    assert math.isfinite(rows[0]["value"])
