import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfdreg.core import random_phantoms
from dfdreg.dfd import DfdContext
from dfdreg.exceptions import FormatError, InvalidArgumentError
from dfdreg.filters import eval_filter, verify_filter
from dfdreg.learned import (
    A2_MARGIN,
    MonotoneFilterParams,
    ScaleBlock,
    TrainConfig,
    TrainingPairs,
    build_training_pairs,
    eval_learned,
    filter_from_learned,
    load_params,
    save_params,
    train,
    training_loss,
)
from dfdreg.radon import RadonGeometry, default_n_offsets

KAPPAS = (0.5, 1.0)


def _random_params(seed, knots=9):
    rng = np.random.default_rng(seed)
    kn = np.linspace(-3, 3, knots)
    return MonotoneFilterParams(
        tuple(ScaleBlock(k, kn, rng.normal(scale=0.5, size=knots + 1)) for k in KAPPAS)
    )


def _pairs(fn, n_images=3, size=400, seed=0):
    rng = np.random.default_rng(seed)
    ins = [[rng.normal(scale=2.0, size=size) for _ in range(n_images)] for _ in KAPPAS]
    tgs = [[fn(c) for c in blk] for blk in ins]
    return TrainingPairs(np.array(KAPPAS), ins, tgs)


def test_identity_init():
    p = MonotoneFilterParams.identity(KAPPAS, np.linspace(-2, 2, 5))
    x = np.linspace(-5, 5, 101)
    for k in KAPPAS:
        assert np.allclose(eval_learned(p, k, x), x, rtol=0, atol=1e-14)
    f = filter_from_learned(p)
    assert np.allclose(eval_filter(f, 1.0, 0.5, x), x, rtol=0, atol=1e-14)


def test_unknown_kappa():
    p = MonotoneFilterParams.identity(KAPPAS, [0.0])
    with pytest.raises(InvalidArgumentError):
        eval_learned(p, 0.3, 1.0)


def test_scaled_psi_substitution():
    # psi(2, t) = t / 2 gives phi(2, x) = x / 2
    blk = ScaleBlock(2.0, np.array([-1.0, 1.0]), np.full(3, np.log(0.5)))
    f = filter_from_learned(MonotoneFilterParams((blk,)))
    assert eval_filter(f, 1.0, 2.0, 3.0) == pytest.approx(1.5, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(KAPPAS))
def test_learned_anchor_and_monotone(seed, kappa):
    p = _random_params(seed)
    assert eval_learned(p, kappa, 0.0) == 0.0
    x = np.linspace(-6, 6, 301)
    assert np.all(np.diff(eval_learned(p, kappa, x)) > 0)


def test_save_load_roundtrip(tmp_path):
    p = _random_params(3)
    save_params(p, tmp_path / "p.json")
    q = load_params(tmp_path / "p.json")
    x = np.random.default_rng(0).uniform(-8, 8, 1000)
    for k in KAPPAS:
        assert np.max(np.abs(eval_learned(p, k, x) - eval_learned(q, k, x))) <= 1e-12


def test_load_errors(tmp_path):
    (tmp_path / "e.json").write_text("")
    with pytest.raises(FormatError):
        load_params(tmp_path / "e.json")
    d = _random_params(1).to_dict()
    d["scales"][1]["knots"][2] = d["scales"][1]["knots"][1]
    (tmp_path / "bad.json").write_text(json.dumps(d))
    with pytest.raises(FormatError, match="block 1"):
        load_params(tmp_path / "bad.json")
    (tmp_path / "x.json").write_text('{"thetas": []}')
    with pytest.raises(FormatError):
        load_params(tmp_path / "x.json")


def test_train_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(delta=-1.0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(delta=1.0, epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(delta=1.0, noise_kind="pink")


def test_identity_target_is_fixed_point():
    pairs = _pairs(lambda c: c.copy())
    cfg = TrainConfig(delta=0.0, epochs=50, knots=15, a2_floor=False)
    res = train(pairs, cfg)
    for blk in res.params.scales:
        assert np.max(np.abs(blk.raw_slopes)) <= 1e-12
    assert np.allclose(res.train_loss, res.train_loss[0], rtol=0, atol=1e-12)


def test_halving_oracle():
    pairs = _pairs(lambda c: 0.5 * c)
    cfg = TrainConfig(delta=0.0, epochs=400, knots=15, a2_floor=False)
    res = train(pairs, cfg)
    for k in KAPPAS:
        c = np.concatenate(pairs.inputs[list(KAPPAS).index(k)])
        psi = eval_learned(res.params, k, c)
        assert np.max(np.abs(psi - 0.5 * c)) < 1e-3


def test_training_reduces_loss_and_respects_floor():
    pairs = _pairs(lambda c: np.sign(c) * np.maximum(np.abs(c) - 0.5, 0) + 0.01 * c)
    cfg = TrainConfig(delta=1.0, epochs=200, knots=15)
    res = train(pairs, cfg)
    assert res.train_loss[res.best_epoch] < res.train_loss[0]
    assert training_loss(res.params, pairs) == pytest.approx(res.train_loss[res.best_epoch], rel=1e-8)
    for blk in res.params.scales:
        assert np.all(blk.slopes >= A2_MARGIN * blk.kappa**2 * (1 - 1e-12))
    f = filter_from_learned(res.params)
    xs = np.linspace(-4, 4, 401)
    rep = verify_filter(f, [1.0], list(KAPPAS), xs)
    assert rep["1.0"]["F2"] and rep["1.0"]["F3_max"] == 0.0
    assert rep["1.0"]["A2_ratio"] > 1.0


def test_training_deterministic():
    pairs = _pairs(lambda c: np.tanh(c))
    cfg = TrainConfig(delta=1.0, epochs=30, knots=7, seed=2)
    a, b = train(pairs, cfg), train(pairs, cfg)
    assert a.params.to_dict() == b.params.to_dict()


@pytest.fixture(scope="module")
def ctx128():
    return DfdContext.for_geometry(RadonGeometry(128, 512, default_n_offsets(128)))


def test_noiseless_pairs_match_targets(ctx128):
    imgs = random_phantoms(2, 128, seed=1)
    pairs = build_training_pairs(imgs, TrainConfig(delta=0.0), ctx128)
    c = np.concatenate([np.concatenate(b) for b in pairs.inputs])
    t = np.concatenate([np.concatenate(b) for b in pairs.targets])
    assert np.linalg.norm(c - t) / np.linalg.norm(t) < 0.10


def test_pairs_deterministic_and_empty(ctx128):
    imgs = random_phantoms(1, 128, seed=2)
    cfg = TrainConfig(delta=8.0, seed=4)
    a = build_training_pairs(imgs, cfg, ctx128)
    b = build_training_pairs(imgs, cfg, ctx128)
    for x, y in zip(a.inputs, b.inputs):
        assert all(np.array_equal(u, v) for u, v in zip(x, y))
    empty = build_training_pairs([], cfg, ctx128)
    assert empty.n_images == 0 and all(blk == [] for blk in empty.inputs)
    with pytest.raises(InvalidArgumentError):
        build_training_pairs(random_phantoms(1, 64, seed=0), cfg, ctx128)
