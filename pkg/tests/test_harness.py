import json

import numpy as np
import pytest
from sklearn.base import clone

from dfdreg.cli import main
from dfdreg.core import Image, Sinogram, make_phantom, mse, random_phantoms
from dfdreg.dfd import DfdContext
from dfdreg.estimator import FilteredDFD
from dfdreg.exceptions import CalibrationError, ConfigurationError, InvalidArgumentError
from dfdreg.experiments import (
    NOISE_LEVELS,
    ConvergenceConfig,
    bound_value,
    fit_slope,
    reconstruct,
    reconstruct_learned,
    run_convergence_study,
    run_mse_table,
)
from dfdreg.filters import Filter
from dfdreg.io import read_image, read_json, read_sinogram, write_image
from dfdreg.learned import load_params
from dfdreg.noise import NoiseKind, NoiseSpec, add_noise, measured_delta, noisy
from dfdreg.radon import RadonGeometry, fbp, radon_forward


@pytest.fixture(scope="module")
def sino256():
    g = RadonGeometry.for_size(256)
    return radon_forward(make_phantom("shepp_logan", 256), g)


@pytest.fixture(scope="module")
def ctx64():
    return DfdContext.for_geometry(RadonGeometry.for_size(64))


# noise ---------------------------------------------------------------------


@pytest.mark.parametrize("kind", [k.value for k in NoiseKind])
def test_noise_calibration(sino256, kind):
    for delta in NOISE_LEVELS:
        yd = add_noise(sino256, NoiseSpec(kind, delta, seed=3))
        assert abs(measured_delta(sino256.values, yd.values) - delta) <= 0.01 * delta


def test_noise_deterministic(sino256):
    a = noisy(sino256, "poisson", 8.0, seed=1)
    b = noisy(sino256, "poisson", 8.0, seed=1)
    c = noisy(sino256, "poisson", 8.0, seed=2)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_gaussian_std(sino256):
    assert sino256.values.shape == (512, 363)
    d = noisy(sino256, "gaussian", 8.0, seed=0).values - sino256.values
    assert abs(d.std() - 8.0) <= 0.03 * 8.0


def test_noise_errors():
    zero = Sinogram(np.zeros((8, 9)))
    with pytest.raises(CalibrationError):
        add_noise(zero, NoiseSpec("salt_pepper", 1.0))
    with pytest.raises(InvalidArgumentError):
        NoiseSpec("gaussian", 0.0)


# reconstruction -------------------------------------------------------------


def test_identity_reconstruct_is_fbp(ctx64):
    y = noisy(radon_forward(make_phantom("disks", 64), ctx64.geometry), "gaussian", 2.0, seed=0)
    a = reconstruct(y, Filter("identity"), 1.0, ctx64).pixels
    b = fbp(y, ctx64.geometry).pixels
    assert np.abs(a - b).max() <= 1e-12


def test_cubic_reconstruct_tends_to_fbp(ctx64):
    y = noisy(radon_forward(make_phantom("shepp_logan", 64), ctx64.geometry), "gaussian", 2.0, seed=0)
    base = fbp(y, ctx64.geometry).pixels
    diffs = [
        np.linalg.norm(reconstruct(y, Filter("example_cubic"), a, ctx64).pixels - base)
        for a in (1.0, 0.1, 0.01)
    ]
    assert diffs[0] > diffs[1] > diffs[2]


# tables ----------------------------------------------------------------------


def test_mse_table_missing_params(ctx64):
    with pytest.raises(ConfigurationError, match="delta=8"):
        run_mse_table(random_phantoms(2, 64, seed=0), ["gaussian"], [8], {}, ctx64)


def test_mse_table_noiseless_row(ctx64):
    imgs = random_phantoms(3, 64, seed=0)
    recs = run_mse_table(imgs, ["gaussian"], [0], {}, ctx64)
    row = recs[0].rows[0]
    assert row["mse_fbp"] == row["mse_filtered"]
    ref = np.mean([mse(fbp(radon_forward(x, ctx64.geometry), ctx64.geometry), x) for x in imgs])
    assert row["mse_fbp"] == pytest.approx(ref, rel=1e-12)
    text = recs[0].to_csv()
    assert text.startswith("kind,delta,") and text.endswith("\n") and "\r" not in text


# convergence -----------------------------------------------------------------


def test_convergence_config_validation():
    with pytest.raises(InvalidArgumentError):
        ConvergenceConfig(deltas=(0.5, 0.5, 0.5))
    with pytest.raises(InvalidArgumentError):
        ConvergenceConfig(deltas=(0.25, 0.5))


def test_slope_and_bound_helpers():
    d = np.array([1.0, 0.5, 0.25])
    assert fit_slope(d, 3 * d**1.5) == pytest.approx(1.5)
    assert bound_value(0.5, 0.5) == pytest.approx(0.25 + 0.5 + 0.5)


def test_small_diagonal_study():
    cfg = ConvergenceConfig(trials=4, n=512, bootstrap=50, seed=1)
    rec = run_convergence_study(cfg)
    dq = rec.column("bregman_distance")
    assert len(rec.rows) == 9
    assert 0.7 <= rec.slope <= 1.3
    assert rec.slope_ci[0] <= rec.slope_ci[1]
    inversions = int(np.sum(np.diff(dq) > 0))
    assert inversions <= 1
    again = run_convergence_study(cfg)
    assert again.to_csv() == rec.to_csv()


def test_quadratic_rule_error_vanishes():
    cfg = ConvergenceConfig(alpha_rule="quadratic", trials=4, n=512, bootstrap=10)
    rec = run_convergence_study(cfg)
    err = rec.column("squared_error")
    assert err[-1] <= err[0] / 10


def test_ct_mode_runs(ctx64):
    cfg = ConvergenceConfig(deltas=(1.0, 0.5), trials=1, bootstrap=5)
    rec = run_convergence_study(cfg, ctx64, make_phantom("disks", 64))
    assert rec.meta["mode"] == "ct" and len(rec.rows) == 2
    with pytest.raises(InvalidArgumentError):
        run_convergence_study(cfg, ctx64)


# estimator -------------------------------------------------------------------


def _dataset(n, size, delta, seed):
    g = RadonGeometry.for_size(size)
    imgs = random_phantoms(n, size, seed=seed)
    X = np.stack(
        [noisy(radon_forward(x, g), "gaussian", delta, seed=seed, stream=(i,)).values
         for i, x in enumerate(imgs)]
    )
    y = np.stack([x.pixels for x in imgs])
    return X, y


def test_estimator_fit_predict():
    X, y = _dataset(10, 32, 2.0, seed=0)
    est = FilteredDFD(image_size=32, delta=2.0, epochs=300, knots=15)
    assert clone(est).get_params() == est.get_params()
    est.fit(X[:8], y[:8])
    pred = est.predict(X[8:])
    assert pred.shape == (2, 32, 32)
    fbp_mse = np.mean(
        [mse(fbp(Sinogram(s), est.context_.geometry), Image(t)) for s, t in zip(X[8:], y[8:])]
    )
    assert -est.score(X[8:], y[8:]) < fbp_mse
    with pytest.raises(InvalidArgumentError):
        est.predict(X[:, :, :-2])


# cli -------------------------------------------------------------------------


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["phantom", "--size", "64"]) == 1
    cfg = tmp_path / "c.json"
    cfg.write_text('{"bogus": 1}')
    assert main(["phantom", "--config", str(cfg), "--out", str(tmp_path / "x.fflt")]) == 1


def test_cli_runtime_errors(tmp_path):
    assert main(["fbp", "--sinogram", str(tmp_path / "missing.fsin"), "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "empty.fsin").write_bytes(b"")
    assert main(["fbp", "--sinogram", str(tmp_path / "empty.fsin"), "--out", str(tmp_path / "o")]) == 2
    assert main(["phantom", "--size", "100", "--out", str(tmp_path / "x.fflt")]) == 2


def test_cli_phantom_and_config(tmp_path):
    out = tmp_path / "x.fflt"
    assert main(["phantom", "--kind", "shepp_logan", "--size", "256", "--out", str(out)]) == 0
    assert out.exists() and read_image(out) == make_phantom("shepp_logan", 256)
    cfg = tmp_path / "c.json"
    cfg.write_text('{"kind": "checker", "size": 32}')
    assert main(["phantom", "--config", str(cfg), "--out", str(out)]) == 0
    assert read_image(out) == make_phantom("checker", 32)


def test_cli_verify_filter(tmp_path):
    r = tmp_path / "r.json"
    assert main(["verify-filter", "--filter", "example_cubic", "--alphas", "4,8,12", "--report", str(r)]) == 0
    rep = read_json(r)
    for a in ("4.0", "8.0", "12.0"):
        assert {"F1", "F2", "F3_max", "F4_sum", "A1_ratio", "A2_ratio", "A3_margin", "nonexpansive"} <= set(rep[a])


def test_cli_end_to_end(tmp_path):
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for i, x in enumerate(random_phantoms(12, 64, seed=20)):
        write_image(x, imgs / f"{i:02d}.fflt")
    params = tmp_path / "params.json"
    assert main(["train", "--delta", "8", "--noise", "gaussian", "--images", str(imgs),
                 "--epochs", "500", "--out", str(params)]) == 0
    test = random_phantoms(1, 64, seed=21)[0]
    write_image(test, tmp_path / "t.fflt")
    y = tmp_path / "y.fsin"
    yd = tmp_path / "yd.fsin"
    assert main(["project", "--image", str(tmp_path / "t.fflt"), "--out", str(y)]) == 0
    assert main(["noise", "--sinogram", str(y), "--delta", "8", "--seed", "5", "--out", str(yd)]) == 0
    xr = tmp_path / "xr.fflt"
    xf = tmp_path / "xf.fflt"
    assert main(["reconstruct", "--params", str(params), "--sinogram", str(yd), "--out", str(xr)]) == 0
    assert main(["fbp", "--sinogram", str(yd), "--out", str(xf)]) == 0
    assert mse(read_image(xr), test) < mse(read_image(xf), test)
    g = RadonGeometry.for_size(64)
    assert read_sinogram(y) == radon_forward(test, g)
    assert main(["verify-filter", "--params", str(params), "--x-max", "20", "--out", str(tmp_path / "v.json")]) == 0
    rep = read_json(tmp_path / "v.json")
    assert rep["8.0"]["F2"] and rep["8.0"]["F3_max"] == 0.0
    # the same filter also beats FBP on the Shepp-Logan phantom
    sl = make_phantom("shepp_logan", 64)
    ysl = noisy(radon_forward(sl, g), "gaussian", 8.0, seed=9)
    p = load_params(params)
    ctx = DfdContext.for_geometry(g, len(p.kappas), float(p.kappas.max()))
    assert mse(reconstruct_learned(ysl, p, ctx), sl) < mse(fbp(ysl, g), sl)


def test_cli_convergence_deterministic(tmp_path):
    args = ["convergence", "--trials", "2", "--n", "256", "--levels-delta", "4", "--seed", "3"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a), "--summary", str(tmp_path / "s.json")]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "slope" in json.loads((tmp_path / "s.json").read_text())


def test_cli_small_mse_table(tmp_path):
    out = tmp_path / "t.csv"
    args = ["mse-table", "--kinds", "gaussian", "--deltas", "0,8", "--size", "32",
            "--n-train", "3", "--n-val", "1", "--n-test", "2", "--epochs", "20"]
    assert main(args + ["--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].split(",")[:2] == ["kind", "delta"] and len(lines) == 3
