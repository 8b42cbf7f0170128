"""Training engine tests: forward/backward vs finite differences, Adam, train()."""

import numpy as np
import pytest

from shapegain import (
    LinkConfig,
    NumericalError,
    ParameterError,
    awgn_sample,
    constellation_to_dict,
    db_to_linear,
    gmi_oracle_quadrature,
    uniform_qam,
)
from shapegain.training import (
    AdamHyper,
    GaussianDemapper,
    LinkTarget,
    MapperParams,
    SnrTarget,
    TrainConfig,
    adam_init,
    adam_step,
    backward,
    finite_difference_check,
    forward_loss,
    gradient_check,
    init_mapper,
    init_mlp,
    train,
    train_config_from_dict,
    trainable_arrays,
)


def _config(**kw):
    base = dict(m=2, target=SnrTarget(10.0), iterations=10, batch_symbols=64)
    base.update(kw)
    return TrainConfig(**base)


def _balanced_labels(m, batch):
    return np.repeat(np.arange(1 << m), batch // (1 << m))


# ------------------------------------------------------------------ configs


class TestTrainConfig:
    def test_batch_must_divide_by_constellation_size(self):
        with pytest.raises(ParameterError):
            _config(m=3, batch_symbols=20)

    def test_bad_mode_rejected(self):
        with pytest.raises(ParameterError):
            _config(demapper_mode="viterbi")

    def test_bad_init_rejected(self):
        with pytest.raises(ParameterError):
            _config(init="fourier")

    def test_from_dict_snr_target(self):
        cfg = train_config_from_dict(
            {"m": 3, "target": {"snr_db": 7.5}, "iterations": 5,
             "batch_symbols": 64, "seed": 9})
        assert isinstance(cfg.target, SnrTarget)
        assert cfg.target.snr_db == 7.5 and cfg.seed == 9

    def test_from_dict_link_target(self):
        cfg = train_config_from_dict(
            {"m": 2, "iterations": 5, "batch_symbols": 64,
             "target": {"link": {"n_spans": 10, "ase_var_per_span": 0.004,
                                 "chi1": 0.3, "chi2": 0.1},
                        "launch_power": "optimal", "refresh_every": 50}})
        assert isinstance(cfg.target, LinkTarget)
        assert cfg.target.link.n_spans == 10
        assert cfg.target.refresh_every == 50

    def test_from_dict_missing_target_rejected(self):
        with pytest.raises(ParameterError):
            train_config_from_dict({"m": 2, "iterations": 5})


class TestInitMapper:
    def test_qam_init_with_zero_jitter_is_gray_qam(self):
        # emit() renormalizes, so allow one ulp of scale noise
        for m in (1, 2, 3, 4, 6):
            cfg = _config(m=m, batch_symbols=1 << m, init="qam")
            params = init_mapper(cfg, np.random.default_rng(0), jitter=0.0)
            np.testing.assert_allclose(params.emit(), uniform_qam(m).points,
                                       rtol=0, atol=1e-15)

    def test_qam_init_default_jitter_stays_close(self):
        cfg = _config(m=4, init="qam")
        params = init_mapper(cfg, np.random.default_rng(1))
        ref = uniform_qam(4).points
        assert np.max(np.abs(params.emit() - ref)) < 0.1
        assert np.any(params.emit() != ref)

    def test_random_init_unit_power_and_seed_determinism(self):
        cfg = _config(m=3, batch_symbols=64, init="random")
        a = init_mapper(cfg, np.random.default_rng(4)).emit()
        b = init_mapper(cfg, np.random.default_rng(4)).emit()
        c = init_mapper(cfg, np.random.default_rng(5)).emit()
        np.testing.assert_array_equal(a, b)
        assert np.any(a != c)
        assert np.mean(np.abs(a) ** 2) == pytest.approx(1.0, abs=1e-12)
        assert len(np.unique(a)) >= 2


# ------------------------------------------------------------- forward pass


class TestForwardLoss:
    def _setup(self, m=2, batch=64, snr_db=10.0, seed=0):
        cfg = _config(m=m, batch_symbols=batch)
        rng = np.random.default_rng(seed)
        params = init_mapper(cfg, rng)
        labels = _balanced_labels(m, batch)
        nv = 1.0 / db_to_linear(snr_db)
        noise = awgn_sample(rng, np.zeros(batch), nv)
        return params, labels, noise, nv

    def test_surrogate_identity_loss_plus_gmi_is_m(self):
        params, labels, noise, nv = self._setup(m=3, batch=128)
        loss, st = forward_loss(params, GaussianDemapper(), labels, noise, nv)
        assert float(st.per_bit_surrogate.sum()) == pytest.approx(3.0 - loss, abs=1e-12)

    def test_transmitted_points_have_unit_power(self):
        params, labels, noise, nv = self._setup(m=4, batch=256)
        _, st = forward_loss(params, GaussianDemapper(), labels, noise, nv)
        assert np.mean(np.abs(st.points) ** 2) == pytest.approx(1.0, abs=1e-12)

    def test_noiseless_batch_loss_is_tiny(self):
        params, labels, _, _ = self._setup(m=2, batch=64)
        loss, _ = forward_loss(params, GaussianDemapper(), labels,
                               np.zeros(64, complex), 1e-4)
        assert loss < 1e-12

    def test_overwhelming_noise_loss_approaches_m(self):
        params, labels, noise, _ = self._setup(m=2, batch=64)
        loss, _ = forward_loss(params, GaussianDemapper(), labels,
                               1e4 * noise, 1e8)
        assert loss == pytest.approx(2.0, abs=0.01)

    def test_unbalanced_labels_rejected(self):
        params, labels, noise, nv = self._setup(m=2, batch=64)
        labels = labels.copy()
        labels[labels == 3] = 0
        with pytest.raises(ParameterError):
            forward_loss(params, GaussianDemapper(), labels, noise, nv)

    def test_nan_parameters_raise_numerical_error(self):
        params, labels, noise, nv = self._setup(m=2, batch=64)
        bad = MapperParams(raw=params.raw.copy())
        bad.raw[0, 0] = np.nan
        with pytest.raises(NumericalError):
            forward_loss(bad, GaussianDemapper(), labels, noise, nv)


# ------------------------------------------------------- gradient checking


class TestGradients:
    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_gaussian_demapper_gradients(self, m):
        cfg = _config(m=m, batch_symbols=16 * (1 << m))
        rng = np.random.default_rng(100 + m)
        params = init_mapper(cfg, rng)
        labels = _balanced_labels(m, cfg.batch_symbols)
        nv = 1.0 / db_to_linear(8.0)
        noise = awgn_sample(rng, np.zeros(cfg.batch_symbols), nv)
        rep = gradient_check(params, GaussianDemapper(), labels, noise, nv,
                             n_probes=8, rng=np.random.default_rng(0))
        assert rep.passed, f"max rel err {rep.max_rel_err:.2e}"

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_mlp_demapper_gradients(self, m):
        cfg = _config(m=m, batch_symbols=16 * (1 << m), demapper_mode="mlp",
                      mlp_hidden=(16, 16))
        rng = np.random.default_rng(200 + m)
        params = init_mapper(cfg, rng)
        mlp = init_mlp(m, cfg.mlp_hidden, rng, cfg.llr_clip)
        labels = _balanced_labels(m, cfg.batch_symbols)
        nv = 1.0 / db_to_linear(8.0)
        noise = awgn_sample(rng, np.zeros(cfg.batch_symbols), nv)
        rep = gradient_check(params, mlp, labels, noise, nv,
                             n_probes=8, rng=np.random.default_rng(0))
        assert rep.passed, f"max rel err {rep.max_rel_err:.2e}"

    def test_checker_is_exact_on_quadratic_toy(self):
        # central differences have no error on quadratics, so any residual
        # comes from the harness itself
        rng = np.random.default_rng(3)
        a = rng.uniform(0.5, 2.0, (3, 4))
        ctr = rng.normal(size=(3, 4))
        x = {"x": rng.normal(size=(3, 4))}

        def loss_fn(arrays):
            return float(np.sum(a * (arrays["x"] - ctr) ** 2))

        grads = {"x": 2.0 * a * (x["x"] - ctr)}
        rep = finite_difference_check(loss_fn, x, grads, n_probes=12,
                                      tolerance=1e-9, rng=np.random.default_rng(0))
        assert rep.passed
        assert len(rep.probes) == 12

    def test_checker_redraws_probes_straddling_kinks(self):
        # relu toy with one coordinate closer to the kink than the fd step:
        # a central difference there mixes the two slopes (reads ~0.65 here),
        # so the checker must reject that probe, not the gradient
        x = {"x": np.array([0.5, -0.5, 3e-6])}

        def loss_fn(arrays):
            return float(np.maximum(arrays["x"], 0.0).sum())

        grads = {"x": np.array([1.0, 0.0, 1.0])}  # exact one-sided slopes
        naive = finite_difference_check(loss_fn, x, grads, n_probes=3,
                                        tolerance=1e-6,
                                        rng=np.random.default_rng(0))
        assert not naive.passed  # the straddling probe poisons the check

        rep = finite_difference_check(loss_fn, x, grads, n_probes=3,
                                      tolerance=1e-6,
                                      rng=np.random.default_rng(0),
                                      region_fn=lambda a: [a["x"] > 0])
        assert rep.passed
        assert {p.index for p in rep.probes} == {(0,), (1,)}

    def test_checker_flags_wrong_gradients(self):
        rng = np.random.default_rng(4)
        x = {"x": rng.normal(size=(5,))}

        def loss_fn(arrays):
            return float(np.sum(arrays["x"] ** 2))

        grads = {"x": 2.0 * x["x"] * 1.02}  # 2% error
        rep = finite_difference_check(loss_fn, x, grads, n_probes=5,
                                      tolerance=1e-4, rng=np.random.default_rng(0))
        assert not rep.passed
        assert rep.max_rel_err > 1e-3

    def test_backward_returns_all_trainable_arrays(self):
        cfg = _config(m=2, batch_symbols=64, demapper_mode="mlp", mlp_hidden=(8,))
        rng = np.random.default_rng(5)
        params = init_mapper(cfg, rng)
        mlp = init_mlp(2, (8,), rng, 50.0)
        labels = _balanced_labels(2, 64)
        noise = awgn_sample(rng, np.zeros(64), 0.1)
        _, st = forward_loss(params, mlp, labels, noise, 0.1)
        grads = backward(params, mlp, st)
        assert set(grads) == set(trainable_arrays(params, mlp))
        for key, g in grads.items():
            assert g.shape == trainable_arrays(params, mlp)[key].shape


# --------------------------------------------------------------------- Adam


class TestAdam:
    def test_zero_gradient_is_a_fixed_point(self):
        arrays = {"w": np.array([1.0, -2.0, 3.0])}
        state = adam_init(arrays)
        out, state = adam_step(arrays, {"w": np.zeros(3)}, state, AdamHyper())
        np.testing.assert_array_equal(out["w"], arrays["w"])
        assert state.t == 1

    def test_constant_gradient_moves_lr_per_step(self):
        # with g constant, m-hat/(sqrt(v-hat)+eps) == sign(g) at every step
        hyper = AdamHyper(learning_rate=1e-3)
        arrays = {"w": np.array([0.5, -0.25])}
        g = {"w": np.array([3.0, -0.7])}
        state = adam_init(arrays)
        for _ in range(500):
            arrays, state = adam_step(arrays, g, state, hyper)
        moved = np.array([0.5, -0.25]) - arrays["w"]
        np.testing.assert_allclose(moved, 500 * 1e-3 * np.sign(g["w"]), rtol=1e-4)

    def test_step_does_not_mutate_inputs(self):
        arrays = {"w": np.array([1.0])}
        grads = {"w": np.array([2.0])}
        state = adam_init(arrays)
        adam_step(arrays, grads, state, AdamHyper())
        assert arrays["w"][0] == 1.0 and grads["w"][0] == 2.0
        assert state.t == 0 and state.m["w"][0] == 0.0

    def test_deterministic(self):
        def run():
            arrays = {"w": np.array([0.3, 0.7])}
            state = adam_init(arrays)
            for i in range(50):
                g = {"w": np.array([np.sin(i), np.cos(i)])}
                arrays, state = adam_step(arrays, g, state, AdamHyper())
            return arrays["w"]

        np.testing.assert_array_equal(run(), run())


# ------------------------------------------------------------ training loop


class TestTrain:
    def test_zero_iterations_returns_normalized_init(self):
        cfg = _config(m=2, iterations=0, batch_symbols=64, seed=3)
        c, hist = train(cfg)
        expect = init_mapper(cfg, np.random.default_rng(3)).emit()
        np.testing.assert_array_equal(c.points, expect)
        assert len(hist) == 0

    def test_seed_determinism_and_sensitivity(self):
        cfg = _config(m=2, iterations=30, batch_symbols=64, seed=1)
        a, _ = train(cfg)
        b, _ = train(cfg)
        assert constellation_to_dict(a) == constellation_to_dict(b)
        c, _ = train(_config(m=2, iterations=30, batch_symbols=64, seed=2))
        assert np.any(a.points != c.points)

    def test_history_shape_and_identity(self):
        cfg = _config(m=3, iterations=25, batch_symbols=128)
        _, hist = train(cfg)
        assert len(hist) == 25
        assert np.all(np.isfinite(hist.loss))
        np.testing.assert_allclose(hist.surrogate_gmi, 3.0 - hist.loss, atol=1e-12)
        csv = hist.to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "iteration,loss,surrogate_gmi,grad_norm"
        assert len(lines) == 26
        assert lines[1].startswith("0,")
        # repr floats parse back exactly
        fields = lines[1].split(",")
        assert float(fields[1]) == hist.loss[0]
        assert float(fields[3]) == hist.grad_norm[0]

    def test_training_does_not_degrade_qpsk(self):
        # short-run analog of the 16-QAM non-degradation gate
        cfg = _config(m=2, iterations=600, batch_symbols=256,
                      learning_rate=2e-3, seed=0)
        c, _ = train(cfg)
        nv = 1.0 / db_to_linear(10.0)
        trained = gmi_oracle_quadrature(c, nv)
        reference = gmi_oracle_quadrature(uniform_qam(2), nv)
        assert trained >= reference - 0.02

    def test_trained_metadata_records_provenance(self):
        cfg = _config(m=2, iterations=5, batch_symbols=64, seed=7)
        c, _ = train(cfg)
        assert c.metadata["generator"] == "train"
        assert c.metadata["seed"] == 7
        assert c.metadata["trained_snr_db"] == pytest.approx(10.0)
        assert c.metadata["demapper_mode"] == "gaussian"

    def test_link_target_refresh_runs(self):
        link = LinkConfig(n_spans=8, ase_var_per_span=0.0041, chi1=0.3,
                          chi2=0.1)
        cfg = _config(m=2, iterations=45, batch_symbols=64,
                      target=LinkTarget(link, refresh_every=20))
        c, hist = train(cfg)
        assert len(hist) == 45
        assert np.isfinite(c.metadata["trained_snr_db"])

    def test_mlp_mode_trains(self):
        cfg = _config(m=2, iterations=40, batch_symbols=64,
                      demapper_mode="mlp", mlp_hidden=(8,), seed=2)
        c, hist = train(cfg)
        assert c.size == 4
        assert np.all(np.isfinite(hist.grad_norm))
