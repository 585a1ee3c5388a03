import numpy as np
import pytest

from spectragan.networks import (DiscriminatorParams, GenConfig,
                                 GeneratorParams, compose_outputs,
                                 discriminator_forward, generator_forward,
                                 init_discriminator, init_generator)
from spectragan.rng import SplitMix64
from spectragan.tensor import ShapeError, Tensor, grad_check, mean

ALL_CONFIGS = list(GenConfig)


def conv_params(k, cin, cout):
    return k * k * cin * cout + cout


def layer_table_generator_count(w, n, config):
    """Closed-form parameter count assembled layer by layer."""
    norm = lambda c: 2 * c
    res = lambda c: 2 * (conv_params(3, c, c) + norm(c))
    encoder = (conv_params(7, 3, w) + norm(w)
               + conv_params(3, w, 2 * w) + norm(2 * w)
               + conv_params(3, 2 * w, 4 * w) + norm(4 * w)
               + 2 * res(4 * w))

    def branch(k_out):
        return (2 * res(4 * w)
                + conv_params(3, 4 * w, 2 * w) + norm(2 * w)
                + conv_params(3, 2 * w, w) + norm(w)
                + conv_params(7, w, k_out))

    total = encoder + branch(n) + branch(3 * (n - 1)) + branch(n)
    if config is GenConfig.INDEPENDENT_AMPLITUDE_B:
        total += branch(3 * (n - 1))
    total += conv_params(3, 6, 16) + conv_params(3, 16, 3)  # fuser
    total += 2 * n  # lambdas
    return total


def layer_table_discriminator_count(w):
    norm = lambda c: 2 * c
    return (conv_params(4, 3, w)
            + conv_params(4, w, 2 * w) + norm(2 * w)
            + conv_params(4, 2 * w, 4 * w) + norm(4 * w)
            + conv_params(4, 4 * w, 8 * w)
            + conv_params(4, 8 * w, 1))


def random_image(seed, size=32):
    return Tensor(np.tanh(SplitMix64(seed).normal((3, size, size))).astype(np.float32))


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_generator(5, 4, GenConfig.INDEPENDENT_AMPLITUDE_B, 8)
        b = init_generator(5, 4, GenConfig.INDEPENDENT_AMPLITUDE_B, 8)
        for name, t in a.named_tensors().items():
            assert np.array_equal(t.data, b.named_tensors()[name].data), name

    def test_distinct_seeds_differ(self):
        a = init_generator(1, 2, GenConfig.DIRECT_SPECTRUM_A, 4)
        b = init_generator(2, 2, GenConfig.DIRECT_SPECTRUM_A, 4)
        assert not np.array_equal(a.encoder.c1.w.data, b.encoder.c1.w.data)

    def test_config_a_has_no_amplitude_decoder(self):
        p = init_generator(0, 3, GenConfig.DIRECT_SPECTRUM_A, 4)
        assert p.dec_amplitude is None
        assert not any(name.startswith("amp.") for name in p.named_tensors())

    def test_config_b_allocates_amplitude_decoder(self):
        p = init_generator(0, 3, GenConfig.INDEPENDENT_AMPLITUDE_B, 4)
        assert p.dec_amplitude is not None

    @pytest.mark.parametrize("w,n", [(16, 4), (8, 3), (4, 2)])
    def test_generator_parameter_count_closed_form(self, w, n):
        for config in ALL_CONFIGS:
            p = init_generator(0, n, config, w)
            assert p.param_count() == layer_table_generator_count(w, n, config)

    @pytest.mark.parametrize("w", [16, 8])
    def test_discriminator_parameter_count(self, w):
        d = init_discriminator(0, w)
        assert d.param_count() == layer_table_discriminator_count(w)

    def test_discriminator_seed_determinism(self):
        a, b = init_discriminator(3, 8), init_discriminator(3, 8)
        for name, t in a.named_tensors().items():
            assert np.array_equal(t.data, b.named_tensors()[name].data)
        c = init_discriminator(4, 8)
        assert not np.array_equal(a.c1.w.data, c.c1.w.data)

    def test_validation(self):
        with pytest.raises(ValueError):
            init_generator(0, 1, GenConfig.DIRECT_SPECTRUM_A, 8)
        with pytest.raises(ValueError):
            init_generator(0, 2, GenConfig.DIRECT_SPECTRUM_A, 2)
        with pytest.raises(ValueError):
            GenConfig.from_string("c")

    def test_lambdas_default_half_fixed(self):
        p = init_generator(0, 4, GenConfig.DIRECT_SPECTRUM_A, 4)
        assert np.all(p.lam_a.data == 0.5) and np.all(p.lam_s.data == 0.5)
        assert not p.lam_a.requires_grad
        q = init_generator(0, 4, GenConfig.DIRECT_SPECTRUM_A, 4, learn_lambdas=True)
        assert q.lam_a.requires_grad


class TestGeneratorForward:
    def test_output_shapes_64(self):
        p = init_generator(0, 4, GenConfig.INDEPENDENT_AMPLITUDE_B, 8)
        out = generator_forward(p, random_image(1, 64))
        assert out.image.shape == (3, 64, 64)
        assert out.spatial_attention.shape == (4, 64, 64)
        assert out.spectral_attention.shape == (4, 64, 64)
        assert out.contents.shape == (3, 3, 64, 64)
        assert out.amplitudes.shape == (3, 3, 64, 64)
        assert out.pre_fuser.shape == (3, 64, 64)
        assert out.shared_phase.shape == (3, 64, 64)

    @pytest.mark.parametrize("config", ALL_CONFIGS)
    @pytest.mark.parametrize("seed", range(3))
    def test_attention_normalization(self, config, seed):
        p = init_generator(seed, 3, config, 4)
        out = generator_forward(p, random_image(seed + 10, 16))
        assert np.abs(out.spatial_attention.data.sum(axis=0) - 1.0).max() < 1e-5
        assert np.abs(out.spectral_attention.data.sum(axis=0) - 1.0).max() < 1e-5

    @pytest.mark.parametrize("config", ALL_CONFIGS)
    def test_imaginary_residual_small(self, config):
        p = init_generator(2, 3, config, 4)
        out = generator_forward(p, random_image(3, 16))
        assert out.imag_residual < 1e-5

    def test_image_in_range(self):
        p = init_generator(4, 2, GenConfig.PHASE_RECOMBINED_A, 4)
        out = generator_forward(p, random_image(5, 16))
        assert out.image.data.min() >= -1.0 and out.image.data.max() <= 1.0

    def test_deterministic_forward(self):
        p = init_generator(6, 3, GenConfig.INDEPENDENT_AMPLITUDE_B, 4)
        x = random_image(7, 16)
        a = generator_forward(p, x)
        b = generator_forward(p, x)
        assert np.array_equal(a.image.data, b.image.data)
        assert np.array_equal(a.pre_fuser.data, b.pre_fuser.data)

    def test_rejects_bad_inputs(self):
        p = init_generator(0, 2, GenConfig.DIRECT_SPECTRUM_A, 4)
        with pytest.raises(ShapeError):
            generator_forward(p, Tensor(np.zeros((1, 16, 16))))
        with pytest.raises(ValueError):
            generator_forward(p, Tensor(np.zeros((3, 16, 8))))
        with pytest.raises(ValueError):
            generator_forward(p, Tensor(np.zeros((3, 12, 12))))

    @pytest.mark.parametrize("config", ALL_CONFIGS)
    def test_identity_composition_forced_background(self, config):
        """All attention mass on the background layer reproduces the input."""
        p = init_generator(8, 4, config, 4)
        # bias the attention heads so softmax puts all mass on layer n-1
        bias = np.full(4, -60.0, dtype=np.float32)
        bias[-1] = 60.0
        p.dec_spatial.head.b.data = bias.copy()
        p.dec_spectral.head.b.data = bias.copy()
        x = random_image(9, 16)
        out = generator_forward(p, x)
        assert np.abs(out.pre_fuser.data - x.data).max() < 1e-4


class TestComposeOutputs:
    def _pieces(self, seed, n=3, size=8, dtype=np.float64):
        rng = SplitMix64(seed)
        contents = Tensor(np.tanh(rng.normal((1, 3 * (n - 1), size, size))), dtype=dtype)
        att_a = Tensor(rng.uniform(n * size * size).reshape(1, n, size, size), dtype=dtype)
        att_a = Tensor(att_a.data / att_a.data.sum(axis=1, keepdims=True))
        att_s = Tensor(rng.uniform(n * size * size).reshape(1, n, size, size), dtype=dtype)
        att_s = Tensor(att_s.data / att_s.data.sum(axis=1, keepdims=True))
        x = Tensor(np.tanh(rng.normal((1, 3, size, size))), dtype=dtype)
        lam_a = Tensor(np.full(n, 0.5), dtype=dtype)
        lam_s = Tensor(np.full(n, 0.5), dtype=dtype)
        phase = np.zeros((3, size, size))
        return contents, att_a, att_s, x, lam_a, lam_s, phase

    def test_zero_attention_channel_contributes_nothing(self):
        contents, att_a, att_s, x, lam_a, lam_s, phase = self._pieces(20)
        a = att_a.data.copy()
        a[:, 1] = 0.0
        s = att_s.data.copy()
        s[:, 1] = 0.0
        wild = contents.data.copy()
        wild[:, 3:6] = 123.0  # layer 1 content
        out1, _ = compose_outputs(contents, Tensor(a), Tensor(s), None, x, phase,
                                  lam_a, lam_s, GenConfig.DIRECT_SPECTRUM_A)
        out2, _ = compose_outputs(Tensor(wild), Tensor(a), Tensor(s), None, x, phase,
                                  lam_a, lam_s, GenConfig.DIRECT_SPECTRUM_A)
        assert np.abs(out1.data - out2.data).max() < 1e-9

    def test_spatial_only_matches_independent_oracle(self):
        contents, att_a, att_s, x, lam_a, _, phase = self._pieces(21)
        lam_s0 = Tensor(np.zeros(3), dtype=np.float64)
        out, _ = compose_outputs(contents, att_a, att_s, None, x, phase,
                                 lam_a, lam_s0, GenConfig.DIRECT_SPECTRUM_A)
        # independent spatial-only composition in plain numpy
        oracle = np.zeros_like(x.data)
        for i in range(3):
            c = contents.data[:, 3 * i:3 * i + 3] if i < 2 else x.data
            oracle = oracle + lam_a.data[i] * c * att_a.data[:, i:i + 1]
        assert np.abs(out.data - oracle).max() < 1e-6

    def test_uniform_masks_linearity_closed_form(self):
        n, size = 3, 8
        rng = SplitMix64(22)
        contents = Tensor(np.tanh(rng.normal((1, 3 * (n - 1), size, size))), dtype=np.float64)
        x = Tensor(np.tanh(rng.normal((1, 3, size, size))), dtype=np.float64)
        uniform = Tensor(np.full((1, n, size, size), 1.0 / n), dtype=np.float64)
        lam_a = Tensor(np.full(n, 0.25), dtype=np.float64)
        lam_s = Tensor(np.full(n, 0.75), dtype=np.float64)
        out, _ = compose_outputs(contents, uniform, uniform, None, x, None,
                                 lam_a, lam_s, GenConfig.DIRECT_SPECTRUM_A)
        # uniform masks make the spectral term iFFT((1/n) F(C)) = C/n,
        # so each layer contributes (lam_a + lam_s)/n * C
        oracle = np.zeros_like(x.data, dtype=np.float64)
        for i in range(n):
            c = contents.data[:, 3 * i:3 * i + 3] if i < n - 1 else x.data
            oracle += (0.25 + 0.75) / n * c
        assert np.abs(out.data - oracle).max() < 1e-4

    def test_linear_in_contents(self):
        contents, att_a, att_s, x, lam_a, lam_s, phase = self._pieces(23)
        other = Tensor(SplitMix64(24).normal(contents.shape), dtype=np.float64)
        zero = Tensor(np.zeros(contents.shape), dtype=np.float64)
        cfg = GenConfig.DIRECT_SPECTRUM_A
        f = lambda c: compose_outputs(c, att_a, att_s, None, x, phase, lam_a, lam_s, cfg)[0].data
        lhs = f(Tensor(contents.data + other.data)) + f(zero)
        rhs = f(contents) + f(other)
        assert np.abs(lhs - rhs).max() < 1e-5

    def test_config_amplitude_mismatch_errors(self):
        contents, att_a, att_s, x, lam_a, lam_s, phase = self._pieces(25)
        amps = Tensor(np.ones(contents.shape), dtype=np.float64)
        with pytest.raises(ValueError):
            compose_outputs(contents, att_a, att_s, amps, x, phase, lam_a, lam_s,
                            GenConfig.DIRECT_SPECTRUM_A)
        with pytest.raises(ValueError):
            compose_outputs(contents, att_a, att_s, None, x, phase, lam_a, lam_s,
                            GenConfig.INDEPENDENT_AMPLITUDE_B)

    def test_background_spectrum_config_b(self):
        """Forced background attention in config b reproduces the input."""
        n, size = 2, 8
        rng = SplitMix64(26)
        contents = Tensor(np.tanh(rng.normal((1, 3, size, size))), dtype=np.float64)
        amps = Tensor(rng.uniform(3 * size * size).reshape(1, 3, size, size), dtype=np.float64)
        x = Tensor(np.tanh(rng.normal((1, 3, size, size))), dtype=np.float64)
        onehot = np.zeros((1, n, size, size))
        onehot[:, -1] = 1.0
        from spectragan.networks import _shared_phase
        phase = _shared_phase(x.data[0])
        out, resid = compose_outputs(contents, Tensor(onehot, dtype=np.float64),
                                     Tensor(onehot, dtype=np.float64), amps, x, phase,
                                     Tensor(np.full(n, 0.5), dtype=np.float64),
                                     Tensor(np.full(n, 0.5), dtype=np.float64),
                                     GenConfig.INDEPENDENT_AMPLITUDE_B)
        assert np.abs(out.data - x.data).max() < 1e-4
        assert resid < 1e-5


class TestBaselineDegeneration:
    @pytest.mark.parametrize("config", ALL_CONFIGS)
    def test_lambda_s_zero_fuser_bypass_equals_spatial_oracle(self, config):
        p = init_generator(30, 4, config, 4)
        p.lam_s.data = np.zeros(4, dtype=np.float32)
        x = random_image(31, 16)
        out = generator_forward(p, x)
        oracle = np.zeros((3, 16, 16), dtype=np.float64)
        for i in range(4):
            c = out.contents.data[i] if i < 3 else x.data
            oracle = oracle + p.lam_a.data[i] * c * out.spatial_attention.data[i:i + 1]
        assert np.abs(out.pre_fuser.data - oracle).max() < 1e-6


class TestDiscriminator:
    def test_logit_map_shape_64(self):
        d = init_discriminator(0, 8)
        logits = discriminator_forward(d, random_image(1, 64))
        assert logits.shape == (1, 6, 6)

    def test_zero_weights_zero_logits(self):
        d = init_discriminator(0, 8)
        for t in d.named_tensors().values():
            t.data = np.zeros_like(t.data)
        logits = discriminator_forward(d, random_image(2, 64))
        assert np.abs(logits.data).max() == 0.0
        # sigmoid of zero logits is 0.5 everywhere
        assert np.allclose(1.0 / (1.0 + np.exp(-logits.data)), 0.5)

    def test_gradient_of_mean_logit_weight_slice(self):
        d = init_discriminator(1, 8).copy_cast(np.float64)
        img = Tensor(SplitMix64(3).normal((3, 64, 64)) * 0.5, dtype=np.float64)
        target = d.c2.w
        coords = np.linspace(0, target.size - 1, 5).astype(int).tolist()

        def f(wt):
            d.c2.w = wt
            return mean(discriminator_forward(d, img))

        err = grad_check(f, target, eps=1e-7, coords=coords)
        d.c2.w = target
        assert err < 1e-4


class TestComposedLossGradient:
    def test_full_generator_loss_five_parameter_slice(self):
        from spectragan.gradcheck import check_composed_model
        assert check_composed_model(0) < 1e-3
