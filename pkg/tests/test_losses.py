"""Objective-level checks: brute-force oracles for the contrastive
scores, the reduction identities tying compressed to plain variants,
and finite-difference validation through full encoder stacks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cebmv import autodiff as ad
from cebmv import losses, vmf
from cebmv.bessel import log_vmf_normalizer
from cebmv.encoders import EncoderStack, StackConfig

TINY_STACK = dict(input_dim=6, trunk_hidden=(8,), repr_dim=8, proj_hidden=8, proj_dim=8)


def unit_rows(b, n, seed):
    r = np.random.default_rng(seed).normal(size=(b, n))
    return r / np.linalg.norm(r, axis=1, keepdims=True)


class TestLossConfig:
    def test_derived_quantities_are_exact(self):
        cfg = losses.LossConfig(variant="c_simclr", kappa_b=10.0, kappa_d=4.0)
        assert cfg.temperature == 1.0 / 10.0
        assert cfg.byol_weight == 2.0
        assert cfg.temperature * cfg.kappa_b == 1.0

    def test_variant_defaults(self):
        assert losses.LossConfig.defaults("c_simclr").kappa_e == 1024.0
        assert losses.LossConfig.defaults("c_byol").kappa_e == 16384.0
        assert losses.LossConfig.defaults("simclr").deterministic_z
        assert losses.LossConfig.defaults("c_simclr", beta=0.5).beta == 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            losses.LossConfig(variant="nope")
        with pytest.raises(ValueError):
            losses.LossConfig(variant="simclr", beta=-0.1)
        with pytest.raises(ValueError):
            losses.LossConfig(variant="simclr", kappa_b=0.0)


class TestInfoNce:
    def test_matches_brute_force_softmax(self):
        b, n, kappa = 6, 5, 7.0
        z = unit_rows(b, n, 0)
        dirs = unit_rows(b, n, 1)
        h, i_yz = losses.info_nce(ad.constant(z), ad.constant(dirs), kappa)
        logits = kappa * (z @ dirs.T)
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        expected_h = -np.log(np.diag(probs))
        assert np.allclose(h.data, expected_h, atol=1e-12)
        assert np.allclose(i_yz.data, math.log(b) - expected_h, atol=1e-12)

    def test_identical_rows_give_log_b(self):
        # indistinguishable candidates: uniform softmax, h = log B, i_yz = 0
        b, n = 8, 4
        row = unit_rows(1, n, 2)
        z = np.repeat(row, b, axis=0)
        h, i_yz = losses.info_nce(ad.constant(z), ad.constant(z), 5.0)
        assert np.allclose(h.data, math.log(b), atol=1e-12)
        assert np.allclose(i_yz.data, 0.0, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(min_value=2, max_value=12), st.integers(min_value=2, max_value=9),
           st.floats(min_value=0.1, max_value=64.0), st.integers(min_value=0, max_value=10**6))
    def test_bound_and_sign_properties(self, b, n, kappa, seed):
        z = unit_rows(b, n, seed)
        dirs = unit_rows(b, n, seed + 1)
        h, i_yz = losses.info_nce(ad.constant(z), ad.constant(dirs), kappa)
        assert np.all(h.data >= 0.0)
        assert np.all(i_yz.data <= math.log(b) + 1e-12)

    def test_rejects_non_unit_rows(self):
        z = unit_rows(4, 3, 3) * 1.01
        with pytest.raises(ValueError):
            losses.info_nce(ad.constant(z), ad.constant(unit_rows(4, 3, 4)), 5.0)


class TestReductionIdentities:
    def test_simclr_equals_beta_zero_compressed_plus_log_b(self):
        # deterministic z turns the compressed contrastive objective into
        # plain InfoNCE shifted by the constant 2 log B
        cfg = losses.LossConfig(variant="c_simclr", beta=0.0, deterministic_z=True)
        for seed in range(100):
            b = int(np.random.default_rng(seed).integers(2, 17))
            r_x = unit_rows(b, 6, 2 * seed)
            r_y = unit_rows(b, 6, 2 * seed + 1)
            plain = losses.simclr_loss(ad.constant(r_x), ad.constant(r_y), cfg.temperature)
            comp = losses.c_simclr_loss(ad.constant(r_x), ad.constant(r_y), cfg)
            gap = plain.total.item() - (comp.total.item() + 2.0 * math.log(b))
            assert abs(gap) < 1e-10, f"seed {seed}: residual {gap}"

    def test_c_byol_beta_zero_identity_decoder_equals_weighted_byol(self):
        b, n = 5, 8
        cfg = losses.LossConfig(variant="c_byol", beta=0.0, deterministic_z=True, kappa_d=4.0)
        mu_e = ad.l2_normalize_rows(ad.Tensor(np.random.default_rng(0).normal(size=(b, n)),
                                              requires_grad=True))
        y_same = ad.constant(unit_rows(b, n, 1))
        mu_b = ad.constant(unit_rows(b, n, 2))
        y_other = ad.constant(unit_rows(b, n, 3))
        comp = losses.c_byol_loss(mu_e, y_same, mu_b, y_other, lambda z: z, cfg)
        plain = losses.byol_loss(ad.l2_normalize_rows(mu_e), y_other, cfg.byol_weight)
        assert comp.total.item() == plain.total.item()
        assert np.array_equal(comp.per_sample, plain.per_sample)

    def test_kappa_two_decoder_is_squared_error_plus_constant(self):
        b, n = 7, 9
        y_hat = unit_rows(b, n, 5)
        y_prime = unit_rows(b, n, 6)
        nll = losses.neg_log_decoder(y_hat, y_prime, kappa_d=2.0)
        sq = ((y_hat - y_prime) ** 2).sum(axis=1)
        const = 2.0 + log_vmf_normalizer(n, 2.0)
        assert np.allclose(nll, sq - const, atol=1e-12)

    def test_total_is_affine_in_beta(self):
        r_x = unit_rows(6, 8, 7)
        r_y = unit_rows(6, 8, 8)

        def total_at(beta):
            cfg = losses.LossConfig(variant="c_simclr", beta=beta)
            rng = np.random.default_rng(11)
            return losses.c_simclr_loss(ad.constant(r_x), ad.constant(r_y), cfg, rng).total.item()

        lo, mid, hi = total_at(0.0), total_at(1.0), total_at(2.0)
        assert abs((hi - mid) - (mid - lo)) < 1e-9

    def test_breakdown_consistency_c_simclr(self):
        # total = mean over batch of the summed per-direction terms
        cfg = losses.LossConfig(variant="c_simclr", beta=1.3)
        rng = np.random.default_rng(12)
        out = losses.c_simclr_loss(ad.constant(unit_rows(5, 6, 9)),
                                   ad.constant(unit_rows(5, 6, 10)), cfg, rng)
        assert abs(out.total.item() - out.per_sample.mean()) < 1e-12
        recon = cfg.beta * out.per_sample_terms["i_xzy"] - out.per_sample_terms["i_yz"]
        assert np.allclose(2.0 * recon, out.per_sample, atol=1e-10)

    def test_expected_i_xzy_matches_kl(self):
        # averaging i_xzy over many draws approaches KL(e || b)
        b, n = 4, 6
        cfg = losses.LossConfig(variant="c_simclr", beta=1.0, kappa_e=48.0, kappa_b=9.0)
        r_x = unit_rows(b, n, 13)
        r_y = unit_rows(b, n, 14)
        rng = np.random.default_rng(15)
        vals = [losses.c_simclr_loss(ad.constant(r_x), ad.constant(r_y), cfg, rng).i_xzy
                for _ in range(400)]
        est = float(np.mean(vals))
        kls = [vmf.kl(vmf.VonMisesFisher(r_x[i], cfg.kappa_e), vmf.VonMisesFisher(r_y[i], cfg.kappa_b))
               for i in range(b)]
        kls += [vmf.kl(vmf.VonMisesFisher(r_y[i], cfg.kappa_e), vmf.VonMisesFisher(r_x[i], cfg.kappa_b))
                for i in range(b)]
        expected = float(np.mean(kls))
        se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
        assert abs(est - expected) < 5.0 * se


class TestByolLoss:
    def test_requires_detached_target(self):
        pred = ad.l2_normalize_rows(ad.Tensor(unit_rows(3, 4, 20), requires_grad=True))
        live = ad.l2_normalize_rows(ad.Tensor(unit_rows(3, 4, 21), requires_grad=True))
        with pytest.raises(ValueError):
            losses.byol_loss(pred, live, 1.0)

    def test_zero_at_perfect_prediction(self):
        rows = unit_rows(4, 5, 22)
        out = losses.byol_loss(ad.constant(rows), ad.constant(rows), 2.5)
        assert out.total.item() == 0.0

    def test_value_against_cosine_form(self):
        # |a - b|^2 = 2 - 2 a.b on the sphere
        a, b = unit_rows(6, 7, 23), unit_rows(6, 7, 24)
        out = losses.byol_loss(ad.constant(a), ad.constant(b), 1.0)
        expected = 2.0 - 2.0 * np.einsum("ij,ij->i", a, b)
        assert np.allclose(out.per_sample, expected, atol=1e-12)


def _swap_param(owner, attr, build):
    original = getattr(owner, attr)

    def f(probe):
        setattr(owner, attr, probe)
        try:
            return build()
        finally:
            setattr(owner, attr, original)

    return f, original


def _c_simclr_forward(stack, x_a, x_b, cfg, seed):
    def build():
        rng = np.random.default_rng(seed)
        _, r_x = stack.project_unit(ad.constant(x_a), training=True)
        _, r_y = stack.project_unit(ad.constant(x_b), training=True)
        return losses.c_simclr_loss(r_x, r_y, cfg, rng).total

    return build


def _c_byol_forward(stack, x_a, x_b, cfg, seed):
    def build():
        rng = np.random.default_rng(seed)
        mu_e = stack.predictor_unit(ad.constant(x_a), training=True)
        y_same = stack.target_unit(ad.constant(x_a), training=True)
        mu_b = stack.backward_mean_unit(y_same, training=True)
        y_other = stack.target_unit(ad.constant(x_b), training=True)
        return losses.c_byol_loss(mu_e, y_same, mu_b, y_other, stack.decode, cfg, rng).total

    return build


class TestFullLossGradients:
    """Finite differences through entire stacks; the acceptance suite
    sweeps every parameter, these cover one matrix per head."""

    def test_c_simclr_sampled_z_selected_params(self):
        stack = EncoderStack(StackConfig(variant="c_simclr", **TINY_STACK), seed=1)
        x_a = np.random.default_rng(30).normal(size=(4, 6))
        x_b = np.random.default_rng(31).normal(size=(4, 6))
        cfg = losses.LossConfig(variant="c_simclr", beta=1.0, kappa_e=64.0, kappa_b=6.0)
        build = _c_simclr_forward(stack, x_a, x_b, cfg, seed=77)
        for name, owner, attr, _ in stack.trainable_slots():
            if name not in ("trunk.0.weight", "projection.bn.gain", "projection.fc2.bias"):
                continue
            f, original = _swap_param(owner, attr, build)
            err = ad.grad_check(f, original)
            assert err < 1e-4, f"{name}: {err}"

    def test_c_byol_sampled_z_selected_params(self):
        stack = EncoderStack(StackConfig(variant="c_byol", **TINY_STACK), seed=4)
        x_a = np.random.default_rng(32).normal(size=(4, 6))
        x_b = np.random.default_rng(33).normal(size=(4, 6))
        cfg = losses.LossConfig(variant="c_byol", beta=1.0, kappa_e=256.0, kappa_b=8.0,
                                kappa_d=4.0)
        build = _c_byol_forward(stack, x_a, x_b, cfg, seed=78)
        for name, owner, attr, _ in stack.trainable_slots():
            if name not in ("predictor.fc1.weight", "m_head.fc2.weight", "l_head.weight",
                            "trunk.1.weight"):
                continue
            f, original = _swap_param(owner, attr, build)
            err = ad.grad_check(f, original)
            assert err < 1e-4, f"{name}: {err}"

    def test_target_parameters_receive_no_gradient(self):
        stack = EncoderStack(StackConfig(variant="c_byol", **TINY_STACK), seed=3)
        x_a = np.random.default_rng(34).normal(size=(4, 6))
        x_b = np.random.default_rng(35).normal(size=(4, 6))
        cfg = losses.LossConfig(variant="c_byol", beta=1.0, kappa_e=128.0)
        total = _c_byol_forward(stack, x_a, x_b, cfg, seed=79)()
        ad.backward(total)
        for name, tensor, _ in stack.named_parameters():
            if name.startswith("target_"):
                assert tensor.grad is None, name
            elif name.startswith(("trunk.", "projection.", "predictor.")):
                assert tensor.grad is not None, name
