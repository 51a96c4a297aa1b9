import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vamuon.errors import ConfigError, ShapeMismatchError
from vamuon.linalg import NS_COEFFS_CLASSIC, newton_schulz
from vamuon.moments import MomentState
from vamuon.optimizers import (
    ADAMW_FAMILY,
    DEFAULT_ETA,
    MUON_FAMILY,
    VARIANTS,
    AdamState,
    Optimizer,
    OptimizerConfig,
    ParamSlot,
    adamw_step,
    classify,
    clip_by_global_norm,
    muon_variant_step,
    nsr_post_scale,
    partition_params,
    precondition_nsr,
    precondition_vs,
    scale_factor,
    signum_step,
    step_slot,
)
from vamuon.verify import gamma_limit_gaps


def muon_slot(W):
    return ParamSlot("W", MUON_FAMILY, np.array(W, dtype=float), MomentState.zeros(np.shape(W)))


def adam_slot(w):
    return ParamSlot("b", ADAMW_FAMILY, np.array(w, dtype=float), AdamState.zeros(np.shape(w)))


# -- scale factors and preconditioners ------------------------------------------------------


def test_scale_factor_examples():
    assert scale_factor(1024, 256, "muon_02sqrt") == pytest.approx(6.4, abs=1e-12)
    assert scale_factor(1024, 256, "rms_ratio") == 2.0
    assert scale_factor(64, 64, "rms_ratio") == 1.0
    assert scale_factor(8, 32, "rms_ratio") == 1.0
    with pytest.raises(ValueError):
        scale_factor(0, 3, "rms_ratio")
    with pytest.raises(ValueError):
        scale_factor(3, 3, "nope")


def test_nsr_examples():
    assert float(precondition_nsr(np.array(1.0), np.array(3.0), 1.0, 0.0)) == 0.5
    M = np.array([[2.0, -0.5], [0.0, 1e-3]])
    np.testing.assert_allclose(precondition_nsr(M, np.ones_like(M), 0.0, 1e-12), np.sign(M), atol=1e-8)
    out = precondition_nsr(M, np.ones_like(M), 10.0, 1e-8)
    assert out[1, 0] == 0.0


def test_vs_examples():
    assert float(precondition_vs(np.array(2.0), np.array(4.0), 0.0)) == 1.0
    M = np.array([1.0, -2.0])
    np.testing.assert_allclose(precondition_vs(M, np.zeros(2), 1e-8), M / 1e-8)
    G = np.array([0.5, 2.0])
    np.testing.assert_allclose(precondition_vs(3.0 * M, G, 0.0), 3.0 * precondition_vs(M, G, 0.0))


def test_preconditioner_errors():
    with pytest.raises(ValueError):
        precondition_nsr(np.ones(2), np.array([1.0, -1e-9]), 1.0, 1e-8)
    with pytest.raises(ValueError):
        precondition_vs(np.ones(2), np.array([-1.0, 0.0]), 1e-8)
    with pytest.raises(ShapeMismatchError):
        precondition_nsr(np.ones(2), np.ones(3), 1.0, 1e-8)


def test_post_scale_example():
    assert float(nsr_post_scale(np.array(1.0), np.array(3.0), 1.0, 0.0)) == 2.0
    np.testing.assert_array_equal(nsr_post_scale(np.ones(3), np.zeros(3), 5.0, 1e-8), np.ones(3))


finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)
nonneg = st.floats(0.0, 1e4, allow_nan=False, allow_infinity=False)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=nonneg),
       st.floats(0.0, 1e3), st.floats(1e-12, 1e-3))
def test_gates_preserve_sign_and_nsr_is_bounded(M, G, gamma, eps):
    a = precondition_nsr(M, G, gamma, eps)
    b = precondition_vs(M, G, eps)
    # never the opposite sign; subnormal inputs may underflow to an exact zero
    assert np.all(a * M >= 0) and np.all(b * M >= 0)
    normal = np.abs(M) >= 1e-290
    assert np.array_equal(np.sign(a)[normal], np.sign(M)[normal])
    assert np.array_equal(np.sign(b)[normal], np.sign(M)[normal])
    assert np.all(np.abs(a) < 1.0)


# -- configuration -------------------------------------------------------------------------------


def test_config_defaults():
    cfg = OptimizerConfig()
    assert (cfg.variant, cfg.beta, cfg.gamma, cfg.epsilon, cfg.ns_steps) == ("muon_nsr", 0.95, 10.0, 1e-8, 5)
    assert cfg.adam_betas == (0.9, 0.95) and cfg.bias_correction
    for v in VARIANTS:
        assert OptimizerConfig(variant=v).eta == DEFAULT_ETA[v]
    assert OptimizerConfig(variant="adamw", eta=0.3).eta == 0.3


@pytest.mark.parametrize(
    "kw",
    [
        {"variant": "sgd"},
        {"eta": 0.0},
        {"beta": 1.0},
        {"gamma": -1.0},
        {"epsilon": 0.0},
        {"weight_decay": -0.1},
        {"scale_rule": "other"},
        {"ns_steps": 0},
        {"adam_betas": (0.9, 1.0)},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        OptimizerConfig(**kw)


# -- Muon-family steps -----------------------------------------------------------------------------


def test_muon_first_step_is_scaled_polar_direction():
    rng = np.random.default_rng(0)
    W, G = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    cfg = OptimizerConfig(variant="muon", eta=0.1)
    out = muon_variant_step(muon_slot(W), G, cfg, 0.1)
    expected = W - 0.1 * scale_factor(4, 6, "muon_02sqrt") * newton_schulz((1 + 0.95) * G)
    np.testing.assert_allclose(out.weights, expected, atol=1e-14)
    np.testing.assert_array_equal(out.state.M, G)
    assert out.state.t == 1


@pytest.mark.parametrize("variant", ["muon", "muon_nsr", "muon_vs", "muon_nsr_reshuffled"])
def test_zero_gradient_from_cold_state_leaves_weights(variant, caplog):
    W = np.arange(12.0).reshape(3, 4)
    slot = muon_slot(W)
    with caplog.at_level(logging.WARNING, logger="vamuon.optimizers"):
        out = muon_variant_step(slot, np.zeros_like(W), OptimizerConfig(variant=variant), 0.05)
    np.testing.assert_array_equal(out.weights, W)
    assert "zero update direction" in caplog.text


@pytest.mark.parametrize("variant", VARIANTS)
def test_pure_decoupled_decay(variant):
    W = np.random.default_rng(1).standard_normal((3, 5))
    slot = partition_params([("W", W, False)], variant)[0]
    cfg = OptimizerConfig(variant=variant, eta=0.1, weight_decay=0.1)
    for _ in range(7):
        slot = step_slot(slot, np.zeros_like(W), cfg, 0.1)
    np.testing.assert_allclose(slot.weights, W * 0.99**7, rtol=1e-14)


def test_decay_is_independent_of_update():
    rng = np.random.default_rng(2)
    W, G = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    base = muon_variant_step(muon_slot(W), G, OptimizerConfig(variant="muon_vs"), 0.1)
    decayed = muon_variant_step(muon_slot(W), G, OptimizerConfig(variant="muon_vs", weight_decay=0.1), 0.1)
    np.testing.assert_allclose(decayed.weights - base.weights, -0.01 * W, atol=1e-14)


def test_reshuffled_scalar_case():
    # M_tilde = 1, Gamma_hat = 3, gamma = 1: O = sign = 1, S = 2, O_post = 0.5
    state = MomentState(M=np.array([[0.0]]), Gamma=np.array([[0.0]]), t=0)
    slot = ParamSlot("W", MUON_FAMILY, np.zeros((1, 1)), state)
    cfg = OptimizerConfig(variant="muon_nsr_reshuffled", beta=0.0, gamma=1.0, epsilon=1e-300,
                          ns_coeffs=NS_COEFFS_CLASSIC, scale_rule="rms_ratio", bias_correction=False)
    M_tilde, Gamma_hat = np.array([[1.0]]), np.array([[3.0]])
    O = newton_schulz(M_tilde, coeffs=cfg.ns_coeffs)
    assert O[0, 0] == 1.0
    assert (O / nsr_post_scale(M_tilde, Gamma_hat, 1.0, 0.0))[0, 0] == 0.5
    # through a full step with beta = 0, Gamma stays 0, S = 1 and the step is -eta * sign(G)
    out = muon_variant_step(slot, np.array([[2.0]]), cfg, 0.1)
    assert out.weights[0, 0] == pytest.approx(-0.1, abs=1e-15)


def test_reshuffled_step_uses_damped_direction():
    rng = np.random.default_rng(3)
    W = rng.standard_normal((5, 4))
    cfg = OptimizerConfig(variant="muon_nsr_reshuffled", gamma=4.0, bias_correction=False)
    slot = muon_slot(W)
    G1, G2 = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    slot = muon_variant_step(slot, G1, cfg, 0.1)
    prev = slot
    slot = muon_variant_step(slot, G2, cfg, 0.1)
    M_tilde = G2 + (0.95 / 0.05) * slot.state.M
    O = newton_schulz(M_tilde)
    O_post = O / nsr_post_scale(M_tilde, slot.state.Gamma, 4.0, 1e-8)
    np.testing.assert_allclose(slot.weights, prev.weights - 0.1 * scale_factor(5, 4, "muon_02sqrt") * O_post,
                               atol=1e-14)


@pytest.mark.parametrize("kind", ["gamma0", "gamma_hat0"])
def test_reshuffled_reduces_to_muon(kind):
    rng = np.random.default_rng(4)
    W = rng.standard_normal((6, 3))
    gamma = 0.0 if kind == "gamma0" else 10.0
    common = dict(eta=0.05, beta=0.9, gamma=gamma, bias_correction=False)
    a, b = muon_slot(W), muon_slot(W)
    # gamma_hat0: start both states at the fixed point of a constant stream G, so the
    # surprise M - G and hence Gamma stay exactly zero
    G = rng.standard_normal((6, 3))
    if kind == "gamma_hat0":
        a = ParamSlot("W", MUON_FAMILY, W.copy(), MomentState(M=G.copy(), Gamma=np.zeros_like(G), t=5))
        b = ParamSlot("W", MUON_FAMILY, W.copy(), MomentState(M=G / (1 - 0.9), Gamma=np.zeros_like(G), t=5))
    for _ in range(10):
        g = G if kind == "gamma_hat0" else rng.standard_normal((6, 3))
        a = muon_variant_step(a, g, OptimizerConfig(variant="muon_nsr_reshuffled", **common), 0.05)
        b = muon_variant_step(b, g, OptimizerConfig(variant="muon", **common), 0.05)
        np.testing.assert_allclose(a.weights, b.weights, atol=1e-12)


def test_nsr_at_gamma_zero_orthogonalizes_the_sign_pattern():
    rng = np.random.default_rng(5)
    W, G = rng.standard_normal((6, 6)), rng.standard_normal((6, 6))
    cfg = OptimizerConfig(variant="muon_nsr", gamma=0.0, epsilon=1e-300, bias_correction=False)
    out = muon_variant_step(muon_slot(W), G, cfg, 1.0)
    O = (W - out.weights) / scale_factor(6, 6, "muon_02sqrt")
    np.testing.assert_allclose(O, newton_schulz(np.sign(G)), atol=1e-12)
    # which is not Muon's direction: elementwise normalization changes the polar factor
    muon = muon_variant_step(muon_slot(W), G, OptimizerConfig(variant="muon", bias_correction=False), 1.0)
    O_muon = (W - muon.weights) / scale_factor(6, 6, "muon_02sqrt")
    assert np.linalg.norm(O - O_muon) / np.linalg.norm(O_muon) > 0.1


def test_large_gamma_trend_and_scalar_case():
    g8 = max(gamma_limit_gaps(1e8, steps=20))
    g12 = max(gamma_limit_gaps(1e12, steps=20))
    assert g8 <= 1e-3 and g12 < g8
    gaps = gamma_limit_gaps(1e8, steps=20, shape=(1, 1))
    assert max(gaps) == 0.0


def test_muon_step_rejects_vector_slot():
    with pytest.raises(ValueError):
        muon_variant_step(adam_slot(np.ones(3)), np.ones(3), OptimizerConfig(), 0.1)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        muon_variant_step(muon_slot(np.ones((2, 2))), np.ones((2, 3)), OptimizerConfig(), 0.1)


# -- baselines ------------------------------------------------------------------------------------------


def test_adamw_constant_gradient_approaches_sign_step():
    g = np.array([0.3, -2.0, 5.0])
    cfg = OptimizerConfig(variant="adamw", eta=0.01)
    slot = adam_slot(np.zeros(3))
    for _ in range(300):
        prev = slot.weights
        slot = adamw_step(slot, g, cfg, 0.01)
    np.testing.assert_allclose(slot.weights - prev, -0.01 * np.sign(g), atol=1e-9)


def test_adamw_first_step_matches_hand_computation():
    cfg = OptimizerConfig(variant="adamw", eta=0.1, weight_decay=0.5)
    out = adamw_step(adam_slot([1.0, 2.0]), np.array([0.5, -4.0]), cfg, 0.1)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    expected = np.array([1.0, 2.0]) * (1 - 0.05) - 0.1 * np.array([0.5, -4.0]) / (np.abs([0.5, -4.0]) + 1e-8)
    np.testing.assert_allclose(out.weights, expected, atol=1e-15)


def test_signum_examples():
    cfg = OptimizerConfig(variant="signum", eta=0.1, beta=0.0)
    slot = ParamSlot("w", ADAMW_FAMILY, np.zeros(3), MomentState.zeros((3,)))
    out = signum_step(slot, np.array([2.0, 0.0, -1e-9]), cfg, 0.1)
    np.testing.assert_array_equal(out.weights, [-0.1, 0.0, 0.1])
    w = []
    for t in range(6):
        prev = slot.weights
        slot = signum_step(slot, np.array([1.0 if t % 2 == 0 else -1.0] * 3), cfg, 0.1)
        w.append(float((slot.weights - prev)[0]))
    assert w == pytest.approx([-0.1, 0.1] * 3)


# -- partitioning, clipping, wrapper ----------------------------------------------------------------------


def test_partition_examples():
    slots = partition_params(
        [("blk.w", np.zeros((64, 64)), False), ("blk.b", np.zeros(64), False), ("emb", np.zeros((100, 8)), True)]
    )
    assert [s.family for s in slots] == [MUON_FAMILY, ADAMW_FAMILY, ADAMW_FAMILY]
    assert [s.id for s in slots] == ["blk.w", "blk.b", "emb"]
    assert isinstance(slots[0].state, MomentState) and isinstance(slots[1].state, AdamState)
    assert classify((64, 64)) == MUON_FAMILY
    with pytest.raises(ShapeMismatchError):
        partition_params([("conv", np.zeros((3, 3, 3)), False)])
    with pytest.raises(ValueError):
        partition_params([("a", np.zeros(2), False), ("a", np.zeros(2), False)])


def test_partition_for_adamw_variant():
    slots = partition_params([("w", np.zeros((4, 4)), False)], "adamw")
    assert slots[0].family == ADAMW_FAMILY


def test_hybrid_step_uses_adam_eta_for_vectors():
    cfg = OptimizerConfig(variant="muon_vs", eta=0.05, adam_eta=0.001)
    opt = Optimizer.from_params([("W", np.zeros((3, 3)), False), ("b", np.zeros(3), False)], cfg)
    opt.step({"W": np.ones((3, 3)), "b": np.ones(3)}, 0.05, 0.001)
    np.testing.assert_allclose(opt.params["b"], -0.001 * np.ones(3), atol=1e-10)
    with pytest.raises(ShapeMismatchError):
        opt.step([np.ones((3, 3))], 0.05)


def test_clip_by_global_norm():
    grads = [np.array([3.0, 0.0]), np.array([[0.0, 4.0]])]
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert math.sqrt(sum(float(np.sum(g**2)) for g in clipped)) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(clipped[0], [0.6, 0.0])
    same, _ = clip_by_global_norm(grads, None)
    assert same[0] is grads[0]
    untouched, _ = clip_by_global_norm(grads, 10.0)
    assert untouched[1] is grads[1]
