import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

import oracles
from rmt import build_model, model_config
from rmt.memory import matrix_layernorm, outer_store, retrieve
from rmt.rmt import (RETRIEVAL_KEYS, STORAGE_KEYS, RMTConfig, read, rmt_ff, rmt_mha, rmt_param_vars,
                     rmt_unembed)


def tiny(seed=0, **fields):
    cfg = model_config("rmt", fields, preset="tiny")
    model = build_model("rmt", cfg, seed=seed, dtype=torch.float64)
    g = torch.Generator().manual_seed(seed + 99)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.rsplit(".", 1)[-1].startswith("ln_"):
                p.copy_(0.5 + torch.rand(p.shape, generator=g, dtype=p.dtype))
    return model


def small(D_k, D_v, R, V=5, N=4, L=1, D_FF=8):
    return build_model("rmt", RMTConfig(V=V, N=N, D_k=D_k, D_v=D_v, R=R, L=L, D_FF=D_FF), dtype=torch.float64)


def basis_keys(model):
    """Set every key/storage vector to a standard basis vector e_h (needs D_k == R)."""
    eye = torch.eye(model.cfg.R, dtype=torch.float64)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.rsplit(".", 1)[-1] in RETRIEVAL_KEYS + STORAGE_KEYS:
                p.copy_(eye)


def test_embed_single_outer_product():
    m = small(D_k=2, D_v=2, R=1)
    with torch.no_grad():
        m.w_E.copy_(torch.tensor([[1.0, 0.0]]))
        m.W_E[0, :, 3] = torch.tensor([3.0, 5.0])
        m.W_PE.zero_()
    X = m.embed([3])
    assert X[0].tolist() == [[3.0, 5.0], [0.0, 0.0]]


def test_embed_orthonormal_recovery():
    m = small(D_k=4, D_v=3, R=2)
    with torch.no_grad():
        m.w_E.copy_(torch.eye(4)[:2])
        m.w_PE.copy_(torch.eye(4)[2:])
    X = m.embed([1, 4, 2])
    for t, tok in enumerate([1, 4, 2]):
        assert torch.allclose(retrieve(m.w_E[0], X[t]), m.W_E[0, :, tok], atol=1e-15)
        assert torch.allclose(retrieve(m.w_PE[1], X[t]), m.W_PE[1, :, t], atol=1e-15)


def test_embed_matches_outer_store_oracle():
    m = tiny(seed=2)
    tokens = [3, 10, 0, 5]
    P = oracles.np_params(m)
    expected = oracles.rmt_embed(P, tokens)
    X = m.embed(tokens).detach()
    for t in range(4):
        np.testing.assert_allclose(X[t].numpy(), expected[t], rtol=0, atol=1e-12)
        pairs = [(m.w_E[h], m.W_E[h, :, tokens[t]]) for h in range(4)]
        pairs += [(m.w_PE[h], m.W_PE[h, :, t]) for h in range(4)]
        assert torch.allclose(X[t], outer_store(pairs).detach(), atol=1e-12)


def test_embed_rejects_bad_tokens():
    m = tiny()
    with pytest.raises(ValueError):
        m.embed([11])
    with pytest.raises(ValueError):
        m.embed(list(range(9)))


def test_mha_single_position():
    m = tiny(seed=1)
    layer = m.layers[0]
    x = torch.randn(1, 8, 4, dtype=torch.float64)
    expected = sum(torch.outer(layer.w_O[h], layer.r_V[h] @ x[0]) for h in range(4))
    assert torch.allclose(rmt_mha(x, layer)[0], expected, atol=1e-12)


def test_mha_basis_keys_write_own_row():
    m = small(D_k=3, D_v=4, R=3, N=5)
    basis_keys(m)
    layer = m.layers[0]
    x = torch.randn(5, 3, 4, dtype=torch.float64)
    Q = read(layer.r_Q, x)
    for h in range(3):
        assert torch.equal(Q[h], x[:, h, :])
    out = rmt_mha(x, layer)
    # head h only depends on row h of the input and writes row h of the output
    x2 = x.clone()
    x2[:, 1, :] = torch.randn(5, 4, dtype=torch.float64)
    out2 = rmt_mha(x2, layer)
    assert torch.equal(out[:, [0, 2], :], out2[:, [0, 2], :])
    assert not torch.allclose(out[:, 1, :], out2[:, 1, :])


def test_mha_matches_loop_oracle():
    m = tiny(seed=4)
    x = torch.randn(6, 8, 4, dtype=torch.float64)
    P = oracles.np_params(m)
    expected = oracles.rmt_attention(list(x.numpy()), P, "layers.1.")
    got = rmt_mha(x, m.layers[1]).detach().numpy()
    for t in range(6):
        np.testing.assert_allclose(got[t], expected[t], rtol=0, atol=1e-10)


def test_ff_zero_core():
    m = tiny()
    layer = m.layers[0]
    with torch.no_grad():
        layer.W_1.zero_()
    x = torch.randn(3, 8, 4, dtype=torch.float64)
    assert torch.equal(rmt_ff(x, layer), torch.zeros_like(x))


def test_ff_identity_core_is_projection():
    m = small(D_k=4, D_v=4, R=2, D_FF=8)
    layer = m.layers[0]
    q, _ = torch.linalg.qr(torch.randn(4, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(0)))
    keys = q[:, :2].T.contiguous()
    with torch.no_grad():
        layer.r_FF.copy_(keys)
        layer.w_FF.copy_(keys)
        layer.W_1.copy_(torch.eye(8))
        layer.W_2.copy_(torch.eye(8))
    x = torch.randn(2, 4, 4, dtype=torch.float64)
    projector = keys.T @ keys
    got = rmt_ff(x, layer, activation=lambda z: z)
    assert torch.allclose(got, projector @ x, atol=1e-12)


def test_ff_channel_major_layout():
    m = small(D_k=2, D_v=3, R=2, D_FF=6)
    layer = m.layers[0]
    basis_keys(m)
    perm = torch.eye(6, dtype=torch.float64)
    with torch.no_grad():
        layer.W_1.copy_(perm)
        layer.W_2.copy_(perm)
    x = torch.arange(6, dtype=torch.float64).reshape(1, 2, 3)
    # channel h occupies entries [3h, 3h+3) of the core vector and is written back to row h
    assert torch.equal(rmt_ff(x, layer, activation=lambda z: z), x)


def test_ff_matches_oracle():
    m = tiny(seed=6)
    x = torch.randn(5, 8, 4, dtype=torch.float64)
    P = oracles.np_params(m)
    expected = oracles.rmt_feedforward(list(x.numpy()), P, "layers.0.")
    got = rmt_ff(x, m.layers[0]).detach().numpy()
    for t in range(5):
        np.testing.assert_allclose(got[t], expected[t], rtol=0, atol=1e-10)


def test_unembed_examples():
    m = small(D_k=3, D_v=2, R=1, V=5)
    with torch.no_grad():
        m.r_U.copy_(torch.tensor([[1.0, 0.0, 0.0]]))
    x = torch.randn(4, 3, 2, dtype=torch.float64)
    got = rmt_unembed(x, m.r_U, m.W_U)
    assert torch.allclose(got, x[:, 0, :] @ m.W_U[0].T, atol=1e-14)
    assert torch.equal(rmt_unembed(torch.zeros_like(x), m.r_U, m.W_U), torch.zeros(4, 5, dtype=torch.float64))
    t = tiny(seed=3)
    xs = torch.randn(3, 8, 4, dtype=torch.float64)
    expected = oracles.rmt_unembed(list(xs.numpy()), oracles.np_params(t))
    np.testing.assert_allclose(rmt_unembed(xs, t.r_U, t.W_U).detach().numpy().T, expected, rtol=0, atol=1e-12)


def test_forward_matches_straight_line_oracle():
    m = tiny(seed=8)
    tokens = [1, 9, 4, 4, 0, 10, 2, 7]
    expected = oracles.rmt_forward(oracles.np_params(m), tokens, L=2)
    got = m(torch.tensor(tokens)).detach().numpy().T
    assert np.abs(got - expected).max() <= 1e-10


def test_model_layernorm_matches_reference():
    m = tiny(seed=1)
    X = torch.randn(2, 3, 8, 4, dtype=torch.float64)
    assert torch.allclose(m.ln(X, m.ln_final), matrix_layernorm(X, m.ln_final), atol=1e-13)
    row = tiny(seed=1, ln_mode="row")
    assert torch.allclose(row.ln(X, row.ln_final), matrix_layernorm(X, row.ln_final, mode="row"), atol=1e-13)


def test_l0_collapse():
    m = tiny(L=0)
    tokens = torch.tensor([5, 6, 7, 0])
    expected = rmt_unembed(matrix_layernorm(m.embed(tokens), m.ln_final), m.r_U, m.W_U)
    assert torch.allclose(m(tokens), expected, atol=1e-13)


def test_residual_additivity():
    # replaying embed + (pre-state + delta) per sublayer reproduces forward bit for bit
    m = tiny(seed=3)
    tokens = torch.randint(0, 11, (2, 8))
    X = m.embed(tokens)
    for layer in m.layers:
        X = X + rmt_mha(m.ln(X, layer.ln_attn), layer)
        X = X + rmt_ff(m.ln(X, layer.ln_ff), layer)
    manual = rmt_unembed(m.ln(X, m.ln_final), m.r_U, m.W_U)
    assert torch.equal(manual, m(tokens))


def test_basis_key_rows_independent():
    m = small(D_k=4, D_v=3, R=4, N=6)
    basis_keys(m)
    layer = m.layers[0]
    x = torch.randn(6, 4, 3, dtype=torch.float64)
    zeroed = x.clone()
    zeroed[:, 2, :] = 0
    for name in ("r_Q", "r_K", "r_V"):
        a, b = read(getattr(layer, name), x), read(getattr(layer, name), zeroed)
        for h in (0, 1, 3):
            assert torch.equal(a[h], b[h])
        assert torch.equal(b[2], torch.zeros(6, 3, dtype=torch.float64))


@given(st.floats(-4, 4, allow_nan=False), st.integers(0, 2**31 - 1))
def test_retrieval_key_scaling(alpha, seed):
    g = torch.Generator().manual_seed(seed)
    keys = torch.randn(4, 8, dtype=torch.float64, generator=g)
    x = torch.randn(2, 5, 8, 4, dtype=torch.float64, generator=g)
    assert torch.allclose(read(alpha * keys, x), alpha * read(keys, x), rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(1, 7))
def test_causality(seed, t):
    m = tiny(seed=seed % 5)
    g = torch.Generator().manual_seed(seed)
    a = torch.randint(0, 11, (8,), generator=g)
    b = a.clone()
    b[t:] = torch.randint(0, 11, (8 - t,), generator=g)
    assert torch.equal(m(a)[:t], m(b)[:t])


def test_short_sequences_use_leading_positions():
    m = tiny(seed=2)
    full = m(torch.tensor([1, 2, 3, 4, 5, 6, 7, 8]))
    assert torch.allclose(m(torch.tensor([1, 2, 3]))[:3], full[:3], atol=1e-13)


def test_unit_init_variances():
    cfg = RMTConfig(V=256, N=64, D_k=256, D_v=32, R=64, L=2, D_FF=512)
    m = build_model("rmt", cfg, seed=0, dtype=torch.float64)
    for name, p in m.named_parameters():
        short = name.rsplit(".", 1)[-1]
        if short in RETRIEVAL_KEYS:
            assert float(p.detach().var()) == pytest.approx(1 / 256, rel=0.05), name
        elif short in STORAGE_KEYS:
            assert float(p.detach().var()) == pytest.approx(1 / 64, rel=0.05), name


def test_xavier_key_fans():
    cfg = RMTConfig(D_k=64, R=16, key_init="xavier")
    v = rmt_param_vars(cfg)
    assert v["r_Q"] == v["r_K"] == v["r_V"] == pytest.approx(2 / (64 + 48))
    assert v["r_FF"] == v["r_U"] == pytest.approx(2 / 80)
    assert all(v[k] == pytest.approx(2 / 80) for k in STORAGE_KEYS)


def test_parameter_shapes():
    m = tiny()
    shapes = {k: tuple(v.shape) for k, v in m.named_parameters()}
    assert shapes["W_E"] == (4, 4, 11) and shapes["W_PE"] == (4, 4, 8)
    assert shapes["W_U"] == (4, 11, 4) and shapes["r_U"] == (4, 8)
    assert shapes["layers.0.W_1"] == (32, 16) and shapes["layers.0.W_2"] == (16, 32)
    assert shapes["layers.1.ln_attn"] == (8, 4)
    assert not any("bias" in k for k in shapes)


def test_config_validation():
    with pytest.raises(ValueError):
        RMTConfig(R=0)
    with pytest.raises(ValueError):
        RMTConfig(ln_mode="col")
    with pytest.raises(ValueError):
        RMTConfig(key_init="he")
