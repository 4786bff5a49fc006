import math

import numpy as np
import pytest
import torch

from pull_logs.errors import CheckpointError, InvalidConfigError, NumericError, ShapeError
from pull_logs.model import (
    AdamState,
    EncoderConfig,
    adam_step,
    forward,
    gradients,
    instantiate,
    load_checkpoint,
    parameter_count,
    parameter_digest,
    save_checkpoint,
    score_arrays,
    sinusoidal_encoding,
)
from pull_logs.tokenizer import PAD_ID, TokenSequence, Vocabulary, build_vocabulary

TINY = EncoderConfig(embed_dim=8, hidden_dim=16, n_layers=1, n_heads=1, dropout=0.0, seq_len=4, seed=3)


def seq(ids, n_real, line_id=0):
    return TokenSequence(tuple(ids), tuple([True] * n_real + [False] * (len(ids) - n_real)), line_id)


def closed_form_count(vocab, d, h, layers):
    per_layer = (
        2 * d  # norm1
        + 4 * (d * d + d)  # query, key, value, out
        + 2 * d  # norm2
        + (d * h + h)  # ff1
        + (h * d + d)  # ff2
    )
    return vocab * d + layers * per_layer


def test_default_parameter_count():
    model = instantiate(EncoderConfig(), 100)
    assert parameter_count(model) == closed_form_count(100, 128, 256, 2) == 100 * 128 + 264_960


def test_heads_must_divide_dim():
    with pytest.raises(InvalidConfigError):
        instantiate(EncoderConfig(embed_dim=128, n_heads=3), 50)
    with pytest.raises(InvalidConfigError):
        instantiate(EncoderConfig(), 4)


def test_instantiate_is_deterministic():
    a, b = instantiate(EncoderConfig(seed=1), 30), instantiate(EncoderConfig(seed=1), 30)
    assert parameter_digest(a) == parameter_digest(b)
    assert parameter_digest(a) != parameter_digest(instantiate(EncoderConfig(seed=2), 30))


def test_xavier_bounds():
    model = instantiate(EncoderConfig(), 200)
    w = model.embedding.weight
    bound = math.sqrt(6 / (200 + 128))
    assert w.abs().max() <= bound and w.abs().max() > 0.9 * bound
    assert torch.all(model.layers[0].ff1.bias == 0)
    assert torch.all(model.layers[0].norm1.weight == 1)


def test_sinusoidal_values():
    pe = sinusoidal_encoding(3, 4)
    assert pe[0].tolist() == [0.0, 1.0, 0.0, 1.0]
    assert pe[1, 0].item() == pytest.approx(math.sin(1.0))
    assert pe[1, 3].item() == pytest.approx(math.cos(1.0 / 100.0), rel=1e-6)


def test_forward_shapes_and_scores():
    model = instantiate(EncoderConfig(seq_len=6), 20)
    outs = forward(model, [seq([1, 7, 8, 9, 0, 0], 4), seq([1, 5, 0, 0, 0, 0], 2)])
    for o in outs:
        assert o.cls_vector.shape == (128,)
        assert o.per_token.shape == (6, 128)
        assert o.score >= 0
        assert o.score == pytest.approx(float(np.linalg.norm(o.cls_vector)), rel=1e-6)
        assert np.array_equal(o.per_token[0], o.cls_vector)


def test_padding_positions_do_not_matter():
    model = instantiate(EncoderConfig(seq_len=6, seed=9), 20)
    a = seq([1, 7, 8, 0, 0, 0], 3)
    b = seq([1, 7, 8, 13, 2, 19], 3)  # garbage under a false mask
    oa, ob = forward(model, [a, b])
    assert oa.score == ob.score
    assert np.array_equal(oa.cls_vector, ob.cls_vector)


def test_positional_encoding_breaks_permutation_symmetry():
    model = instantiate(EncoderConfig(seq_len=5, seed=4), 20)
    oa, ob = forward(model, [seq([1, 7, 8, 9, 0], 4), seq([1, 8, 7, 9, 0], 4)])
    assert not np.allclose(oa.cls_vector, ob.cls_vector)


def test_length_mismatch():
    model = instantiate(EncoderConfig(seq_len=5), 20)
    with pytest.raises(ShapeError):
        forward(model, [seq([1, 2, 3], 3)])
    with pytest.raises(ShapeError):
        forward(model, [])


def test_dropout_only_in_train_mode():
    model = instantiate(EncoderConfig(seq_len=5, dropout=0.5), 20)
    batch = [seq([1, 7, 8, 9, 0], 4)]
    assert forward(model, batch)[0].score == forward(model, batch)[0].score
    torch.manual_seed(0)
    s1 = forward(model, batch, train_mode=True)[0].score
    s2 = forward(model, batch, train_mode=True)[0].score
    assert s1 != s2


def test_score_arrays_match_forward():
    model = instantiate(EncoderConfig(seq_len=5, seed=1), 20)
    batch = [seq([1, 7, 8, 9, 0], 4), seq([1, 3, 0, 0, 0], 2)]
    ids = np.array([s.ids for s in batch])
    mask = np.array([s.mask for s in batch])
    np.testing.assert_allclose(score_arrays(model, ids, mask, batch_size=1), [o.score for o in forward(model, batch)], rtol=1e-6)


# ---------------------------------------------------------------------------
# gradients vs central finite differences


def _loss64(model, batch, labels, q):
    from pull_logs.model import batch_tensors
    from pull_logs.objective import pu_loss_from_outputs

    ids, mask = batch_tensors(batch, model.config.seq_len)
    with torch.no_grad():
        return float(pu_loss_from_outputs(model.cls(ids, mask), torch.tensor(labels, dtype=torch.float64), q).mean())


def _finite_difference_check(model, batch, labels, q, n_coords, seed, h=1e-6):
    grads = gradients(model, batch, labels, q)
    params = dict(model.named_parameters())
    rng = np.random.default_rng(seed)
    names = [n for n in grads if grads[n].abs().max() > 0]
    worst = 0.0
    for _ in range(n_coords):
        name = names[rng.integers(len(names))]
        p = params[name]
        flat = int(rng.integers(p.numel()))
        with torch.no_grad():
            orig = p.view(-1)[flat].item()
            p.view(-1)[flat] = orig + h
            up = _loss64(model, batch, labels, q)
            p.view(-1)[flat] = orig - h
            down = _loss64(model, batch, labels, q)
            p.view(-1)[flat] = orig
        numeric = (up - down) / (2 * h)
        analytic = grads[name].view(-1)[flat].item()
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, rel)
    return worst


def tiny_model(seed=3):
    return instantiate(EncoderConfig(**{**TINY.__dict__, "seed": seed}), 12).double().eval()


def test_gradient_single_positive_sample():
    model = tiny_model()
    assert _finite_difference_check(model, [seq([1, 5, 6, 0], 3)], [0.0], 0.5, 60, seed=0) <= 1e-3


def test_gradient_mixed_batch_many_coordinates():
    model = tiny_model(seed=8)
    batch = [seq([1, 5, 6, 7], 4), seq([1, 9, 0, 0], 2), seq([1, 10, 11, 0], 3)]
    assert _finite_difference_check(model, batch, [0.0, 1.0, 0.4], 0.7, 150, seed=1) <= 1e-3


def test_gradient_with_only_cls_real():
    model = tiny_model()
    grads = gradients(model, [seq([1, 0, 0, 0], 1)], [1.0], 0.5)
    assert all(torch.isfinite(g).all() for g in grads.values())


def test_gradient_empty_batch():
    with pytest.raises(ShapeError):
        gradients(tiny_model(), [], [], 0.5)


def test_gradient_non_finite_loss_names_line():
    model = tiny_model()
    with torch.no_grad():
        model.embedding.weight[5, 0] = float("nan")
    with pytest.raises(NumericError, match="line_id 42"):
        gradients(model, [seq([1, 5, 0, 0], 2, line_id=42)], [0.0], 0.5)


# ---------------------------------------------------------------------------
# Adam


class Scalar(torch.nn.Module):
    def __init__(self, value):
        super().__init__()
        self.w = torch.nn.Parameter(torch.tensor([value], dtype=torch.float64))


def test_adam_zero_gradient_fixed_point():
    m = Scalar(1.5)
    adam_step(m, {"w": torch.zeros(1, dtype=torch.float64)}, 1e-3, 0.0, AdamState())
    assert m.w.item() == 1.5


def test_adam_single_step_by_hand():
    lr, g, w0, wd = 0.1, 0.5, 2.0, 0.01
    m = Scalar(w0)
    adam_step(m, {"w": torch.tensor([g], dtype=torch.float64)}, lr, wd, AdamState())
    m1 = 0.1 * g
    v1 = 0.001 * g * g
    m_hat, v_hat = m1 / 0.1, v1 / 0.001
    expected = w0 * (1 - lr * wd) - lr * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert m.w.item() == pytest.approx(expected, rel=1e-12)


def test_adam_matches_torch_adamw_over_several_steps():
    torch.manual_seed(0)
    a = Scalar(0.3)
    b = Scalar(0.3)
    opt = torch.optim.AdamW(b.parameters(), lr=1e-2, weight_decay=5e-2, eps=1e-8)
    state = AdamState()
    for step in range(5):
        g = torch.tensor([math.sin(step) + 0.2], dtype=torch.float64)
        adam_step(a, {"w": g}, 1e-2, 5e-2, state)
        b.w.grad = g.clone()
        opt.step()
    assert a.w.item() == pytest.approx(b.w.item(), rel=1e-12)


def test_weight_decay_shrinks_parameters():
    model = instantiate(EncoderConfig(seq_len=4), 10)
    before = torch.cat([p.detach().flatten() for p in model.parameters()]).norm()
    grads = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
    adam_step(model, grads, 1e-2, 1e-1, AdamState())
    after = torch.cat([p.detach().flatten() for p in model.parameters()]).norm()
    assert after < before


def test_adam_rejects_nan():
    m = Scalar(1.0)
    with pytest.raises(NumericError, match="w"):
        adam_step(m, {"w": torch.tensor([float("nan")], dtype=torch.float64)}, 1e-3, 0.0, AdamState())


def test_adam_state_shape_mismatch():
    m = Scalar(1.0)
    state = AdamState(exp_avg={"w": torch.zeros(3, dtype=torch.float64)})
    with pytest.raises(ShapeError):
        adam_step(m, {"w": torch.ones(1, dtype=torch.float64)}, 1e-3, 0.0, state)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tmp_path):
    vocab = build_vocabulary([["a", "b", "c"]])
    model = instantiate(EncoderConfig(seq_len=4, seed=5), len(vocab))
    save_checkpoint(model, vocab, tmp_path / "m.pt")
    again = load_checkpoint(tmp_path / "m.pt", vocab)
    assert parameter_digest(again) == parameter_digest(model)
    assert again.config == model.config


def test_checkpoint_rejects_other_vocabulary(tmp_path):
    vocab = build_vocabulary([["a", "b", "c"]])
    model = instantiate(EncoderConfig(seq_len=4), len(vocab))
    save_checkpoint(model, vocab, tmp_path / "m.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.pt", build_vocabulary([["a", "b", "d"]]))
    torch.save({"format": "something else"}, tmp_path / "x.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.pt")
