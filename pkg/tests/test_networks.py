"""
Test script for the GATv2 hurdle stages and the one-shot GCN.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""


import math

import numpy as np
import pytest
from joblib import Parallel, delayed
import torch
import torch.nn.functional as F

import knockon
from knockon.grapher import EDGE_DIM

VOCAB_SIZES = [3, 4]


def _random_batch(n=8, n_edges=14, num_inputs=5, n_anchors=3, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    src = torch.randint(0, n, (n_edges,), generator=g)
    dst = torch.randint(0, n, (n_edges,), generator=g)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    edge_attr = torch.zeros((len(src), EDGE_DIM), dtype=dtype)
    edge_attr[:, 0] = torch.randn(len(src), generator=g, dtype=dtype)
    edge_attr[torch.arange(len(src)), 1 + torch.randint(0, 3, (len(src),), generator=g)] = 1
    cat = torch.stack([torch.randint(0, s, (n,), generator=g) for s in VOCAB_SIZES], dim=1)
    return knockon.networks.graphBatch(x=torch.randn((n, num_inputs), generator=g, dtype=dtype), cat=cat,
                                       edge_index=torch.stack([src, dst]), edge_attr=edge_attr,
                                       anchors=torch.arange(n_anchors))


def _config(**kwargs):
    return knockon.networks.gatBodyConfig(layers=2, hidden_channels=6, attention_heads=3, **kwargs)


def _finite_difference_check(model, loss_fn, eps=1e-6, entries=3, seed=0):
    model.zero_grad()
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        grad = p.grad.view(-1) if p.grad is not None else torch.zeros_like(flat)
        for i in rng.choice(flat.numel(), size=min(entries, flat.numel()), replace=False):
            original = flat[i].item()
            flat[i] = original + eps
            plus = loss_fn().item()
            flat[i] = original - eps
            minus = loss_fn().item()
            flat[i] = original
            numeric = (plus - minus) / (2 * eps)
            analytic = grad[i].item()
            assert abs(numeric - analytic) <= 1e-4 * max(abs(numeric), abs(analytic)) + 1e-7, name


def test_gradients_classifier():
    for seed in range(10):
        torch.manual_seed(seed)
        model = knockon.networks.hurdleClassifier(5, VOCAB_SIZES, _config()).double()
        batch = _random_batch(seed=seed)
        y = torch.tensor([0.0, 2.0, 5.0], dtype=torch.float64)
        _finite_difference_check(model, lambda: knockon.trainer.bce_loss(model(batch)[0], y), seed=seed)


def test_gradients_regressor():
    for seed in range(10):
        torch.manual_seed(seed)
        model = knockon.networks.hurdleRegressor(5, VOCAB_SIZES, _config()).double()
        batch = _random_batch(seed=seed)
        y = torch.tensor([0.0, 2.0, 5.0], dtype=torch.float64)
        _finite_difference_check(model, lambda: knockon.trainer.masked_mse_loss(model(batch)[0], y)[0], seed=seed)


def test_masked_loss():
    y = torch.tensor([0.0, 3.0, 0.0, 1.0], dtype=torch.float64)
    out = torch.tensor([0.5, 1.0, -2.0, 0.2], dtype=torch.float64, requires_grad=True)
    loss, n = knockon.trainer.masked_mse_loss(out, y)
    loss.backward()
    assert(n == 2)

    # On-time targets change neither the loss nor any gradient
    perturbed = torch.tensor([4.0, 1.0, 3.0, 0.2], dtype=torch.float64, requires_grad=True)
    loss2, _ = knockon.trainer.masked_mse_loss(perturbed, y)
    loss2.backward()
    assert(loss.item() == loss2.item())
    assert(torch.equal(out.grad, perturbed.grad))
    assert(out.grad[0] == 0 and out.grad[2] == 0)

    assert(knockon.trainer.masked_mse_loss(out, torch.zeros(4, dtype=torch.float64)) == (None, 0))


def test_attention_single_neighbor():
    layer = knockon.networks.gatv2Layer(4, 4, heads=2).double()
    h = torch.randn(4, dtype=torch.float64)
    scores = knockon.networks.gat_attention_scores(h, torch.randn((1, 4), dtype=torch.float64),
                                                   torch.randn((1, EDGE_DIM), dtype=torch.float64), layer)
    assert(torch.allclose(scores, torch.ones((1, 2), dtype=torch.float64)))

    # Identical neighbors and edges share the attention uniformly
    neighbors = torch.randn((1, 4), dtype=torch.float64).repeat(3, 1)
    edges = torch.randn((1, EDGE_DIM), dtype=torch.float64).repeat(3, 1)
    scores = knockon.networks.gat_attention_scores(h, neighbors, edges, layer)
    assert(torch.allclose(scores, torch.full((3, 2), 1 / 3, dtype=torch.float64)))


def test_attention_formula():
    torch.manual_seed(0)
    layer = knockon.networks.gatv2Layer(4, 3, heads=2, slope=0.2).double()
    h = torch.randn(4, dtype=torch.float64)
    neighbors = torch.randn((3, 4), dtype=torch.float64)
    edges = torch.randn((3, EDGE_DIM), dtype=torch.float64)
    scores = knockon.networks.gat_attention_scores(h, neighbors, edges, layer)

    w_l, b_l = layer.lin_l.weight, layer.lin_l.bias
    w_r, b_r = layer.lin_r.weight, layer.lin_r.bias
    w_e = layer.lin_e.weight
    expected = torch.zeros((3, 2), dtype=torch.float64)
    for head in range(2):
        rows = slice(3 * head, 3 * (head + 1))
        logits = []
        for j in range(3):
            e = w_l[rows] @ h + b_l[rows] + w_r[rows] @ neighbors[j] + b_r[rows] + w_e[rows] @ edges[j]
            logits.append(torch.dot(layer.att[head], F.leaky_relu(e, 0.2)))
        expected[:, head] = torch.softmax(torch.stack(logits), dim=0)
    assert(torch.allclose(scores, expected, atol=1e-12))
    assert(torch.allclose(scores.sum(dim=0), torch.ones(2, dtype=torch.float64)))


def test_layer_attention_sums_to_one():
    torch.manual_seed(1)
    body = knockon.networks.gatBody(5, VOCAB_SIZES, _config()).double()
    batch = _random_batch(seed=1)
    _, attention = body(batch, capture=True)
    edge_index, _ = knockon.networks.add_self_loops(batch.edge_index, batch.edge_attr, batch.x.shape[0])

    assert(len(attention) == 2)
    for alpha in attention:
        sums = torch.zeros((batch.x.shape[0], alpha.shape[1]), dtype=torch.float64).index_add(0, edge_index[1], alpha)
        assert(torch.allclose(sums, torch.ones_like(sums)))


def test_permutation_equivariance():
    torch.manual_seed(2)
    body = knockon.networks.gatBody(5, VOCAB_SIZES, _config()).double().eval()
    batch = _random_batch(seed=2)
    n = batch.x.shape[0]
    perm = torch.randperm(n)
    inverse = torch.argsort(perm)
    permuted = knockon.networks.graphBatch(x=batch.x[perm], cat=batch.cat[perm], edge_index=inverse[batch.edge_index],
                                           edge_attr=batch.edge_attr, anchors=inverse[batch.anchors])
    h, _ = body(batch)
    h_perm, _ = body(permuted)
    assert(torch.allclose(h_perm, h[perm], atol=1e-10))


def test_zero_layer_weights():
    torch.manual_seed(3)
    body = knockon.networks.gatBody(5, VOCAB_SIZES, _config()).double()
    with torch.no_grad():
        for layer in body.layers:
            for p in layer.parameters():
                p.zero_()
    batch = _random_batch(seed=3)
    h, _ = body(batch)
    h0 = body.embed(batch.x, batch.cat)
    expected = F.layer_norm(h0, (h0.shape[1],))
    assert(torch.allclose(h, expected, atol=1e-4))


def test_non_finite_input():
    body = knockon.networks.gatBody(5, VOCAB_SIZES, _config()).double()
    batch = _random_batch()
    batch.x[0, 0] = math.inf
    with pytest.raises(knockon.exceptions.numericError):
        body(batch)


class _stub():
    def __init__(self, value):
        self.value = value

    def __call__(self, batch, capture=False):
        return torch.full((len(batch.anchors),), self.value, dtype=torch.float64), []


def test_hurdle_gating():
    batch = _random_batch()
    regressor = knockon.networks.hurdleRegressor(5, VOCAB_SIZES, _config()).double()

    pred, _ = knockon.networks.hurdle_predict(_stub(-10.0), regressor, batch)
    assert((pred == 0).all())

    pred, _ = knockon.networks.hurdle_predict(_stub(10.0), _stub(1.0), batch)
    assert(torch.allclose(pred, torch.full((3,), math.expm1(1.0), dtype=torch.float64)))

    # A zero logit sits on the threshold and is not delayed
    pred, _ = knockon.networks.hurdle_predict(_stub(0.0), _stub(1.0), batch)
    assert((pred == 0).all())

    # Negative log-space outputs decode to 0
    pred, _ = knockon.networks.hurdle_predict(_stub(10.0), _stub(-1.0), batch)
    assert((pred == 0).all())

    # Gating only depends on the classifier
    torch.manual_seed(4)
    classifier = knockon.networks.hurdleClassifier(5, VOCAB_SIZES, _config()).double()
    pred_a, _ = knockon.networks.hurdle_predict(classifier, _stub(1.0), batch, threshold=0.5)
    pred_b, _ = knockon.networks.hurdle_predict(classifier, _stub(2.0), batch, threshold=0.5)
    logits, _ = classifier(batch)
    assert(torch.equal(pred_a == 0, torch.sigmoid(logits) <= 0.5))
    assert(torch.equal(pred_a == 0, pred_b == 0))


def test_regressor_bound():
    torch.manual_seed(5)
    regressor = knockon.networks.hurdleRegressor(5, VOCAB_SIZES, _config()).double()
    with torch.no_grad():
        regressor.head.weight.mul_(1e4)
    bound = math.expm1(knockon.networks.LOG_BOUND)
    for seed in range(100):
        out, _ = regressor(_random_batch(seed=seed))
        assert((knockon.networks.decode_delay(out) <= bound).all())
    assert(knockon.networks.LOG_BOUND * torch.tanh(torch.tensor(1e3, dtype=torch.float64)) == 5.0)


def test_hurdle_output_bound():
    torch.manual_seed(6)
    classifier = knockon.networks.hurdleClassifier(5, VOCAB_SIZES, _config()).double()
    regressor = knockon.networks.hurdleRegressor(5, VOCAB_SIZES, _config()).double()
    with torch.no_grad():
        regressor.head.weight.mul_(3.0)
    bound = math.expm1(knockon.networks.LOG_BOUND)

    n_zero, n_positive, n_total = 0, 0, 0
    with torch.no_grad():
        for seed in range(500):
            batch = _random_batch(n=200, n_edges=600, n_anchors=200, seed=seed)
            pred, _ = knockon.networks.hurdle_predict(classifier, regressor, batch)
            logits, _ = classifier(batch)
            log_delay, _ = regressor(batch)
            negative = torch.sigmoid(logits) <= 0.5
            assert((pred[negative] == 0).all())
            # tanh is not saturated on these draws
            assert((log_delay.abs() < knockon.networks.LOG_BOUND).all())
            assert((pred < bound).all())
            n_zero += int(negative.sum())
            n_positive += int((pred > 0).sum())
            n_total += len(pred)

    assert(n_total == 100000)
    assert(n_zero > 0 and n_positive > 0)


def test_gcn_two_node_path():
    layer = knockon.networks.gcnLayer(1, 1).double()
    with torch.no_grad():
        layer.lin.weight.fill_(2.0)
    x = torch.tensor([[1.0], [3.0]], dtype=torch.float64)
    out = layer(x, torch.tensor([[0], [1]]))
    assert(torch.allclose(out[:, 0], torch.tensor([2.0, 2 / math.sqrt(2) + 3.0], dtype=torch.float64)))


def test_oneshot_gcn():
    model = knockon.networks.oneshotGCN(5, VOCAB_SIZES, k=4, mode='regressor', hidden_channels=6, layers=2).double()
    out, attention = model(_random_batch())
    assert(out.shape == (3, 4))
    assert(attention == [])
    assert((out.abs() < knockon.networks.LOG_BOUND).all())
    assert(model.n_forward == 1)

    with pytest.raises(knockon.exceptions.configError):
        knockon.networks.oneshotGCN(5, VOCAB_SIZES, k=4, mode='ranking')


def test_oneshot_gcn_threaded_count():
    model = knockon.networks.oneshotGCN(5, VOCAB_SIZES, k=2, hidden_channels=6, layers=2).double()
    batches = [_random_batch(seed=s) for s in range(8)]

    def _forward(i):
        with torch.no_grad():
            model(batches[i % len(batches)])

    Parallel(n_jobs=4, prefer='threads')(delayed(_forward)(i) for i in range(400))
    assert(model.n_forward == 400)


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(6)
    model = knockon.networks.hurdleRegressor(5, VOCAB_SIZES, _config(embedding_dims={'train_type': 2}))
    knockon.networks.save_checkpoint(model, tmp_path)
    loaded = knockon.networks.load_checkpoint(tmp_path)

    batch = _random_batch(dtype=torch.float32)
    model.eval()
    assert(torch.equal(model(batch)[0], loaded(batch)[0]))
    assert(loaded.body.embeddings[0].embedding_dim == 2)

    with pytest.raises(knockon.exceptions.missingInputError):
        knockon.networks.load_checkpoint(tmp_path / 'missing')


def test_body_config_validation():
    with pytest.raises(knockon.exceptions.configError):
        knockon.networks.gatBodyConfig(layers=0).validate()
    with pytest.raises(knockon.exceptions.configError):
        knockon.networks.gatBodyConfig(head_combination='sum').validate()
