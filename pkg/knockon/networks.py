"""
Submodule containing the **neural networks** used for delay forecasting.

- gatv2Layer / gatBody: stack of GATv2 attention layers (attention conditioned on the target node, edge attributes in
  the attention input) with residual connections and layer normalization,
- hurdleClassifier / hurdleRegressor: the two independent stages of the hurdle model (delay occurrence logit and
  bounded log-space delay),
- gcnLayer / oneshotGCN: the one-shot GCN baseline emitting all k horizon outputs in a single forward pass.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""

import json
import math
import os
import threading
from dataclasses import dataclass, asdict, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from knockon.exceptions import configError, missingInputError, numericError
from knockon.featurizer import CATEGORICAL_FEATURES
from knockon.grapher import EDGE_DIM, SELF

LOG_BOUND = 5.0
# Guards oneshotGCN.n_forward under threaded forecasting
_COUNTER_LOCK = threading.Lock()


@dataclass
class gatBodyConfig:
    """
    Architecture of the shared GAT body.
    """
    layers: int = 3
    hidden_channels: int = 32
    attention_heads: int = 32
    leaky_relu_slope: float = 0.2
    embedding_dim: int = 4
    embedding_dims: dict = field(default_factory=dict)
    head_combination: str = 'average'
    dropout: float = 0.0

    def validate(self):
        if self.layers < 1:
            raise configError('Error: the GAT body needs at least one layer.')
        if self.hidden_channels < 1 or self.attention_heads < 1:
            raise configError('Error: hidden_channels and attention_heads must be >= 1.')
        if self.head_combination not in ['average', 'concat_project']:
            raise configError('Error: head_combination must be \'average\' or \'concat_project\'.')
        if not 0 <= self.dropout < 1:
            raise configError('Error: dropout must be in [0, 1).')
        return self


@dataclass
class graphBatch:
    """
    Tensor version of a subgraphView.
    """
    x: torch.Tensor
    cat: torch.Tensor
    edge_index: torch.Tensor
    edge_attr: torch.Tensor
    anchors: torch.Tensor


def to_batch(view, dtype=torch.float32):
    """
    Convert a subgraphView to a graphBatch.
    """
    return graphBatch(x=torch.as_tensor(view.x, dtype=dtype),
                      cat=torch.as_tensor(view.cat, dtype=torch.long),
                      edge_index=torch.as_tensor(view.edge_index, dtype=torch.long).reshape(2, -1),
                      edge_attr=torch.as_tensor(view.edge_attr, dtype=dtype).reshape(-1, EDGE_DIM),
                      anchors=torch.as_tensor(view.anchors, dtype=torch.long))


def add_self_loops(edge_index, edge_attr, n):
    """
    Append one self-loop per node, typed Self with zero duration.
    """
    loops = torch.arange(n, dtype=torch.long, device=edge_index.device)
    loop_attr = torch.zeros((n, edge_attr.shape[1]), dtype=edge_attr.dtype, device=edge_attr.device)
    loop_attr[:, 1 + SELF] = 1
    return torch.cat([edge_index, torch.stack([loops, loops])], dim=1), torch.cat([edge_attr, loop_attr], dim=0)


def scatter_softmax(score, index, n):
    """
    Softmax of `score` (E, H) over the groups defined by `index` (E,).
    """
    expanded = index.unsqueeze(-1).expand_as(score)
    peak = torch.full((n, score.shape[1]), -math.inf, dtype=score.dtype, device=score.device)
    peak = peak.scatter_reduce(0, expanded, score.detach(), reduce='amax', include_self=True)
    ex = torch.exp(score - peak[index])
    denom = torch.zeros((n, score.shape[1]), dtype=score.dtype, device=score.device).index_add(0, index, ex)
    return ex / denom[index]


class gatv2Layer(nn.Module):
    """
    GATv2 attention layer with edge attributes.

    The score of edge j -> i for head h is a_h^T LeakyReLU(W_l h_i + W_r h_j + W_e e_ij), normalized over the
    in-neighborhood of i; messages are W_r h_j.
    """

    def __init__(self, in_channels, out_channels, heads, edge_dim=EDGE_DIM, slope=0.2, combination='average'):
        super().__init__()
        self.heads = heads
        self.out_channels = out_channels
        self.slope = slope
        self.combination = combination
        self.lin_l = nn.Linear(in_channels, heads * out_channels)
        self.lin_r = nn.Linear(in_channels, heads * out_channels)
        self.lin_e = nn.Linear(edge_dim, heads * out_channels, bias=False)
        self.att = nn.Parameter(torch.empty(heads, out_channels))
        self.project = nn.Linear(heads * out_channels, out_channels) if combination == 'concat_project' else None
        self.bias = nn.Parameter(torch.zeros(out_channels))
        bound = 1 / math.sqrt(out_channels)
        nn.init.uniform_(self.att, -bound, bound)

    def scores(self, x_target, x_source, edge_attr):
        """
        Unnormalized attention scores (E, H) of edges with target states `x_target` and source states `x_source`.
        """
        e = self.lin_l(x_target).view(-1, self.heads, self.out_channels) \
            + self.lin_r(x_source).view(-1, self.heads, self.out_channels) \
            + self.lin_e(edge_attr).view(-1, self.heads, self.out_channels)
        return (F.leaky_relu(e, self.slope) * self.att).sum(dim=-1)

    def forward(self, x, edge_index, edge_attr):
        """
        Parameters
        ----------
        x: torch.Tensor
            node states (N, in_channels)
        edge_index: torch.Tensor
            (2, E) source and target positions, self-loops included
        edge_attr: torch.Tensor
            (E, edge_dim)

        Returns
        -------
        (out, alpha): (torch.Tensor, torch.Tensor)
            node outputs (N, out_channels) and normalized attention (E, heads)
        """
        n = x.shape[0]
        src, dst = edge_index[0], edge_index[1]
        alpha = scatter_softmax(self.scores(x[dst], x[src], edge_attr), dst, n)
        messages = self.lin_r(x).view(-1, self.heads, self.out_channels)[src] * alpha.unsqueeze(-1)
        out = torch.zeros((n, self.heads, self.out_channels), dtype=x.dtype, device=x.device).index_add(0, dst,
                                                                                                       messages)
        if self.project is None:
            out = out.mean(dim=1)
        else:
            out = self.project(out.reshape(n, -1))
        return out + self.bias, alpha


def gat_attention_scores(h_target, h_neighbors, edge_features, layer):
    """
    Normalized attention scores of one target node over its in-neighborhood.

    Parameters
    ----------
    h_target: torch.Tensor
        target node state (d,)
    h_neighbors: torch.Tensor
        neighbor states (m, d)
    edge_features: torch.Tensor
        edge attributes (m, edge_dim)
    layer: gatv2Layer

    Returns
    -------
    scores: torch.Tensor
        (m, heads), each column sums to 1
    """
    m = h_neighbors.shape[0]
    score = layer.scores(h_target.unsqueeze(0).expand(m, -1), h_neighbors, edge_features)
    return torch.softmax(score, dim=0)


class gatBody(nn.Module):
    """
    Categorical embeddings, input projection and a stack of GATv2 layers with residual connection and LayerNorm.
    """

    def __init__(self, num_inputs, vocab_sizes, config=None, edge_dim=EDGE_DIM):
        super().__init__()
        self.config = (config if config is not None else gatBodyConfig()).validate()
        c = self.config
        names = (CATEGORICAL_FEATURES + [str(i) for i in range(len(vocab_sizes))])[:len(vocab_sizes)]
        dims = [c.embedding_dims.get(name, c.embedding_dim) for name in names]
        self.embeddings = nn.ModuleList([nn.Embedding(size, dim) for size, dim in zip(vocab_sizes, dims)])
        self.input = nn.Linear(num_inputs + sum(dims), c.hidden_channels)
        self.layers = nn.ModuleList([gatv2Layer(c.hidden_channels, c.hidden_channels, c.attention_heads, edge_dim,
                                                c.leaky_relu_slope, c.head_combination) for _ in range(c.layers)])
        self.norms = nn.ModuleList([nn.LayerNorm(c.hidden_channels) for _ in range(c.layers)])

    def embed(self, x, cat):
        parts = [x] + [emb(cat[:, i]) for i, emb in enumerate(self.embeddings)]
        return self.input(torch.cat(parts, dim=1))

    def forward(self, batch, capture=False):
        """
        Returns
        -------
        (h, attention): (torch.Tensor, list)
            node embeddings (N, hidden) and, when `capture` is set, one (E + N, heads) attention tensor per layer
            (self-loops last)
        """
        h = self.embed(batch.x, batch.cat)
        if not torch.isfinite(h).all():
            raise numericError('Error: non-finite activation in the input projection (layer 0).')
        edge_index, edge_attr = add_self_loops(batch.edge_index, batch.edge_attr, h.shape[0])
        attention = []
        for i, (layer, norm) in enumerate(zip(self.layers, self.norms)):
            out, alpha = layer(h, edge_index, edge_attr)
            h = norm(out + h)
            if self.config.dropout > 0:
                h = F.dropout(h, p=self.config.dropout, training=self.training)
            if not torch.isfinite(h).all():
                raise numericError('Error: non-finite activation in GAT layer {}.'.format(i + 1))
            if capture:
                attention.append(alpha.detach())
        return h, attention


class hurdleStage(nn.Module):
    """
    GAT body followed by a single linear head evaluated on the anchor nodes.
    """

    def __init__(self, num_inputs, vocab_sizes, config=None):
        super().__init__()
        config = config if config is not None else gatBodyConfig()
        self.init_args = {'num_inputs': int(num_inputs), 'vocab_sizes': [int(v) for v in vocab_sizes],
                          'config': asdict(config)}
        self.body = gatBody(num_inputs, vocab_sizes, config)
        self.head = nn.Linear(config.hidden_channels, 1)

    def activate(self, z):
        return z

    def forward(self, batch, capture=False):
        h, attention = self.body(batch, capture=capture)
        return self.activate(self.head(h[batch.anchors]).squeeze(-1)), attention

    @classmethod
    def from_config(cls, init_args):
        return cls(init_args['num_inputs'], init_args['vocab_sizes'], gatBodyConfig(**init_args['config']))


class hurdleClassifier(hurdleStage):
    """Delay occurrence stage: raw logit, positive iff delay > 0 is predicted at threshold 0.5."""


class hurdleRegressor(hurdleStage):
    """Delay magnitude stage: log1p-space delay bounded to (-5, 5) by 5 tanh."""

    def activate(self, z):
        return LOG_BOUND * torch.tanh(z)


def decode_delay(log_delay):
    """
    Real-scale delay (minutes) from a log-space regressor output: expm1(max(output, 0)).
    """
    return torch.expm1(torch.clamp(log_delay, min=0))


def hurdle_predict(classifier, regressor, batch, threshold=0.5, capture=False):
    """
    Hurdle composition of the two stages.

    Parameters
    ----------
    classifier, regressor: callable
        modules (or stubs) mapping a batch to (outputs on anchors, attention)
    batch: graphBatch
    threshold: float
        classification threshold on the delay probability
    capture: bool
        return the attention of the classifier

    Returns
    -------
    (prediction, attention): (torch.Tensor, list)
        delay in minutes per anchor, exactly 0 where the probability is not above `threshold`
    """
    with torch.no_grad():
        logits, attention = classifier(batch, capture=capture)
        log_delay, _ = regressor(batch)
        delayed = torch.sigmoid(logits) > threshold
        prediction = torch.where(delayed, decode_delay(log_delay), torch.zeros_like(log_delay))
    return prediction, attention


class gcnLayer(nn.Module):
    """
    Graph convolution with symmetric normalization: out_i = sum_j W h_j / sqrt(deg_i deg_j), over in-neighbors and
    the node itself, deg being the in-degree plus one.
    """

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.lin = nn.Linear(in_channels, out_channels, bias=False)
        self.bias = nn.Parameter(torch.zeros(out_channels))

    def forward(self, x, edge_index):
        n = x.shape[0]
        loops = torch.arange(n, dtype=torch.long, device=x.device)
        src = torch.cat([edge_index[0], loops])
        dst = torch.cat([edge_index[1], loops])
        deg = torch.zeros(n, dtype=x.dtype, device=x.device).index_add(0, dst, torch.ones_like(dst, dtype=x.dtype))
        norm = deg[src].rsqrt() * deg[dst].rsqrt()
        xw = self.lin(x)
        out = torch.zeros((n, xw.shape[1]), dtype=x.dtype, device=x.device).index_add(0, dst,
                                                                                     xw[src] * norm.unsqueeze(-1))
        return out + self.bias


class oneshotGCN(nn.Module):
    """
    One-shot GCN baseline stage: k output heads give all horizon outputs in one forward pass.

    `mode` is 'classifier' (logits) or 'regressor' (5 tanh log-delay). `n_forward` counts forward invocations,
    also when called from several threads.
    """

    def __init__(self, num_inputs, vocab_sizes, k, mode='classifier', hidden_channels=32, layers=3, embedding_dim=4):
        super().__init__()
        if mode not in ['classifier', 'regressor']:
            raise configError('Error: oneshotGCN mode must be \'classifier\' or \'regressor\'.')
        self.init_args = {'num_inputs': int(num_inputs), 'vocab_sizes': [int(v) for v in vocab_sizes], 'k': int(k),
                          'mode': mode, 'hidden_channels': hidden_channels, 'layers': layers,
                          'embedding_dim': embedding_dim}
        self.k = k
        self.mode = mode
        self.n_forward = 0
        self.embeddings = nn.ModuleList([nn.Embedding(size, embedding_dim) for size in vocab_sizes])
        self.input = nn.Linear(num_inputs + embedding_dim * len(vocab_sizes), hidden_channels)
        self.layers = nn.ModuleList([gcnLayer(hidden_channels, hidden_channels) for _ in range(layers)])
        self.norms = nn.ModuleList([nn.LayerNorm(hidden_channels) for _ in range(layers)])
        self.heads = nn.Linear(hidden_channels, k)

    def forward(self, batch, capture=False):
        """
        Returns
        -------
        (out, attention): (torch.Tensor, list)
            (n_anchors, k) outputs and an empty attention list
        """
        with _COUNTER_LOCK:
            self.n_forward += 1
        parts = [batch.x] + [emb(batch.cat[:, i]) for i, emb in enumerate(self.embeddings)]
        h = self.input(torch.cat(parts, dim=1))
        for i, (layer, norm) in enumerate(zip(self.layers, self.norms)):
            h = norm(F.relu(layer(h, batch.edge_index)) + h)
            if not torch.isfinite(h).all():
                raise numericError('Error: non-finite activation in GCN layer {}.'.format(i + 1))
        out = self.heads(h[batch.anchors])
        if self.mode == 'regressor':
            out = LOG_BOUND * torch.tanh(out)
        return out, []

    @classmethod
    def from_config(cls, init_args):
        return cls(**init_args)


MODELS = {'hurdleClassifier': hurdleClassifier, 'hurdleRegressor': hurdleRegressor, 'oneshotGCN': oneshotGCN}


def save_checkpoint(model, path):
    """
    Save a model to the folder `path` as config.json and params.npz (named parameter arrays).
    """
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, 'config.json'), 'w') as f:
        json.dump({'class': type(model).__name__, 'init_args': model.init_args}, f, indent=2, sort_keys=True)
    params = {name: value.detach().cpu().numpy() for name, value in model.state_dict().items()}
    np.savez(os.path.join(path, 'params.npz'), **params)


def load_checkpoint(path, dtype=torch.float32):
    """
    Load a model saved with save_checkpoint.
    """
    for name in ['config.json', 'params.npz']:
        if not os.path.exists(os.path.join(path, name)):
            raise missingInputError('Error: checkpoint file {} does not exist.'.format(os.path.join(path, name)))
    with open(os.path.join(path, 'config.json'), 'r') as f:
        config = json.load(f)
    model = MODELS[config['class']].from_config(config['init_args'])
    with np.load(os.path.join(path, 'params.npz')) as params:
        model.load_state_dict({name: torch.from_numpy(params[name]) for name in params.files})
    return model.to(dtype).eval()
