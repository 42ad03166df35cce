"""The interpretable graph classifier: VAE, causal objective, explainer, classifier.

A two-layer graph-convolutional encoder produces a per-node latent code
whose columns are split into a causal block and a nuisance block.  A
dual-head decoder reconstructs the adjacency (inner product + sigmoid) and
the node features (small MLP).  The causal block also drives a
parameter-free subgraph generator whose edge weights both explain and feed
the downstream classifier.  The causal objective rewards the causal block
for predicting the label beyond what the nuisance block already tells,
while penalizing any dependence between the two blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import kernels
from .tensor import (ContractError, Tensor, as_tensor, exp, log, mul, relu,
                     sigmoid, tensor_max, tensor_sum, trace)

READOUTS = ("sum", "average", "max")
CLASSIFIERS = ("gin", "gcn")
VARIANTS = ("full", "no-causal", "non-mi", "plain-classifier")

ENCODER_WIDTHS = (128, 64)
DECODER_HIDDEN = 16
CLASSIFIER_GNN_WIDTHS = (128, 128, 128)
CLASSIFIER_HEAD_WIDTHS = (64, 32)

# the posterior heads start at moderate scale with quiet noise so the
# inner-product decoder sees structure from step one; the prior term then
# re-inflates the noise scale gradually over training
HEAD_WEIGHT_SCALE = 0.5
LOGVAR_BIAS_INIT = -6.0

# constant node features make every pre-normalization activation an outer
# product of one node scalar with one channel pattern; the noise on the
# normalization shift decouples the channels so rank can grow
CLASSIFIER_BIAS_NOISE = 0.3
BN_MOMENTUM = 0.1
BN_EPS = 1e-5

# edges are roughly 11x rarer than non-edges in the off-diagonal of a
# 25-node benchmark graph; reweighting keeps the flat all-0.5
# reconstruction from being an attractor
EDGE_POS_WEIGHT = 11.0


@dataclass
class TrainConfig:
    """Hyperparameters; the defaults are the reference configuration."""

    epochs: int = 450
    vae_epochs: int = 150
    causal_weight: float = 0.001
    learning_rate: float = 0.001
    batch_size: int = 32
    renyi_delta: float = 1.01
    readout: str = "sum"
    classifier: str = "gin"
    causal_dim: int = 56
    nuisance_dim: int = 8
    dropout: float = 0.5
    weight_decay: float = 0.0005
    seed: int = 0
    variant: str = "full"

    def validate(self) -> None:
        if self.vae_epochs >= self.epochs:
            raise ContractError("vae_epochs must be smaller than epochs")
        if self.causal_weight < 0:
            raise ContractError("causal_weight must be nonnegative")
        if self.batch_size < 2:
            raise ContractError("batch_size must be at least 2")
        if self.readout not in READOUTS:
            raise ContractError(f"readout must be one of {READOUTS}")
        if self.classifier not in CLASSIFIERS:
            raise ContractError(f"classifier must be one of {CLASSIFIERS}")
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}")
        if self.causal_dim < 1 or self.nuisance_dim < 1:
            raise ContractError("latent blocks need at least one column each")
        if not (0 <= self.dropout < 1):
            raise ContractError("dropout must lie in [0, 1)")
        kernels.EntropyConfig(delta=self.renyi_delta)

    @property
    def latent_dim(self) -> int:
        return self.causal_dim + self.nuisance_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, record: dict) -> "TrainConfig":
        fields = {f for f in cls.__dataclass_fields__}
        unknown = set(record) - fields
        if unknown:
            raise ContractError(
                f"unknown config keys {sorted(unknown)}; valid keys: {sorted(fields)}")
        cfg = cls(**record)
        cfg.validate()
        return cfg


@dataclass
class LatentFactors:
    """Per-graph latent blocks plus the posterior statistics behind them."""

    causal: Tensor      # (B, n, causal_dim)
    nuisance: Tensor    # (B, n, nuisance_dim)
    mean: Tensor        # (B, n, latent_dim)
    logvar: Tensor      # (B, n, latent_dim)
    z: Tensor           # (B, n, latent_dim), causal and nuisance side by side


@dataclass
class Explanation:
    """Symmetric per-edge importance weights in (0, 1) for one graph."""

    weights: np.ndarray
    graph_id: int = -1


class ModelParams:
    """Named parameter tensors for the encoder, decoder and classifier.

    buffers hold the classifier's batch-normalization running statistics:
    state that evaluation needs but no gradient ever touches.
    """

    def __init__(self, config: TrainConfig, tensors: dict[str, Tensor],
                 buffers: dict[str, np.ndarray] | None = None):
        self.config = config
        self.tensors = tensors
        self.buffers = buffers if buffers is not None else {}

    @classmethod
    def init(cls, feature_dim: int, n_classes: int, config: TrainConfig,
             seed: int | None = None) -> "ModelParams":
        rng = np.random.default_rng(
            np.random.SeedSequence((config.seed if seed is None else seed, 11)))

        def glorot(fan_in, fan_out, scale=1.0):
            bound = scale * np.sqrt(6.0 / (fan_in + fan_out))
            return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                          requires_grad=True)

        def zeros(width, value=0.0):
            return Tensor(np.full(width, value, dtype=np.float64), requires_grad=True)

        t: dict[str, Tensor] = {}
        w1, w2 = ENCODER_WIDTHS
        latent = config.latent_dim
        t["enc.gcn1.w"] = glorot(feature_dim, w1)
        t["enc.gcn1.b"] = zeros(w1)
        t["enc.gcn2.w"] = glorot(w1, w2)
        t["enc.gcn2.b"] = zeros(w2)
        t["enc.mean.w"] = glorot(w2, latent, scale=HEAD_WEIGHT_SCALE)
        t["enc.mean.b"] = zeros(latent)
        t["enc.logvar.w"] = glorot(w2, latent, scale=HEAD_WEIGHT_SCALE)
        t["enc.logvar.b"] = zeros(latent, LOGVAR_BIAS_INIT)
        t["dec.hidden.w"] = glorot(latent, DECODER_HIDDEN)
        t["dec.hidden.b"] = zeros(DECODER_HIDDEN)
        t["dec.out.w"] = glorot(DECODER_HIDDEN, feature_dim)
        t["dec.out.b"] = zeros(feature_dim)

        buffers: dict[str, np.ndarray] = {}

        def norm_layer(name, width):
            t[f"{name}.gamma"] = Tensor(np.ones(width), requires_grad=True)
            t[f"{name}.beta"] = Tensor(
                rng.uniform(-CLASSIFIER_BIAS_NOISE, CLASSIFIER_BIAS_NOISE,
                            size=width), requires_grad=True)
            buffers[f"{name}.mean"] = np.zeros(width)
            buffers[f"{name}.var"] = np.ones(width)

        widths = (feature_dim,) + CLASSIFIER_GNN_WIDTHS
        for k in range(len(CLASSIFIER_GNN_WIDTHS)):
            t[f"clf.gnn{k + 1}.w"] = glorot(widths[k], widths[k + 1])
            t[f"clf.gnn{k + 1}.b"] = zeros(widths[k + 1])
            norm_layer(f"clf.norm_gnn{k + 1}", widths[k + 1])
        head_widths = (CLASSIFIER_GNN_WIDTHS[-1],) + CLASSIFIER_HEAD_WIDTHS + (n_classes,)
        for k in range(len(head_widths) - 1):
            t[f"clf.head{k + 1}.w"] = glorot(head_widths[k], head_widths[k + 1])
            t[f"clf.head{k + 1}.b"] = zeros(head_widths[k + 1])
            if k < len(head_widths) - 2:
                norm_layer(f"clf.norm_head{k + 1}", head_widths[k + 1])
        return cls(config, t, buffers)

    def encoder_decoder(self) -> list[Tensor]:
        return [v for k, v in self.tensors.items() if k.startswith(("enc.", "dec."))]

    def classifier(self) -> list[Tensor]:
        return [v for k, v in self.tensors.items() if k.startswith("clf.")]

    def all_parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config,
                           {k: Tensor(v.data.copy(), requires_grad=True)
                            for k, v in self.tensors.items()},
                           {k: v.copy() for k, v in self.buffers.items()})


# -- forward pieces -------------------------------------------------------------


def encode(x, a_norm, params: ModelParams,
           rng: np.random.Generator | None = None,
           sample: bool = True) -> LatentFactors:
    """Posterior statistics and a latent draw for a batch of graphs.

    x: (B, n, d) features; a_norm: (B, n, n) normalized adjacency (constants).
    With sample, z = mean + exp(logvar / 2) * eps using rng; otherwise the
    posterior mean is used directly (deterministic evaluation path).
    """
    x = as_tensor(x)
    a_norm = as_tensor(a_norm)
    t = params.tensors
    h = sigmoid(a_norm @ (x @ t["enc.gcn1.w"]) + t["enc.gcn1.b"])
    h = sigmoid(a_norm @ (h @ t["enc.gcn2.w"]) + t["enc.gcn2.b"])
    mean = h @ t["enc.mean.w"] + t["enc.mean.b"]
    logvar = h @ t["enc.logvar.w"] + t["enc.logvar.b"]
    if sample:
        if rng is None:
            raise ContractError("sampling requires a random generator")
        eps = Tensor(rng.standard_normal(mean.shape))
        z = mean + exp(mul(logvar, 0.5)) * eps
    else:
        z = mean
    k = params.config.causal_dim
    return LatentFactors(causal=z[:, :, :k], nuisance=z[:, :, k:],
                         mean=mean, logvar=logvar, z=z)


def decode(z, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Reconstructed adjacency (sigmoid of the latent Gram) and features."""
    z = as_tensor(z)
    t = params.tensors
    a_rec = sigmoid(z @ z.T)
    hidden = relu(z @ t["dec.hidden.w"] + t["dec.hidden.b"])
    x_rec = hidden @ t["dec.out.w"] + t["dec.out.b"]
    return a_rec, x_rec


def graphvae_loss(x, a, a_rec, x_rec, mean, logvar) -> Tensor:
    """Reconstruction error plus prior divergence, averaged over the batch.

    Both squared reconstruction errors are per-entry means, so the
    objective's scale does not depend on graph size.  Adjacency errors skip
    the structurally empty diagonal and weight the rare edge entries up by
    EDGE_POS_WEIGHT: with edges outnumbered roughly 11:1, an unweighted
    error makes the flat all-0.5 reconstruction an attractor that collapses
    the posterior.  The divergence of the diagonal-Gaussian posterior from
    the standard-normal prior (closed form) is likewise averaged per latent
    element.  All inputs are batched (B, n, ...).
    """
    x, a = as_tensor(x), as_tensor(a)
    n = a.shape[-1]
    offdiag = ~np.eye(n, dtype=bool)
    weights = np.where(a.data > 0, EDGE_POS_WEIGHT, 1.0) * offdiag
    da = a - a_rec
    fa = tensor_sum(da * da * Tensor(weights), axis=(1, 2)) * (1.0 / (n * n))
    dx = x - x_rec
    fx = tensor_sum(dx * dx, axis=(1, 2)) * (1.0 / (n * x.shape[-1]))
    kl = mul(tensor_sum(1.0 + logvar - mean * mean - exp(logvar), axis=(1, 2)),
             -0.5 / (n * mean.shape[-1]))
    return (fa + fx + kl).mean()


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    return np.eye(n_classes)[np.asarray(labels, dtype=np.intp)]


def causal_loss(causal, nuisance, labels: np.ndarray, n_classes: int,
                delta: float, include_mi: bool = True,
                bandwidths: tuple[float, float, float] | None = None
                ) -> tuple[Tensor, dict]:
    """Causal objective for one batch: dependence penalty minus label relevance.

    Minimizing it maximizes the conditional information the causal block
    carries about the label given the nuisance block, while (optionally)
    driving the two blocks toward independence.  Kernel bandwidths adapt to
    the batch by default and always act as constants in the backward pass;
    pass explicit bandwidths to pin them (finite-difference checks need
    that).  Returns the scalar loss and a diagnostics dict with the two
    constituents as plain floats.
    """
    causal = as_tensor(causal)
    nuisance = as_tensor(nuisance)
    b = causal.shape[0]
    if b < 2:
        raise ContractError("causal loss needs a batch of at least 2 graphs")
    cf = kernels.vectorize_factors(causal)
    nf = kernels.vectorize_factors(nuisance)
    yh = one_hot(labels, n_classes)

    if bandwidths is None:
        bandwidths = (kernels.adaptive_sigma(cf.data), kernels.adaptive_sigma(nf.data),
                      kernels.adaptive_sigma(yh))
    kc = kernels.gram_gaussian(cf, bandwidths[0]).entries
    kn = kernels.gram_gaussian(nf, bandwidths[1]).entries
    ky = kernels.gram_gaussian(yh, bandwidths[2]).entries  # constant kernel

    def renorm(m: Tensor) -> Tensor:
        return m / trace(m)

    mats = {"n": kn, "cn": renorm(kc * kn), "yn": renorm(ky * kn),
            "cyn": renorm(kc * ky * kn)}
    if include_mi:
        mats["c"] = kc
    names = list(mats)
    entropies = dict(zip(names, kernels.entropy_stack([mats[k] for k in names], delta)))

    cmi = entropies["cn"] + entropies["yn"] - entropies["n"] - entropies["cyn"]
    if include_mi:
        mi = entropies["c"] + entropies["n"] - entropies["cn"]
        loss = mi - cmi
        diag = {"mi": mi.item(), "cmi": cmi.item()}
    else:
        loss = -cmi
        diag = {"mi": 0.0, "cmi": cmi.item()}
    return loss, diag


def subgraph(causal: np.ndarray, graph_id: int = -1) -> Explanation:
    """Edge-importance weights: sigmoid of the causal block's bilinear form."""
    c = np.asarray(causal, dtype=np.float64)
    if c.ndim != 2:
        raise ContractError(f"expected a (n, k) causal block, got {c.shape}")
    logits = c @ c.T
    weights = 1.0 / (1.0 + np.exp(-logits))
    return Explanation(weights=weights, graph_id=graph_id)


def _batch_norm(h: Tensor, params: ModelParams, name: str, train: bool,
                axes: tuple) -> Tensor:
    """Standardize per channel; running statistics serve the eval path."""
    t = params.tensors
    reducer = tuple(1 for _ in axes) + (h.shape[-1],)
    if train:
        m = h.mean(axis=axes, keepdims=True)
        centered = h - m
        var = (centered * centered).mean(axis=axes, keepdims=True)
        xhat = centered * ((var + BN_EPS) ** -0.5)
        buf_m = params.buffers[f"{name}.mean"]
        buf_v = params.buffers[f"{name}.var"]
        params.buffers[f"{name}.mean"] = (
            (1.0 - BN_MOMENTUM) * buf_m + BN_MOMENTUM * m.data.reshape(-1))
        params.buffers[f"{name}.var"] = (
            (1.0 - BN_MOMENTUM) * buf_v + BN_MOMENTUM * var.data.reshape(-1))
    else:
        m = Tensor(params.buffers[f"{name}.mean"].reshape(reducer))
        var = Tensor(params.buffers[f"{name}.var"].reshape(reducer))
        xhat = (h - m) * ((var + BN_EPS) ** -0.5)
    return xhat * t[f"{name}.gamma"] + t[f"{name}.beta"]


def classify(x, weighted_adj, params: ModelParams,
             readout: str | None = None, kind: str | None = None,
             dropout_rng: np.random.Generator | None = None,
             train: bool = False) -> Tensor:
    """Class logits for a batch from features and an edge-weighted adjacency.

    The message passing runs over weighted_adj (B, n, n): for "gin" each
    layer aggregates (h + W h) with sum semantics; for "gcn" the caller
    passes a renormalized weighted adjacency and layers aggregate W_norm h.
    Each hidden layer is linear -> batch norm -> relu; readout pools nodes
    (sum, average or max) and a three-layer head emits the logits.  With
    train set, batch statistics come from the batch itself (and update the
    running buffers) and dropout masks are drawn from dropout_rng.
    """
    cfg = params.config
    readout = readout or cfg.readout
    kind = kind or cfg.classifier
    if readout not in READOUTS:
        raise ContractError(f"unknown readout {readout!r}; valid: {READOUTS}")
    if kind not in CLASSIFIERS:
        raise ContractError(f"unknown classifier {kind!r}; valid: {CLASSIFIERS}")
    x = as_tensor(x)
    w = as_tensor(weighted_adj)
    t = params.tensors
    h = x
    for k in range(len(CLASSIFIER_GNN_WIDTHS)):
        if kind == "gin":
            agg = h + w @ h
        else:
            agg = w @ h
        pre = agg @ t[f"clf.gnn{k + 1}.w"] + t[f"clf.gnn{k + 1}.b"]
        h = relu(_batch_norm(pre, params, f"clf.norm_gnn{k + 1}", train, (0, 1)))
    if readout == "sum":
        hg = tensor_sum(h, axis=1)
    elif readout == "average":
        hg = h.mean(axis=1)
    else:
        hg = tensor_max(h, axis=1)
    for k in range(len(CLASSIFIER_HEAD_WIDTHS)):
        pre = hg @ t[f"clf.head{k + 1}.w"] + t[f"clf.head{k + 1}.b"]
        hg = relu(_batch_norm(pre, params, f"clf.norm_head{k + 1}", train, (0,)))
        if train and dropout_rng is not None and cfg.dropout > 0:
            keep = (dropout_rng.random(hg.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
            hg = hg * Tensor(keep)
    out = len(CLASSIFIER_HEAD_WIDTHS) + 1
    return hg @ t[f"clf.head{out}.w"] + t[f"clf.head{out}.b"]


def cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the true classes (natural log)."""
    logits = as_tensor(logits)
    b, c = logits.shape
    if c < 2:
        raise ContractError("cross_entropy needs at least two classes")
    shift = Tensor(np.max(logits.data, axis=1, keepdims=True))  # constant offset
    z = logits - shift
    log_norm = log(tensor_sum(exp(z), axis=1))
    picked = tensor_sum(z * Tensor(one_hot(labels, c)), axis=1)
    return (log_norm - picked).mean()
