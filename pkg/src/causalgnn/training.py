"""Two-stage training loop, checkpoint serialization and inference helpers.

Stage one fits the variational autoencoder (plus the causal objective) on
the encoder and decoder parameters.  At the stage boundary the encoder is
frozen; every graph's causal block is read off the posterior mean, turned
into edge weights, and stage two trains only the classifier on those
weighted graphs.  Freezing makes the stage-two causal term a constant of
the data, so it is evaluated once at the boundary and recorded as-is for
every later epoch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import graphs, kernels, model
from .optim import Adam
from .tensor import ContractError, Tensor, no_grad

CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ("epoch", "stage", "loss_vae", "loss_causal", "loss_ce",
                   "val_accuracy", "hsic_alpha_beta")


@dataclass
class EpochStats:
    epoch: int
    stage: int
    loss_vae: float
    loss_causal: float
    loss_ce: float
    val_accuracy: float
    hsic_alpha_beta: float

    def row(self) -> list:
        return [self.epoch, self.stage, self.loss_vae, self.loss_causal,
                self.loss_ce, self.val_accuracy, self.hsic_alpha_beta]


@dataclass
class History:
    rows: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = -1.0

    def to_csv(self) -> str:
        lines = [",".join(HISTORY_COLUMNS)]
        for r in self.rows:
            epoch, stage, *floats = r.row()
            lines.append(",".join([str(epoch), str(stage)]
                                  + [_fmt(v) for v in floats]))
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class _Packed:
    """Dataset flattened to contiguous arrays for batched forward passes."""

    x: np.ndarray        # (N, n, d)
    adj: np.ndarray      # (N, n, n)
    a_norm: np.ndarray   # (N, n, n)
    labels: np.ndarray   # (N,)
    n_classes: int


def _pack(dataset: graphs.Dataset) -> _Packed:
    counts = {g.n for g in dataset.graphs}
    if len(counts) != 1:
        raise ContractError(
            "training requires all graphs to share one node count; "
            f"got node counts {sorted(counts)}")
    x = np.stack([g.features for g in dataset.graphs])
    adj = np.stack([g.adjacency for g in dataset.graphs])
    a_norm = _normalize_batch(adj)
    labels = np.array([g.label for g in dataset.graphs], dtype=np.intp)
    return _Packed(x=x, adj=adj, a_norm=a_norm, labels=labels,
                   n_classes=dataset.n_classes)


def _normalize_batch(adj: np.ndarray) -> np.ndarray:
    a_hat = adj + np.eye(adj.shape[-1])
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=-1))
    return a_hat * inv_sqrt[..., :, None] * inv_sqrt[..., None, :]


def _posterior_means(packed: _Packed, params: model.ModelParams,
                     idx: np.ndarray | list[int], chunk: int = 256) -> np.ndarray:
    """Posterior mean latents (N, n, latent) for the given graphs."""
    idx = np.asarray(idx, dtype=np.intp)
    out = []
    with no_grad():
        for start in range(0, len(idx), chunk):
            sel = idx[start:start + chunk]
            lat = model.encode(packed.x[sel], packed.a_norm[sel], params,
                               sample=False)
            out.append(lat.mean.data)
    return np.concatenate(out) if out else np.empty((0,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def classifier_adjacency(packed: _Packed, params: model.ModelParams,
                         means: np.ndarray | None) -> np.ndarray:
    """Edge-weighted adjacency the classifier runs on, for all graphs.

    For the VAE variants this is the (transformed) subgraph weight on the
    observed support; the plain classifier sees the raw graph.  GCN-style
    classifiers additionally get the symmetric renormalization baked in.
    """
    cfg = params.config
    if cfg.variant == "plain-classifier" or means is None:
        wadj = packed.adj.copy()
    else:
        causal = means[:, :, :cfg.causal_dim]
        wadj = _sigmoid(causal @ causal.transpose(0, 2, 1)) * (packed.adj > 0)
    if cfg.classifier == "gcn":
        wadj = _normalize_batch(wadj)
    return wadj


def _val_accuracy(packed: _Packed, params: model.ModelParams,
                  val_idx: list[int], means_val: np.ndarray | None) -> float:
    sel = np.asarray(val_idx, dtype=np.intp)
    sub = _Packed(x=packed.x[sel], adj=packed.adj[sel], a_norm=packed.a_norm[sel],
                  labels=packed.labels[sel], n_classes=packed.n_classes)
    wadj = classifier_adjacency(sub, params, means_val)
    with no_grad():
        logits = model.classify(sub.x, wadj, params)
    pred = np.argmax(logits.data, axis=1)
    return float(np.mean(pred == sub.labels))


def _val_hsic(means_val: np.ndarray | None, causal_dim: int) -> float:
    if means_val is None or means_val.shape[0] < 3:
        return 0.0  # the independence diagnostic needs at least 3 samples
    b = means_val.shape[0]
    causal = means_val[:, :, :causal_dim].reshape(b, -1)
    nuisance = means_val[:, :, causal_dim:].reshape(b, -1)
    return kernels.hsic_from_samples(causal, nuisance)


def train(dataset: graphs.Dataset, config: model.TrainConfig
          ) -> tuple[model.ModelParams, History]:
    """Run the full two-stage schedule and return the best-validation model.

    Epochs 1..vae_epochs minimize the VAE objective plus the weighted causal
    objective over encoder and decoder; the causal term reads the posterior
    means, whose kernel geometry carries the label signal undiluted by
    sampling noise.  The remaining epochs freeze the encoder and train only
    the classifier on the explanation-weighted graphs.  The checkpoint
    returned is the parameter snapshot with the highest validation accuracy
    (latest epoch on ties); encoder and decoder in that snapshot are
    bit-identical to their stage-one final values.
    """
    config.validate()
    dataset.validate()
    sp = graphs.split(dataset, config.seed)
    if not sp.train or not sp.val or not sp.test:
        raise ContractError("every split part must be nonempty")
    packed = _pack(dataset)
    params = model.ModelParams.init(dataset.feature_dim, dataset.n_classes, config)
    noise_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 12)))
    dropout_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 13)))
    history = History()
    variant = config.variant
    lam = 0.0 if variant in ("no-causal", "plain-classifier") else config.causal_weight
    include_mi = variant != "non-mi"
    val_idx = sp.val

    def note_epoch(stats: EpochStats, snapshot: bool = True):
        history.rows.append(stats)
        # ties go to the later epoch: validation accuracy saturates long
        # before the decision boundary stops sharpening
        if snapshot and stats.val_accuracy >= history.best_val_accuracy:
            history.best_val_accuracy = stats.val_accuracy
            history.best_epoch = stats.epoch
            nonlocal best_params
            best_params = params.copy()

    best_params = params.copy()

    # -- stage 1: representation learning --------------------------------
    if variant != "plain-classifier":
        opt = Adam(params.encoder_decoder(), lr=config.learning_rate,
                   weight_decay=config.weight_decay)
        for epoch in range(1, config.vae_epochs + 1):
            sum_vae = sum_causal = 0.0
            batch_lists = graphs.batches(dataset, sp.train, config.batch_size,
                                         config.seed, epoch=epoch)
            for batch in batch_lists:
                sel = np.asarray(batch, dtype=np.intp)
                x = Tensor(packed.x[sel])
                a = Tensor(packed.adj[sel])
                a_norm = Tensor(packed.a_norm[sel])
                lat = model.encode(x, a_norm, params, rng=noise_rng, sample=True)
                a_rec, x_rec = model.decode(lat.z, params)
                loss = model.graphvae_loss(x, a, a_rec, x_rec, lat.mean, lat.logvar)
                sum_vae += loss.item() * len(sel)
                if lam > 0 and len(sel) >= 2:
                    k = config.causal_dim
                    closs, _ = model.causal_loss(lat.mean[:, :, :k],
                                                 lat.mean[:, :, k:],
                                                 packed.labels[sel],
                                                 packed.n_classes,
                                                 config.renyi_delta,
                                                 include_mi=include_mi)
                    sum_causal += closs.item() * len(sel)
                    loss = loss + lam * closs
                opt.zero_grad()
                loss.backward()
                opt.step()
            means_val = _posterior_means(packed, params, val_idx)
            note_epoch(EpochStats(
                epoch=epoch, stage=1,
                loss_vae=sum_vae / len(sp.train),
                loss_causal=sum_causal / len(sp.train) if lam > 0 else 0.0,
                loss_ce=0.0,
                val_accuracy=_val_accuracy(packed, params, val_idx, means_val),
                hsic_alpha_beta=_val_hsic(means_val, config.causal_dim)))

    # -- stage boundary: freeze the representation ------------------------
    if variant != "plain-classifier":
        means_all = _posterior_means(packed, params, np.arange(len(dataset)))
        means_val = means_all[np.asarray(val_idx, dtype=np.intp)]
        frozen_hsic = _val_hsic(means_val, config.causal_dim)
    else:
        means_all = None
        frozen_hsic = 0.0

    frozen_causal = 0.0
    if lam > 0 and means_all is not None:
        vals = []
        with no_grad():
            boundary = graphs.batches(dataset, sp.train, config.batch_size,
                                      config.seed, epoch=config.vae_epochs + 1)
            for batch in boundary:
                sel = np.asarray(batch, dtype=np.intp)
                if len(sel) < 2:
                    continue
                causal = means_all[sel][:, :, :config.causal_dim]
                nuisance = means_all[sel][:, :, config.causal_dim:]
                closs, _ = model.causal_loss(Tensor(causal), Tensor(nuisance),
                                             packed.labels[sel], packed.n_classes,
                                             config.renyi_delta,
                                             include_mi=include_mi)
                vals.append(closs.item() * len(sel))
        frozen_causal = float(np.sum(vals) / len(sp.train)) if vals else 0.0

    # -- stage 2: classification on the frozen weighted graphs ------------
    wadj_all = classifier_adjacency(packed, params, means_all)
    opt = Adam(params.classifier(), lr=config.learning_rate,
               weight_decay=config.weight_decay)
    if variant == "plain-classifier":
        # same classification budget as stage 2 of the full schedule
        stage2_epochs = range(1, config.epochs - config.vae_epochs + 1)
    else:
        stage2_epochs = range(config.vae_epochs + 1, config.epochs + 1)
    for epoch in stage2_epochs:
        sum_ce = 0.0
        for batch in graphs.batches(dataset, sp.train, config.batch_size,
                                    config.seed, epoch=epoch):
            sel = np.asarray(batch, dtype=np.intp)
            logits = model.classify(Tensor(packed.x[sel]), Tensor(wadj_all[sel]),
                                    params, dropout_rng=dropout_rng, train=True)
            ce = model.cross_entropy(logits, packed.labels[sel])
            sum_ce += ce.item() * len(sel)
            opt.zero_grad()
            ce.backward()
            opt.step()
        if means_all is not None:
            means_val_now = means_all[np.asarray(val_idx, dtype=np.intp)]
        else:
            means_val_now = None
        note_epoch(EpochStats(
            epoch=epoch, stage=2,
            loss_vae=0.0,
            loss_causal=frozen_causal,
            loss_ce=sum_ce / len(sp.train),
            val_accuracy=_val_accuracy(packed, params, val_idx, means_val_now),
            hsic_alpha_beta=frozen_hsic))

    return best_params, history


# -- inference -------------------------------------------------------------------


def predict_labels(params: model.ModelParams, dataset: graphs.Dataset,
                   indices: list[int] | None = None) -> np.ndarray:
    """Deterministic class predictions (posterior-mean path, no dropout)."""
    packed = _pack(dataset)
    idx = np.asarray(indices if indices is not None else range(len(dataset)),
                     dtype=np.intp)
    sub = _Packed(x=packed.x[idx], adj=packed.adj[idx], a_norm=packed.a_norm[idx],
                  labels=packed.labels[idx], n_classes=packed.n_classes)
    if params.config.variant == "plain-classifier":
        means = None
    else:
        means = _posterior_means(sub, params, np.arange(len(idx)))
    wadj = classifier_adjacency(sub, params, means)
    preds = []
    with no_grad():
        for start in range(0, len(idx), 256):
            logits = model.classify(sub.x[start:start + 256],
                                    wadj[start:start + 256], params)
            preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.intp)


def explain_graphs(params: model.ModelParams, dataset: graphs.Dataset,
                   indices: list[int] | None = None) -> list[model.Explanation]:
    """Per-graph edge-importance explanations from the frozen posterior mean."""
    if params.config.variant == "plain-classifier":
        raise ContractError("the plain classifier variant has no explanations")
    packed = _pack(dataset)
    idx = list(indices if indices is not None else range(len(dataset)))
    means = _posterior_means(packed, params, idx)
    k = params.config.causal_dim
    return [model.subgraph(means[i][:, :k], graph_id=g)
            for i, g in enumerate(idx)]


# -- checkpoint serialization ------------------------------------------------------


def _json_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _fmt(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_json_value(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_json_value(v)}"
                              for k, v in value.items()) + "}"
    raise TypeError(f"cannot serialize {type(value)!r}")


def checkpoint_json(params: model.ModelParams, history: History) -> str:
    """Serialize the model: every float as 17-significant-digit decimal, so a
    load reproduces the training state bit-exactly on any platform."""
    record = {
        "format_version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "parameters": {
            name: {"shape": list(t.data.shape),
                   "values": [float(v) for v in t.data.reshape(-1)]}
            for name, t in params.tensors.items()},
        "buffers": {
            name: {"shape": list(b.shape),
                   "values": [float(v) for v in b.reshape(-1)]}
            for name, b in params.buffers.items()},
        "history": {
            "best_epoch": history.best_epoch,
            "best_val_accuracy": history.best_val_accuracy,
            "columns": list(HISTORY_COLUMNS),
            "rows": [r.row() for r in history.rows]},
    }
    return _json_value(record) + "\n"


def save_checkpoint(path, params: model.ModelParams, history: History) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_json(params, history))


def load_checkpoint(path) -> tuple[model.ModelParams, History]:
    with open(path, "r", encoding="utf-8") as fh:
        record = json.load(fh)
    if record.get("format_version") != CHECKPOINT_VERSION:
        raise ContractError(
            f"unsupported checkpoint format_version {record.get('format_version')!r}")
    config = model.TrainConfig.from_dict(record["config"])
    tensors = {}
    for name, entry in record["parameters"].items():
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        tensors[name] = Tensor(arr, requires_grad=True)
    buffers = {name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
               for name, entry in record.get("buffers", {}).items()}
    hist_rec = record["history"]
    rows = [EpochStats(epoch=int(r[0]), stage=int(r[1]), loss_vae=float(r[2]),
                       loss_causal=float(r[3]), loss_ce=float(r[4]),
                       val_accuracy=float(r[5]), hsic_alpha_beta=float(r[6]))
            for r in hist_rec["rows"]]
    history = History(rows=rows, best_epoch=int(hist_rec["best_epoch"]),
                      best_val_accuracy=float(hist_rec["best_val_accuracy"]))
    return model.ModelParams(config, tensors, buffers), history
