"""Global prior: a patch-to-lifetime CNN trained on the sampled pixels.

The network regresses the centre pixel's lifetime from its two-channel
intensity patch.  Labels are standardized (mean / IQR) before training and
predictions are mapped back afterwards.  Because patches cannot be centred
within ``edge_margin`` pixels of the borders, the prior comes with a binary
weight plane that is 1 on the in-bounds interior and 0 on the margin frame.

Training several times from different seeds and keeping the median-quality
prior guards against a bad initialization; quality is scored without ground
truth, as the self-consistency MAE between the decimated prior and the LR
lifetimes it was trained on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Plane, SamplingMap
from .fileio import read_raw, write_raw
from .network import Adam, Network, build_network, mae_loss
from .patches import GlobalPriorConfig, PatchSet, augment, extract_patches
from .sampling import decimate

_PREDICT_CHUNK = 4096


@dataclass
class TrainedPredictor:
    """A trained patch-to-lifetime network plus its label normalization.

    ``loss_curve`` is the mean per-epoch training MAE, already mapped back to
    lifetime units.
    """

    architecture: dict
    weights: list
    seed: int
    label_mean: float
    label_scale: float
    train_mae: float
    val_mae: float | None
    loss_curve: np.ndarray
    _network: Network | None = field(default=None, repr=False, compare=False)

    def network(self) -> Network:
        if self._network is None:
            arch = self.architecture
            rng = np.random.default_rng(0)
            net = build_network(arch["patch_side"], arch["in_channels"],
                               tuple(arch["conv_filters"]), arch["kernel_size"],
                               tuple(arch["dense_units"]), rng)
            params = net.params
            if len(params) != len(self.weights):
                raise ValueError("weight list does not match the architecture")
            for p, w in zip(params, self.weights):
                if p.shape != np.shape(w):
                    raise ValueError("weight shapes do not match the architecture")
                p[...] = w
            self._network = net
        return self._network

    def predict(self, patches: np.ndarray) -> np.ndarray:
        """Lifetimes for a (N, p, p, 2) patch stack, evaluated in chunks."""
        net = self.network()
        out = np.empty(patches.shape[0], dtype=np.float64)
        for start in range(0, patches.shape[0], _PREDICT_CHUNK):
            chunk = np.asarray(patches[start:start + _PREDICT_CHUNK], dtype=np.float64)
            out[start:start + chunk.shape[0]] = net.forward(chunk)[:, 0]
        return out * self.label_scale + self.label_mean

    def save(self, path) -> None:
        header = {
            "kind": "predictor",
            "byte_order": "little",
            "dtype": "float64",
            "architecture": self.architecture,
            "seed": int(self.seed),
            "label_mean": float(self.label_mean),
            "label_scale": float(self.label_scale),
            "train_mae": float(self.train_mae),
            "val_mae": None if self.val_mae is None else float(self.val_mae),
            "loss_curve": [float(v) for v in self.loss_curve],
            "weight_shapes": [list(np.shape(w)) for w in self.weights],
        }
        payload = b"".join(np.ascontiguousarray(w, dtype="<f8").tobytes() for w in self.weights)
        write_raw(path, header, payload)

    @classmethod
    def load(cls, path) -> "TrainedPredictor":
        header, payload = read_raw(path)
        if header.get("kind") != "predictor":
            raise ValueError(f"{path}: fbin kind {header.get('kind')!r} is not a predictor")
        weights = []
        cursor = 0
        for shape in header["weight_shapes"]:
            n = int(np.prod(shape)) * 8
            if cursor + n > len(payload):
                raise ValueError(f"{path}: predictor payload shorter than its weight shapes")
            weights.append(np.frombuffer(payload[cursor:cursor + n], dtype="<f8")
                           .reshape([int(s) for s in shape]).astype(np.float64))
            cursor += n
        if cursor != len(payload):
            raise ValueError(f"{path}: predictor payload longer than its weight shapes")
        return cls(
            architecture=header["architecture"],
            weights=weights,
            seed=int(header["seed"]),
            label_mean=float(header["label_mean"]),
            label_scale=float(header["label_scale"]),
            train_mae=float(header["train_mae"]),
            val_mae=None if header.get("val_mae") is None else float(header["val_mae"]),
            loss_curve=np.asarray(header.get("loss_curve", []), dtype=np.float64),
        )


def _label_stats(labels: np.ndarray) -> tuple[float, float]:
    """Mean and a robust scale (IQR, falling back to std, then 1)."""
    mean = float(labels.mean())
    q75, q25 = np.percentile(labels, [75, 25])
    scale = float(q75 - q25)
    if scale == 0.0:
        scale = float(labels.std())
    if scale == 0.0:
        scale = 1.0
    return mean, scale


def train_predictor(patchset: PatchSet, cfg: GlobalPriorConfig, seed: int,
                    val_fraction: float = 0.0) -> TrainedPredictor:
    """Train one network on the labeled patches of ``patchset``.

    ``val_fraction`` carves a held-out share of the instances for the
    validation MAE; 0 trains on everything and reports ``val_mae=None``.
    Training is bit-reproducible for a fixed (patchset, cfg, seed).
    """
    mask = patchset.labeled_mask
    patches = np.asarray(patchset.patches[mask], dtype=np.float64)
    labels = patchset.labels[mask]
    n = patches.shape[0]
    if n < 1:
        raise ValueError("no labeled instances to train on")
    if not (0.0 <= val_fraction < 1.0):
        raise ValueError("val_fraction must be in [0, 1)")

    mean, scale = _label_stats(labels)
    targets = (labels - mean) / scale

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(val_fraction * n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size < 1:
        raise ValueError("validation split leaves no training instances")

    arch = {
        "patch_side": cfg.patch_side,
        "in_channels": 2,
        "conv_filters": list(cfg.conv_filters),
        "kernel_size": cfg.kernel_size,
        "dense_units": list(cfg.dense_units),
    }
    net = build_network(cfg.patch_side, 2, cfg.conv_filters, cfg.kernel_size,
                        cfg.dense_units, rng)
    adam = Adam(net.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)

    x_train, y_train = patches[train_idx], targets[train_idx]
    n_train = x_train.shape[0]
    batch = min(cfg.batch, n_train)
    curve = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n_train, batch):
            idx = order[start:start + batch]
            pred = net.forward(x_train[idx])[:, 0]
            loss, grad = mae_loss(pred, y_train[idx])
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}; "
                    f"lower the learning rate (currently {cfg.learning_rate})")
            net.backward(grad[:, None])
            adam.step(net.grads)
            epoch_loss += loss
            n_batches += 1
        curve[epoch] = epoch_loss / n_batches * scale

    def _dataset_mae(x: np.ndarray, y: np.ndarray) -> float:
        err, count = 0.0, 0
        for start in range(0, x.shape[0], _PREDICT_CHUNK):
            pred = net.forward(x[start:start + _PREDICT_CHUNK])[:, 0]
            err += float(np.abs(pred - y[start:start + _PREDICT_CHUNK]).sum())
            count += pred.size
        return err / count * scale

    predictor = TrainedPredictor(
        architecture=arch,
        weights=[p.copy() for p in net.params],
        seed=int(seed),
        label_mean=mean,
        label_scale=scale,
        train_mae=_dataset_mae(x_train, y_train),
        val_mae=_dataset_mae(patches[val_idx], targets[val_idx]) if n_val else None,
        loss_curve=curve,
    )
    return predictor


def prior_weight_plane(hr_shape, edge_margin: int) -> Plane:
    """Binary confidence plane: 1 on the in-bounds interior, 0 on the margin."""
    w = np.zeros(hr_shape, dtype=np.float64)
    w[edge_margin:hr_shape[0] - edge_margin, edge_margin:hr_shape[1] - edge_margin] = 1.0
    return Plane(values=w, role="weight", units="")


def predict_global_prior(predictor: TrainedPredictor, patchset: PatchSet,
                         hr_shape) -> tuple[Plane, Plane]:
    """Evaluate the predictor over an extraction patch set.

    Returns the prior plane (zero outside the covered pixels, predictions
    clipped at zero) and its binary weight plane.
    """
    hr_shape = tuple(int(s) for s in hr_shape)
    preds = predictor.predict(patchset.patches)
    values = np.zeros(hr_shape, dtype=np.float64)
    rows, cols = patchset.origins[:, 0], patchset.origins[:, 1]
    if rows.max() >= hr_shape[0] or cols.max() >= hr_shape[1]:
        raise ValueError("patch origins fall outside hr_shape")
    values[rows, cols] = np.maximum(preds, 0.0)
    return (Plane(values=values, role="prior", units="ns"),
            prior_weight_plane(hr_shape, patchset.edge_margin))


@dataclass
class GlobalPriorResult:
    """Everything produced by a multi-init global-prior run."""

    prior: Plane
    weight: Plane
    predictors: list
    scores: list
    chosen: int


def _self_consistency(prior: Plane, weight: Plane, lr_tau: Plane,
                      smap: SamplingMap) -> float:
    dec_prior = decimate(prior, smap)
    dec_weight = decimate(weight, smap)
    mask = (dec_weight.values == 1.0) & ~np.isnan(lr_tau.values)
    if not mask.any():
        raise ValueError("no in-bounds samples to score the prior against")
    return float(np.abs(dec_prior.values - lr_tau.values)[mask].mean())


def train_global_prior(lr_tau: Plane, hr_intensity: Plane, smap: SamplingMap,
                       cfg: GlobalPriorConfig = GlobalPriorConfig(),
                       seed: int = 0) -> GlobalPriorResult:
    """Train ``cfg.n_inits`` networks and keep the median-quality prior.

    Initializations use seeds ``seed, seed+1, ...``.  Quality is the
    self-consistency MAE against the LR lifetimes (lower is better); the
    median-ranked prior is returned (lower median for even counts).
    """
    patchset = extract_patches(hr_intensity, lr_tau, smap, cfg)
    training = augment(patchset, smap, cfg)

    candidates = []
    for k in range(cfg.n_inits):
        predictor = train_predictor(training, cfg, seed + k)
        prior, weight = predict_global_prior(predictor, patchset, smap.hr_shape)
        score = _self_consistency(prior, weight, lr_tau, smap)
        candidates.append((predictor, prior, weight, score))

    scores = [c[3] for c in candidates]
    order = np.argsort(np.asarray(scores), kind="stable")
    chosen = int(order[(len(order) - 1) // 2])
    predictor, prior, weight, _ = candidates[chosen]
    return GlobalPriorResult(
        prior=prior,
        weight=weight,
        predictors=[c[0] for c in candidates],
        scores=scores,
        chosen=chosen,
    )


def select_median_prior(lr_tau: Plane, hr_intensity: Plane, smap: SamplingMap,
                        cfg: GlobalPriorConfig = GlobalPriorConfig(),
                        seed: int = 0) -> tuple[Plane, Plane]:
    """Convenience wrapper around :func:`train_global_prior`."""
    result = train_global_prior(lr_tau, hr_intensity, smap, cfg, seed)
    return result.prior, result.weight
