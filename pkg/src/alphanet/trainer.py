"""SGD-with-momentum training loop, plateau learning-rate schedule, and
Top-1 evaluation.

Update rule: v <- mu*v + g + wd*p; p <- p - lr*v, with weight decay
skipped for BN affine parameters and gate logits.  The learning rate
starts at lr0 and is divided by 10 when validation error plateaus, at
most max_reductions times.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from . import losses as LS
from .graph import Network, total_loss
from .rng import PrngStream

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainingDiverged",
    "sgd_step",
    "lr_schedule_update",
    "train",
    "evaluate_top1",
    "save_checkpoint",
    "load_checkpoint",
    "write_history_csv",
]

HISTORY_FIELDS = ("epoch", "train_loss", "val_error", "lr")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last good parameter snapshot."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    accumulation_factor: int = 1
    max_epochs: int = 50
    plateau_epsilon: float = 1e-3
    plateau_patience: int = 5
    max_reductions: int = 3
    lambda_aux: float = 0.3
    loss: LS.LossConfig = field(default_factory=LS.LossConfig)
    seed: int = 0
    dtype: str = "float32"
    augment: D.AugmentConfig | None = None
    target_val_error: float | None = None

    def __post_init__(self):
        if self.lr0 < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("rates must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.batch_size % self.accumulation_factor:
            raise ValueError("accumulation_factor must divide batch_size")
        if self.lambda_aux < 0:
            raise ValueError("lambda_aux must be non-negative")


@dataclass
class TrainState:
    velocity: dict = field(default_factory=dict)
    lr: float = 0.01
    reductions_done: int = 0
    best_val_error: float = float("inf")
    epochs_since_improvement: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)


def _decay_exempt(name: str) -> bool:
    return name.startswith("gate/") or name.endswith("/gamma") or name.endswith("/beta")


def sgd_step(params: dict, grads: dict, state: TrainState, cfg: TrainConfig):
    """One momentum-SGD update in place; aborts on non-finite gradients."""
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter {name!r}")
        if cfg.weight_decay and not _decay_exempt(name):
            g = g + cfg.weight_decay * p
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = cfg.momentum * v + g
        state.velocity[name] = v
        params[name] = p - state.lr * v


def lr_schedule_update(state: TrainState, val_error: float, cfg: TrainConfig):
    """Plateau rule: divide lr by 10 after `patience` epochs without an
    improvement of more than plateau_epsilon, at most max_reductions times."""
    if val_error < state.best_val_error - cfg.plateau_epsilon:
        state.best_val_error = val_error
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
        if (state.epochs_since_improvement >= cfg.plateau_patience
                and state.reductions_done < cfg.max_reductions):
            state.reductions_done += 1
            state.epochs_since_improvement = 0
    state.lr = cfg.lr0 * 10.0 ** (-state.reductions_done)
    return state


def _batch_losses(net: Network, x, labels, cfg: TrainConfig, stream):
    """Forward + loss + backward for one micro-batch; returns (loss, grads)."""
    fp = net.forward(x, train=True, stream=stream)
    p = net.params
    main_loss, _, main_grads = LS.apply_loss(cfg.loss, fp.features, p["head/W"], p["head/b"], labels)
    aux_losses = []
    aux_feature_grads = {}
    head_grads = {"head/W": main_grads["weights"], "head/b": main_grads["bias"]}
    aux_blocks = sorted(fp.aux_features)
    if cfg.lambda_aux > 0 and aux_blocks:
        scale = cfg.lambda_aux / len(aux_blocks)
        for bi in aux_blocks:
            feats = fp.aux_features[bi]
            loss_i, _, g_i = LS.apply_loss(cfg.loss, feats, p[f"block{bi}/aux/W"],
                                           p[f"block{bi}/aux/b"], labels)
            aux_losses.append(loss_i)
            aux_feature_grads[bi] = scale * g_i["features"]
            head_grads[f"block{bi}/aux/W"] = scale * g_i["weights"]
            head_grads[f"block{bi}/aux/b"] = scale * g_i["bias"]
    loss = total_loss(main_loss, aux_losses, cfg.lambda_aux)
    grads = net.backward(fp, main_grads["features"], aux_feature_grads)
    for name, g in head_grads.items():
        grads[name] = grads[name] + g
    return loss, grads


def train(net: Network, train_ds: D.Dataset, val_ds: D.Dataset, cfg: TrainConfig,
          out_dir=None):
    """Full training loop; deterministic given cfg.seed.

    Returns (params, history) where history rows are dicts with keys
    epoch, train_loss, val_error, lr.  Raises TrainingDiverged (with the
    last good snapshot attached) if the loss goes non-finite.
    """
    dtype = np.float64 if cfg.dtype == "float64" else np.float32
    net.astype(dtype)
    state = TrainState(lr=cfg.lr0)
    n = len(train_ds)
    micro = cfg.batch_size // cfg.accumulation_factor
    last_good = None
    for epoch in range(cfg.max_epochs):
        state.epoch = epoch
        epoch_stream = PrngStream(cfg.seed, f"train/epoch{epoch}")
        order = epoch_stream.fork("shuffle").shuffle(n)
        losses = []
        for b0 in range(0, n, cfg.batch_size):
            idxs = order[b0 : b0 + cfg.batch_size]
            imgs = []
            for i in idxs:
                img, _ = train_ds.samples[i]
                if cfg.augment is not None:
                    img = D.augment(img, cfg.augment, epoch_stream.fork(f"aug/{i}"))
                imgs.append(img)
            x = np.stack(imgs).astype(dtype)
            y = train_ds.labels()[idxs]
            acc_grads = None
            acc_loss = 0.0
            steps = 0
            for m0 in range(0, len(idxs), micro):
                xm, ym = x[m0 : m0 + micro], y[m0 : m0 + micro]
                if len(ym) < 2:
                    continue  # BN needs at least 2 values per channel
                bs = epoch_stream.fork(f"batch{b0}/micro{m0}")
                loss, grads = _batch_losses(net, xm, ym, cfg, bs)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}", checkpoint=last_good)
                acc_loss += float(loss)
                steps += 1
                if acc_grads is None:
                    acc_grads = grads
                else:
                    for k in acc_grads:
                        acc_grads[k] = acc_grads[k] + grads[k]
            if steps == 0:
                continue
            for k in acc_grads:
                acc_grads[k] = acc_grads[k] / steps
            sgd_step(net.params, acc_grads, state, cfg)
            losses.append(acc_loss / steps)
        val_acc = evaluate_top1(net, val_ds, cfg.loss)
        val_error = 1.0 - val_acc
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan"),
               "val_error": val_error, "lr": state.lr}
        state.history.append(row)
        lr_schedule_update(state, val_error, cfg)
        last_good = {k: v.copy() for k, v in net.params.items()}
        if out_dir is not None:
            write_history_csv(state.history, Path(out_dir) / "history.csv")
        if cfg.target_val_error is not None and val_error <= cfg.target_val_error:
            break
    return net.params, state.history


# ---- evaluation --------------------------------------------------------


def _scores(net: Network, x, loss_cfg: LS.LossConfig):
    fp = net.forward(x, train=False)
    W, b = net.params["head/W"], net.params["head/b"]
    if loss_cfg.kind == "softmax":
        return fp.features @ W.T + b
    cos, _ = LS.cosine_logits(fp.features, W)
    return loss_cfg.s * cos


def evaluate_top1(net: Network, ds: D.Dataset, loss_cfg: LS.LossConfig,
                  eval_mode: str = "single", batch_size: int = 64,
                  crop_size: int | None = None, scales=None) -> float:
    """Fraction of samples whose argmax score matches the label.

    Ties break toward the lowest class index.  Modes: single forward,
    10-crop score averaging, or multi-scale score averaging.
    """
    if len(ds) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    labels = ds.labels()
    dtype = net.params["head/W"].dtype
    correct = 0
    if eval_mode == "single":
        for b0 in range(0, len(ds), batch_size):
            x = np.stack([img for img, _ in ds.samples[b0 : b0 + batch_size]]).astype(dtype)
            preds = _scores(net, x, loss_cfg).argmax(axis=1)
            correct += int((preds == labels[b0 : b0 + batch_size]).sum())
        return correct / len(ds)
    for i, (img, y) in enumerate(ds.samples):
        if eval_mode == "ten_crop":
            size = crop_size or (img.shape[1] * 3) // 4
            crops = np.stack(D.ten_crop(img, size)).astype(dtype)
            probs = D._softmax(_scores(net, crops, loss_cfg)).mean(axis=0)
        elif eval_mode == "multi_scale":
            use = scales or [32, 64, 128]
            probs = D.multi_scale_scores(
                lambda xb: _scores(net, xb.astype(dtype), loss_cfg), img, use,
                net.spec.min_input)
        else:
            raise ValueError(f"unknown eval_mode {eval_mode!r}")
        correct += int(probs.argmax() == y)
    return correct / len(ds)


# ---- persistence -------------------------------------------------------


def save_checkpoint(net: Network, directory):
    """Manifest text + flat parameter blob with per-tensor name index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.txt").write_text(net.spec.to_manifest())
    blob = dict(net.params)
    for name, buf in net.buffers.items():
        blob[f"buffer:{name}:running_mean"] = buf["running_mean"]
        blob[f"buffer:{name}:running_var"] = buf["running_var"]
        blob[f"buffer:{name}:initialized"] = np.array(int(buf["initialized"]))
    np.savez(directory / "params.npz", **blob)


def load_checkpoint(directory) -> Network:
    from .graph import NetworkSpec

    directory = Path(directory)
    spec = NetworkSpec.from_manifest((directory / "manifest.txt").read_text())
    blob = np.load(directory / "params.npz")
    params = {}
    buffers = {}
    for name in blob.files:
        if name.startswith("buffer:"):
            _, bn_name, kind = name.split(":")
            buf = buffers.setdefault(bn_name, {})
            if kind == "initialized":
                buf["initialized"] = bool(blob[name])
            else:
                buf[kind] = blob[name]
        else:
            params[name] = blob[name]
    return Network(spec, params, buffers)


def write_history_csv(history, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_FIELDS})
