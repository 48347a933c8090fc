"""Single-image-batch training loop with best-on-validation selection.

Each epoch shuffles the training set with a seeded generator, steps the
optimizer once per image, then scores the validation set in eval mode.
The parameter state that scored the best validation F1 is restored into
the model before returning, so the caller always ends up with the
selected weights.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward, sigmoid
from .errors import ContractError, NumericError
from .fusion import predict_mask
from .losses import LossConfig, combined_loss
from .metrics import miou, prf1
from .optim import AdamW, lr_schedule
from .params import iter_params, iter_state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 5e-4
    weight_decay: float = 1e-4
    decay_epoch: int = 30
    threshold: float = 0.5
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)


def snapshot_state(params) -> dict:
    """Copy every leaf (trainable tensors and running buffers) by path."""
    out = {}
    for path, leaf, _ in iter_state(params):
        out[path] = (leaf.data if isinstance(leaf, Tensor) else leaf).copy()
    return out


def load_state(params, state: dict) -> None:
    seen = set()
    for path, leaf, _ in iter_state(params):
        if path not in state:
            raise ContractError(f"state is missing entry {path!r}")
        arr = leaf.data if isinstance(leaf, Tensor) else leaf
        if arr.shape != state[path].shape:
            raise ContractError(f"{path}: stored {state[path].shape} vs "
                                f"model {arr.shape}")
        arr[...] = state[path]
        seen.add(path)
    extra = set(state) - seen
    if extra:
        raise ContractError(f"state has unknown entries {sorted(extra)[:3]}")


def evaluate(params, images, masks, forward, threshold: float = 0.5) -> dict:
    """Mean F1 and mean IoU over a held-out set, in eval mode."""
    f1s, ious = [], []
    for i in range(len(images)):
        logits = forward(Tensor(images[i:i + 1]), params, training=False)
        pred = predict_mask(logits, threshold)[0, 0]
        f1s.append(prf1(pred, masks[i])[2])
        ious.append(miou(pred, masks[i]))
    return {"f1": float(np.mean(f1s)), "miou": float(np.mean(ious))}


def fit(params, forward, train_set, val_set, cfg: TrainConfig = TrainConfig(),
        log_fn=None) -> dict:
    """Returns {"history": [records], "best_epoch", "best_f1", "steps"}.

    train_set / val_set are (images [M,3,H,W], masks [M,H,W]) pairs with
    binary masks. Raises NumericError when the loss goes non-finite.
    """
    train_images, train_masks = train_set
    val_images, val_masks = val_set
    if len(train_images) == 0:
        raise ContractError("empty training set")
    if len(val_images) == 0:
        raise ContractError("empty validation set")
    if len(train_images) != len(train_masks):
        raise ContractError(f"{len(train_images)} images vs "
                            f"{len(train_masks)} masks")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW([t for _, t in iter_params(params)], lr=cfg.lr,
                weight_decay=cfg.weight_decay)
    history = []
    best_f1 = -1.0
    best_epoch = -1
    best_state = None
    for epoch in range(cfg.epochs):
        opt.lr = lr_schedule(epoch, cfg.lr, cfg.decay_epoch)
        losses = []
        for step, idx in enumerate(rng.permutation(len(train_images))):
            x = Tensor(train_images[idx:idx + 1])
            y = np.asarray(train_masks[idx:idx + 1],
                           dtype=np.float64)[:, None, :, :]
            probs = sigmoid(forward(x, params, training=True))
            loss = combined_loss(probs, y, cfg.loss)
            val = float(loss.data)
            if not np.isfinite(val):
                raise NumericError(
                    f"non-finite loss {val} at epoch {epoch}, step {step}")
            opt.zero_grad()
            backward(loss)
            opt.step()
            losses.append(val)
        scores = evaluate(params, val_images, val_masks, forward,
                          cfg.threshold)
        record = {"epoch": epoch, "loss": float(np.mean(losses)),
                  "val_f1": scores["f1"], "val_miou": scores["miou"],
                  "lr": opt.lr}
        history.append(record)
        if log_fn is not None:
            log_fn(record)
        if scores["f1"] > best_f1:
            best_f1 = scores["f1"]
            best_epoch = epoch
            best_state = snapshot_state(params)
    if best_state is not None:
        load_state(params, best_state)
    return {"history": history, "best_epoch": best_epoch,
            "best_f1": best_f1, "steps": opt.step_count}
