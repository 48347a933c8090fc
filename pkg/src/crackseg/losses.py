"""Composite segmentation loss: weighted cross-entropy plus Dice overlap.

Cross-entropy sharpens per-pixel probabilities; the Dice term directly
rewards overlap with the thin positive class, which per-pixel losses
underweight on heavily imbalanced masks. Both take probabilities, not
logits, so the sigmoid stays part of the model graph.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, clamp, log, tmean, tsum
from .errors import ConfigError, ContractError, ShapeError

# probability floor/ceiling before the logs; keeps the loss finite for
# saturated sigmoids without visibly biasing it
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.75   # cross-entropy weight
    beta: float = 0.25    # Dice weight
    dice_eps: float = 1.0


def validate_loss_config(cfg: LossConfig) -> None:
    if cfg.alpha < 0.0 or cfg.beta < 0.0:
        raise ConfigError(f"loss weights must be >= 0, got "
                          f"alpha={cfg.alpha}, beta={cfg.beta}")
    if cfg.alpha + cfg.beta == 0.0:
        raise ConfigError("loss weights alpha and beta are both zero")
    if cfg.dice_eps <= 0.0:
        raise ConfigError(f"dice_eps must be positive, got {cfg.dice_eps}")


def _check_labels(probs, labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != probs.shape:
        raise ShapeError(f"labels {y.shape} vs probabilities {probs.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ContractError("labels must be binary (0/1)")
    return y


def bce_loss(probs: Tensor, labels) -> Tensor:
    """Mean over pixels of -[y ln p + (1-y) ln(1-p)], p clamped away
    from {0, 1}."""
    probs = as_tensor(probs)
    y = _check_labels(probs, labels)
    p = clamp(probs, BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = Tensor(y) * log(p) + Tensor(1.0 - y) * log(1.0 - p)
    return -tmean(ll)


def dice_loss(probs: Tensor, labels, eps: float = 1.0) -> Tensor:
    """1 - (2*overlap + eps) / (sum p + sum y + eps), over the whole batch
    as a single set. The eps rescues the empty-empty case to loss 0."""
    probs = as_tensor(probs)
    y = _check_labels(probs, labels)
    overlap = tsum(probs * Tensor(y))
    denom = tsum(probs) + float(y.sum())
    return 1.0 - (2.0 * overlap + eps) / (denom + eps)


def combined_loss(probs: Tensor, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    validate_loss_config(cfg)
    return (cfg.alpha * bce_loss(probs, labels)
            + cfg.beta * dice_loss(probs, labels, cfg.dice_eps))
