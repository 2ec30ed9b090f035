"""Two-stage training (reconstruction pretraining, joint fine-tuning) and the
closed-form linear self-expression solver used as baseline and oracle."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .checkpoint import Checkpoint
from .errors import ConfigError, DivergenceError
from .model import Network, objective
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


@dataclass
class TrainConfig:
    stage: str
    epochs: int
    lr: float = 1e-3
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    freeze_conv: bool = False
    config_hash: str = ""

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ConfigError(f"stage must be 'pretrain' or 'finetune', got {self.stage!r}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


def _run(net: Network, X: np.ndarray, cfg: TrainConfig, resume: Checkpoint | None):
    if resume is not None and resume.stage == cfg.stage:
        state, start = resume.adam, resume.epoch
    else:
        state, start = AdamState(lr=cfg.lr), 0
    state.lr = cfg.lr
    trainable = "C" if cfg.freeze_conv else "all"
    trace: list[float] = []
    first = None
    for epoch in range(start, start + cfg.epochs):
        loss, grads, _ = objective(net, X, cfg.stage, cfg.lambdas, trainable=trainable)
        if first is None:
            first = abs(loss)
        if not np.isfinite(loss) or abs(loss) > DIVERGENCE_FACTOR * max(first, 1e-300):
            raise DivergenceError(
                f"{cfg.stage} diverged at epoch {epoch + 1}: loss={loss!r} (initial {first!r}); "
                f"lower the learning rate or check the input data")
        if cfg.stage == "pretrain":
            grads.pop("C", None)
        adam_step(net.params, grads, state)
        trace.append(loss)
        log.debug("%s epoch %d loss %.6g", cfg.stage, epoch + 1, loss)
    ckpt = Checkpoint(params={k: v.copy() for k, v in net.params.items()}, adam=state,
                      epoch=start + cfg.epochs, config_hash=cfg.config_hash, stage=cfg.stage)
    return ckpt, trace


def pretrain(net: Network, X: np.ndarray, cfg: TrainConfig, resume: Checkpoint | None = None):
    """Minimise ``||X - Xhat||_F^2`` over conv parameters with full-batch Adam.

    One epoch is one Adam step on all samples.  The self-expressive layer is
    bypassed and ``C`` is left untouched.  Returns ``(checkpoint, loss_trace)``
    where ``loss_trace[e]`` is the loss evaluated before step ``e``.
    """
    if cfg.stage != "pretrain":
        raise ConfigError("pretrain needs a TrainConfig with stage='pretrain'")
    return _run(net, X, cfg, resume)


def finetune(net: Network, X: np.ndarray, cfg: TrainConfig, resume: Checkpoint | None = None):
    """Minimise the joint objective over conv parameters and ``C``.

    Starts a fresh Adam state unless ``resume`` is a fine-tuning checkpoint.
    Returns ``(checkpoint, loss_trace)``; the learned ``C`` is
    ``checkpoint.params["C"]``.
    """
    if cfg.stage != "finetune":
        raise ConfigError("finetune needs a TrainConfig with stage='finetune'")
    return _run(net, X, cfg, resume)


def solve_linear_self_expression(Z: np.ndarray, mu: float) -> np.ndarray:
    """Minimiser of ``||C||_F^2 + (1/mu) ||Z - C^T Z||_F^2`` (rows of Z are samples).

    Stationarity gives ``(G + mu I) C = G`` with ``G = Z Z^T``, solved by
    Cholesky factorisation.  With ``mu = 2*lambda2/lambda3`` this is the
    minimiser over ``C`` of the joint objective's last two terms.
    """
    if not mu > 0:
        raise ConfigError(f"mu must be positive, got {mu}")
    Z = np.asarray(Z, dtype=np.float64)
    G = Z @ Z.T
    A = G + mu * np.eye(len(G))
    return cho_solve(cho_factor(A, lower=True), G)
