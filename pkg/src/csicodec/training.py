"""Rate-distortion training of the transforms and the entropy model.

The objective per sample is squared Frobenius reconstruction error plus
lambda times the code length (nats) of the noise-perturbed latents under
the factorized model.  Quantization is relaxed to additive uniform noise of
width equal to the finest ladder step, which keeps the rate term smooth.
Optimization is plain SGD with momentum; everything is deterministic given
the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .entropy_model import EntropyModelParams, interval_rate_nats
from .errors import ConfigurationError, DivergenceError
from .quantizer import QuantLadder
from .transforms import TransformParams, analyze_batch, synthesize_batch

MOMENTUM = 0.9


@dataclass(frozen=True)
class TrainConfig:
    lambda_: float
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    clip_norm: float | None = 5.0  # global gradient-norm ceiling; None disables

    def __post_init__(self):
        if self.lambda_ <= 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lambda_}")
        if min(self.learning_rate, self.epochs, self.batch_size) <= 0:
            raise ConfigurationError("learning rate, epochs, batch size must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be positive, got {self.clip_norm}")


@dataclass
class TrainableEntropy:
    """Entropy-model parameters as autodiff leaves."""

    mu: Tensor
    log_scale: Tensor

    @staticmethod
    def create(n_channels: int) -> "TrainableEntropy":
        return TrainableEntropy(
            mu=Tensor(np.zeros(n_channels), requires_grad=True),
            log_scale=Tensor(np.zeros(n_channels), requires_grad=True),
        )

    def snapshot(self, ladder: QuantLadder) -> EntropyModelParams:
        return EntropyModelParams(
            mu=self.mu.data.copy(), log_scale=self.log_scale.data.copy(), ladder=ladder
        )


@dataclass
class EpochStats:
    loss: float
    distortion: float
    rate_nats: float


def loss_and_gradients(
    batch: np.ndarray,
    params: TransformParams,
    entropy: TrainableEntropy,
    cfg: TrainConfig,
    ladder: QuantLadder,
    rng: np.random.Generator,
    training: bool = True,
):
    """One forward/backward pass.

    Returns (loss, distortion, rate_nats, grads) where the three scalars are
    batch means of per-sample totals and grads maps every trainable name to
    its gradient array.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if not np.all(np.isfinite(batch)):
        raise DivergenceError("non-finite training batch")
    b = batch.shape[0]
    step = ladder.base_step

    for t in params.weights.values():
        t.requires_grad = True
        t.grad = None
    entropy.mu.grad = None
    entropy.log_scale.grad = None

    x = Tensor(batch)
    y = analyze_batch(x, params)
    if training:
        noise = rng.uniform(-step / 2.0, step / 2.0, size=y.shape)
        y_tilde = y + Tensor(noise)
    else:
        y_tilde = y
    x_hat = synthesize_batch(y_tilde, params)
    distortion = ((x_hat - x) ** 2.0).sum() * (1.0 / b)
    rate = interval_rate_nats(entropy.mu, entropy.log_scale, y_tilde, step) * (1.0 / b)
    loss = distortion + cfg.lambda_ * rate

    if not np.isfinite(loss.data) or float(loss.data) > 1e12:
        raise DivergenceError(
            f"loss diverged: distortion={float(distortion.data)}, rate={float(rate.data)}"
        )
    loss.backward()
    grads = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in _trainables(params, entropy)
    }
    return float(loss.data), float(distortion.data), float(rate.data), grads


def _trainables(params: TransformParams, entropy: TrainableEntropy):
    items = list(params.weights.items())
    items.append(("entropy.mu", entropy.mu))
    items.append(("entropy.log_scale", entropy.log_scale))
    return items


def train(
    dataset: np.ndarray,
    cfg: TrainConfig,
    params: TransformParams,
    ladder: QuantLadder,
    entropy: TrainableEntropy | None = None,
) -> tuple[TransformParams, EntropyModelParams, list]:
    """Joint gradient descent on transform and entropy parameters.

    dataset is (N, 2, n_delay, n_tx) in the normalized domain.  Returns the
    trained params, an immutable entropy snapshot, and per-epoch stats.  On
    divergence the last finished epoch's weights are restored and a
    DivergenceError carrying the partial history is raised.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 4 or dataset.shape[0] == 0:
        raise ConfigurationError("dataset must be a nonempty (N, 2, H, W) array")
    if entropy is None:
        entropy = TrainableEntropy.create(params.latent_shape[0])
    rng = np.random.default_rng([cfg.seed, 11])
    trainables = _trainables(params, entropy)
    velocity = {name: np.zeros_like(t.data) for name, t in trainables}
    history: list[EpochStats] = []
    checkpoint = {name: t.data.copy() for name, t in trainables}

    n = dataset.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        try:
            for lo in range(0, n, cfg.batch_size):
                batch = dataset[order[lo : lo + cfg.batch_size]]
                loss, dist, rate, grads = loss_and_gradients(
                    batch, params, entropy, cfg, ladder, rng
                )
                if cfg.clip_norm is not None:
                    gnorm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                    if gnorm > cfg.clip_norm:
                        factor = cfg.clip_norm / gnorm
                        for g in grads.values():
                            g *= factor
                for name, t in trainables:
                    v = velocity[name]
                    v *= MOMENTUM
                    v -= cfg.learning_rate * grads[name]
                    t.data = t.data + v
                sums += (loss, dist, rate)
                batches += 1
        except DivergenceError as e:
            for name, t in trainables:
                t.data = checkpoint[name]
            e.args = (f"{e.args[0]}; restored last finished epoch "
                      f"({len(history)} epochs kept)",)
            e.history = history
            raise
        history.append(EpochStats(*(float(v) for v in sums / batches)))
        checkpoint = {name: t.data.copy() for name, t in trainables}
    return params, entropy.snapshot(ladder), history
