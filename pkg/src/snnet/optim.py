"""Optimization pieces: Xavier-uniform init, the exponential learning-rate
schedule between its two endpoints, and bias-corrected Adam."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def xavier_uniform(fan_in: int, fan_out: int, shape, rng) -> Tensor:
    """Uniform on [-b, b] with b = sqrt(6 / (fan_in + fan_out)).

    For convolutions the fans are channels times kernel area.
    """
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fans must be positive")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-bound, bound, size=tuple(shape))
    return Tensor(data, requires_grad=True)


@dataclass
class TrainPlan:
    """Hyperparameters of one training run."""

    iterations: int
    batch_size: int = 128
    lr_start: float = 1e-2
    lr_end: float = 5e-4
    dropout: float = 0.4
    seed: int = 0
    augment_prob: float = 0.5

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not (self.lr_start > self.lr_end > 0.0):
            raise ValueError("need lr_start > lr_end > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ValueError("augment_prob must lie in [0, 1]")


def default_cnn_plan(seed: int = 0) -> TrainPlan:
    return TrainPlan(iterations=4500, seed=seed)


def default_siamese_plan(seed: int = 0) -> TrainPlan:
    return TrainPlan(iterations=9000, seed=seed)


def lr_at(step: int, plan: TrainPlan) -> float:
    """Exponential interpolation from lr_start at step 0 to lr_end at the
    final step; both endpoints are hit exactly."""
    if not 0 <= step <= plan.iterations:
        raise ValueError(f"step {step} outside [0, {plan.iterations}]")
    if step == 0:
        return plan.lr_start
    if step == plan.iterations:
        return plan.lr_end
    return plan.lr_start * (plan.lr_end / plan.lr_start) ** (step / plan.iterations)


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors."""

    def __init__(self, params):
        self.params = list(params)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float):
        """Apply one update from the gradients currently on the parameters."""
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter {p.data.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient encountered; aborting")
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * (g * g)
            m_hat = self.m[i] / (1.0 - ADAM_BETA1**t)
            v_hat = self.v[i] / (1.0 - ADAM_BETA2**t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
