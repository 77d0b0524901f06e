"""Multilayer perceptrons and the tanh-squashed Gaussian policy head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tape, Tensor

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0


@dataclass(frozen=True)
class MlpParams:
    """Dense layers with ReLU between them and optional tanh on the output."""

    weights: tuple[Tensor, ...]
    biases: tuple[Tensor, ...]
    output_tanh: bool = False

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("MLP needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: input width {w.shape[0]} != "
                                 f"previous output {self.weights[i - 1].shape[1]}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, output_tanh: bool = False,
             final_scale: float = 1.0) -> "MlpParams":
        """Uniform(+-1/sqrt(fan_in)) init; ``final_scale`` shrinks the last layer."""
        ws, bs = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            if i == len(sizes) - 2:
                bound *= final_scale
            ws.append(Tensor(rng.uniform(-bound, bound, size=(n_in, n_out))))
            bs.append(Tensor(rng.uniform(-bound, bound, size=(n_out,))))
        return cls(tuple(ws), tuple(bs), output_tanh)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors()]

    def with_arrays(self, arrays, requires_grad: bool = False) -> "MlpParams":
        arrays = list(arrays)
        ws = tuple(Tensor(a, requires_grad) for a in arrays[0::2])
        bs = tuple(Tensor(a, requires_grad) for a in arrays[1::2])
        return MlpParams(ws, bs, self.output_tanh)

    def differentiable(self) -> "MlpParams":
        return self.with_arrays(self.arrays(), requires_grad=True)

    def detached(self) -> "MlpParams":
        return self.with_arrays(self.arrays(), requires_grad=False)


def mlp_forward(params: MlpParams, x: Tensor, tape: Tape | None = None) -> Tensor:
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"MLP expects [batch, {params.in_dim}] input, got {x.shape}")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = T.linear(h, w, b, tape)
        if i < last:
            h = T.relu(h, tape)
    if params.output_tanh:
        h = T.tanh(h, tape)
    return h


def critic_value(critic: MlpParams, states: Tensor, actions: Tensor,
                 tape: Tape | None = None) -> Tensor:
    """Q(s, a) for a batch: concatenated (state, action) in, one value per row out."""
    return T.squeeze_last(mlp_forward(critic, T.concat_last(states, actions, tape), tape), tape)


@dataclass(frozen=True)
class GaussianTanhPolicy:
    """MLP trunk emitting per-action mean and log-std, squashed by tanh."""

    trunk: MlpParams
    action_dim: int

    def __post_init__(self):
        if self.trunk.out_dim != 2 * self.action_dim:
            raise ShapeError(f"trunk emits {self.trunk.out_dim} values, "
                             f"need {2 * self.action_dim}")

    @classmethod
    def init(cls, state_dim: int, action_dim: int, widths, rng: np.random.Generator,
             final_scale: float = 1.0) -> "GaussianTanhPolicy":
        sizes = [state_dim, *widths, 2 * action_dim]
        return cls(MlpParams.init(sizes, rng, final_scale=final_scale), action_dim)

    @property
    def state_dim(self) -> int:
        return self.trunk.in_dim

    def differentiable(self) -> "GaussianTanhPolicy":
        return GaussianTanhPolicy(self.trunk.differentiable(), self.action_dim)

    def detached(self) -> "GaussianTanhPolicy":
        return GaussianTanhPolicy(self.trunk.detached(), self.action_dim)

    def with_arrays(self, arrays, requires_grad: bool = False) -> "GaussianTanhPolicy":
        return GaussianTanhPolicy(self.trunk.with_arrays(arrays, requires_grad), self.action_dim)


@dataclass(frozen=True)
class TanhGaussian:
    mean: Tensor
    log_std: Tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mean.shape

    def sample(self, noise, tape: Tape | None = None) -> tuple[Tensor, Tensor]:
        """Reparameterized draw; returns (action, pre-tanh value)."""
        noise = noise if isinstance(noise, Tensor) else Tensor(noise)
        if noise.shape != self.mean.shape:
            raise ShapeError(f"noise shape {noise.shape} != action shape {self.mean.shape}")
        std = T.exp(self.log_std, tape)
        u = T.add(self.mean, T.mul(std, noise, tape), tape)
        return T.tanh(u, tape), u

    def log_prob_pre_tanh(self, u: Tensor, tape: Tape | None = None) -> Tensor:
        """Log-density of tanh(u), summed over action dimensions."""
        if u.shape != self.mean.shape:
            raise ShapeError(f"action shape {u.shape} != distribution shape {self.mean.shape}")
        dens = T.gaussian_log_density(u, self.mean, self.log_std, tape)
        corr = T.tanh_log_det(u, tape)
        return T.apply_primitive("SumLast", [T.apply_primitive("Sub", [dens, corr], tape)], tape)

    def log_prob(self, action: Tensor, tape: Tape | None = None) -> Tensor:
        return self.log_prob_pre_tanh(T.atanh_clipped(action, tape), tape)


def policy_distribution(policy: GaussianTanhPolicy, states: Tensor,
                        tape: Tape | None = None) -> TanhGaussian:
    if states.ndim != 2 or states.shape[1] != policy.state_dim:
        raise ShapeError(f"policy expects [batch, {policy.state_dim}] states, got {states.shape}")
    out = mlp_forward(policy.trunk, states, tape)
    a = policy.action_dim
    mean = T.slice_last(out, 0, a, tape)
    log_std = T.clip(T.slice_last(out, a, 2 * a, tape), LOG_STD_MIN, LOG_STD_MAX, tape)
    return TanhGaussian(mean, log_std)


def policy_sample_and_logprob(policy: GaussianTanhPolicy, states: Tensor, noise,
                              tape: Tape | None = None) -> tuple[Tensor, Tensor]:
    dist = policy_distribution(policy, states, tape)
    action, u = dist.sample(noise, tape)
    return action, dist.log_prob_pre_tanh(u, tape)


def deterministic_action(policy: GaussianTanhPolicy, states: np.ndarray) -> np.ndarray:
    """tanh(mean) without any taping; ``states`` is [batch, state_dim]."""
    out = _trunk_numpy(policy.trunk, np.asarray(states, dtype=np.float64))
    return np.tanh(out[:, :policy.action_dim])


def _trunk_numpy(trunk: MlpParams, h: np.ndarray) -> np.ndarray:
    last = len(trunk.weights) - 1
    for i, (w, b) in enumerate(zip(trunk.weights, trunk.biases)):
        h = h @ w.data + b.data
        if i < last:
            h = h * (h > 0)
    return np.tanh(h) if trunk.output_tanh else h


def sample_action(policy: GaussianTanhPolicy, states: np.ndarray,
                  noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Untaped stochastic action and its log-probability, for data collection."""
    out = _trunk_numpy(policy.trunk, np.asarray(states, dtype=np.float64))
    a = policy.action_dim
    mean = out[:, :a]
    log_std = np.clip(out[:, a:2 * a], LOG_STD_MIN, LOG_STD_MAX)
    u = mean + np.exp(log_std) * noise
    dens = -0.5 * noise ** 2 - log_std - 0.5 * np.log(2 * np.pi)
    corr = 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    return np.tanh(u), (dens - corr).sum(axis=1)
