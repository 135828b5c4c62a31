"""Finite-difference verification suite covering every differentiable op."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, flatten_params, forward, init_params, params_from_flat

TOLERANCE = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def full_network_check(eps: float = 1e-5, seed: int = 0,
                       config: ModelConfig | None = None) -> float:
    """Gradient check of the whole scorer through a flat parameter vector."""
    if config is None:
        config = ModelConfig(in_channels=4, squeezed_channels=2, levels=2,
                             base_channels=2, expansion=2, width=1, height=1)
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(8, config.in_channels, config.width, config.height))
    flat = flatten_params(init_params(config, seed), config)
    # jitter off the zero-bias point: exact-zero pre-activations would put
    # the finite-difference probe right on a ReLU kink
    flat = flat + rng.uniform(-0.05, 0.05, size=flat.shape)

    def loss(flat_tensor):
        params = params_from_flat(flat_tensor, config)
        return ad.mean_all(forward(features, params, config).probs)

    return ad.grad_check(loss, flat, eps)


def gradient_suite(eps: float = 1e-5, seed: int = 0) -> list[CheckResult]:
    """Run every operation-level check plus the full-network check."""
    rng = np.random.default_rng(seed)
    x4 = rng.normal(size=(4, 3, 2, 2))
    k5 = rng.normal(size=(2, 3, 3, 1, 1))
    y4 = rng.normal(size=(3, 2, 2, 2))
    kt = rng.normal(size=(2, 3, 2, 1, 1))
    # keep pre-activations away from the ReLU kink and pooling off ties
    x_off = x4 + 0.05 * np.sign(x4)

    checks = [
        ("conv3d/input", lambda t: ad.mean_all(ad.conv3d(t, ad.Tensor(k5), padding=1)), x4),
        ("conv3d/kernels", lambda t: ad.mean_all(ad.conv3d(ad.Tensor(x4), t, padding=1)), k5),
        ("conv3d/strided", lambda t: ad.mean_all(
            ad.conv3d(t, ad.Tensor(k5), stride=(2, 1, 1), padding=(1, 0, 0))), x4),
        ("conv_transpose/input", lambda t: ad.mean_all(
            ad.conv_transpose(t, ad.Tensor(kt), stride=(2, 1, 1))), y4),
        ("conv_transpose/kernels", lambda t: ad.mean_all(
            ad.conv_transpose(ad.Tensor(y4), t, stride=(2, 1, 1))), kt),
        ("temporal_max_pool", lambda t: ad.mean_all(
            ad.temporal_max_pool(t, window=2, stride=2)), x_off),
        ("spatial_mean_pool", lambda t: ad.mean_all(ad.spatial_mean_pool(t)), x4),
        ("relu", lambda t: ad.mean_all(ad.relu(t)), x_off),
        ("sigmoid", lambda t: ad.mean_all(ad.sigmoid(t)), x4),
        ("log_sigmoid", lambda t: ad.mean_all(ad.log_sigmoid(t)), x4),
        ("channel_bias", lambda t: ad.mean_all(
            ad.add_channel_bias(ad.Tensor(x4), t)), rng.normal(size=3)),
        ("concat_channels", lambda t: ad.mean_all(
            ad.concat_channels(t, ad.Tensor(x4))), x4),
    ]
    results = [CheckResult(name, ad.grad_check(fn, point, eps)) for name, fn, point in checks]
    results.append(CheckResult("full_network", full_network_check(eps, seed)))
    return results
