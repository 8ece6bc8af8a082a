"""Finite-difference verification of the full model's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, ModelParams, batch_loss

TOY_SESSION = (0, 1, 2, 1, 3)
TOY_LABEL = 4


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}, max rel err {self.max_error:.3e} (tolerance {self.tolerance:g})"


def check_model_gradients(params: ModelParams, sequences, labels, h: float = 1e-5,
                          tolerance: float = 1e-4) -> GradcheckReport:
    """Compare backprop against central differences for every parameter tensor."""
    params.zero_grad()
    batch_loss(params, sequences, labels).backward()
    report = GradcheckReport(tolerance=tolerance)

    def value():
        return batch_loss(params, sequences, labels).item()

    for name, tensor in params.named_tensors().items():
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        numeric = ad.numerical_grad(value, tensor, h)
        report.errors[name] = ad.relative_error(analytic, numeric)
    params.zero_grad()
    return report


def toy_gradcheck(n_items: int = 6, dim: int = 8, layers: int = 2, heads: int = 2, steps: int = 2,
                  readout: str = "set2set", combine: str = "mean", seed: int = 0, init_std: float = 0.1,
                  sequence=TOY_SESSION, label: int = TOY_LABEL, h: float = 1e-5,
                  tolerance: float = 1e-4) -> GradcheckReport:
    config = ModelConfig(dim=dim, layers=layers, heads=heads, steps=steps, readout=readout,
                         combine=combine, init_std=init_std)
    params = ModelParams.init(config, n_items, np.random.default_rng(seed))
    return check_model_gradients(params, [tuple(sequence)], [label], h, tolerance)
