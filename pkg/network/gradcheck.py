"""Gradient stopping and the finite-difference gradient checker."""
import logging
import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

import config
from errors import NumericError

logger = logging.getLogger(__name__)

_ACTIVE_TAPE: ContextVar[Optional["StopGradientTape"]] = ContextVar('stop_gradient_tape', default=None)


class StopGradientTape:
    """
    Records every stop_gradient value of one forward pass and replays them on
    later passes.

    Autograd treats a stopped value as a constant. A finite-difference pass
    has to do the same, so perturbed passes reuse the recorded values instead
    of recomputing them.
    """

    def __init__(self):
        self.values: List[torch.Tensor] = []
        self._mode = None
        self._cursor = 0

    @contextmanager
    def recording(self):
        self.values = []
        with self._active('record'):
            yield self

    @contextmanager
    def replaying(self):
        self._cursor = 0
        with self._active('replay'):
            yield self
        if self._cursor != len(self.values):
            raise RuntimeError(
                f"stop_gradient replay consumed {self._cursor} of {len(self.values)} recorded values"
            )

    @contextmanager
    def _active(self, mode: str):
        self._mode = mode
        token = _ACTIVE_TAPE.set(self)
        try:
            yield
        finally:
            _ACTIVE_TAPE.reset(token)
            self._mode = None

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        if self._mode == 'record':
            value = x.detach().clone()
            self.values.append(value)
            return value.clone()
        if self._cursor >= len(self.values):
            raise RuntimeError("stop_gradient replay ran past the recorded values")
        value = self.values[self._cursor]
        self._cursor += 1
        if value.shape != x.shape:
            raise RuntimeError(f"stop_gradient replay shape mismatch: {tuple(value.shape)} vs {tuple(x.shape)}")
        return value.clone()


def stop_gradient(x: torch.Tensor) -> torch.Tensor:
    """Value of `x` with no gradient path back through it."""
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return x.detach()
    return tape.apply(x)


@dataclass
class GradCheckResult:
    max_error: float
    worst_parameter: str
    num_checked: int
    errors: List[Tuple[str, float, float, float]] = field(default_factory=list)

    def passed(self, tolerance: float = config.GRADCHECK_TOLERANCE) -> bool:
        return math.isfinite(self.max_error) and self.max_error < tolerance


NamedParameters = Union[nn.Module, Iterable[Tuple[str, torch.Tensor]]]


def _named(parameters: NamedParameters) -> List[Tuple[str, torch.Tensor]]:
    if isinstance(parameters, nn.Module):
        named = list(parameters.named_parameters())
    else:
        named = list(parameters)
    return [(name, p) for name, p in named if p.requires_grad]


def _finite_loss(loss_fn: Callable[[], torch.Tensor]) -> torch.Tensor:
    loss = loss_fn()
    if not bool(torch.isfinite(loss).all()):
        raise NumericError(f"grad_check: non-finite loss {float(loss)}")
    return loss


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    parameters: NamedParameters,
    eps: float = config.GRADCHECK_EPS,
    num_samples: int = config.GRADCHECK_SAMPLES,
    seed: int = 0,
    corrupt: bool = False,
) -> GradCheckResult:
    """
    Compares autograd gradients to central differences on sampled coordinates.

    Args:
        loss_fn: Zero-argument closure returning a scalar float64 loss
        parameters: Module or (name, tensor) pairs to check
        eps: Finite-difference step, in [1e-6, 1e-3]
        num_samples: Number of coordinates sampled uniformly without replacement
        seed: Sampling seed
        corrupt: Add 1 to the analytic gradient of one sampled coordinate

    Returns:
        GradCheckResult with max |analytic - numeric| / max(1, |numeric|)

    Raises:
        ValueError: If eps is out of range or parameters are not float64
        NumericError: If the loss is not finite
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-6, 1e-3], got {eps}")
    named = _named(parameters)
    if not named:
        raise ValueError("grad_check: no parameters require gradients")
    for name, p in named:
        if p.dtype != torch.float64:
            raise ValueError(f"grad_check needs float64 parameters, {name} is {p.dtype}")

    tape = StopGradientTape()
    with tape.recording():
        loss = _finite_loss(loss_fn)
    tensors = [p for _, p in named]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(tensors, grads)]

    sizes = np.array([p.numel() for p in tensors])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=min(num_samples, total), replace=False))

    records = []
    with torch.no_grad():
        for flat in picks:
            pi = int(np.searchsorted(offsets, flat, side='right') - 1)
            idx = int(flat - offsets[pi])
            name, p = named[pi]
            coord = p.view(-1)
            original = coord[idx].item()

            coord[idx] = original + eps
            with tape.replaying():
                f_plus = _finite_loss(loss_fn).item()
            coord[idx] = original - eps
            with tape.replaying():
                f_minus = _finite_loss(loss_fn).item()
            coord[idx] = original

            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = grads[pi].view(-1)[idx].item()
            records.append([f"{name}[{idx}]", analytic, numeric])

    if corrupt and records:
        # corrupt the coordinate with the smallest numeric gradient so the fault is visible
        target = min(records, key=lambda r: abs(r[2]))
        target[1] += 1.0

    errors = [(label, a, n, abs(a - n) / max(1.0, abs(n))) for label, a, n in records]
    worst = max(errors, key=lambda e: e[3])
    result = GradCheckResult(max_error=worst[3], worst_parameter=worst[0], num_checked=len(errors), errors=errors)
    logger.info(
        "grad_check | checked=%d | max_error=%.3e | worst=%s",
        result.num_checked, result.max_error, result.worst_parameter,
    )
    return result
