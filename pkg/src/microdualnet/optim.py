"""SGD with momentum and the warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .tensor import NonFiniteError


@dataclass
class OptimState:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    buffers: Dict[int, np.ndarray] = field(default_factory=dict)


def sgd_step(params: Sequence, state: OptimState, grads: Optional[Sequence[np.ndarray]] = None) -> None:
    """``v = momentum * v + g + wd * p``; ``p -= lr * v``.

    Weight decay is skipped for parameters flagged ``decay=False``.  Every
    gradient is checked before any parameter moves, so a non-finite gradient
    leaves the model untouched.
    """
    params = [p for p in params if p.requires_grad]
    if grads is None:
        grads = [p.grad for p in params]
    grads = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads)]
    for i, g in enumerate(grads):
        if g.shape != params[i].data.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {params[i].data.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {i}; step aborted")
    for i, (p, g) in enumerate(zip(params, grads)):
        d = g + state.weight_decay * p.data if state.weight_decay and getattr(p, "decay", True) else g
        v = state.buffers.get(i)
        v = d.copy() if v is None else state.momentum * v + d
        state.buffers[i] = v
        p.data -= (state.lr * v).astype(p.data.dtype)


def lr_at(epoch: float, total_epochs: float, base_lr: float = 0.01, warmup_epochs: float = 10,
          warmup_start: float = 0.001) -> float:
    """Linear warmup from ``warmup_start`` to ``base_lr``, then cosine decay to zero."""
    if warmup_epochs > 0 and epoch < warmup_epochs:
        return warmup_start + (base_lr - warmup_start) * (epoch / warmup_epochs)
    span = total_epochs - warmup_epochs
    if span <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup_epochs) / span))


def decay_groups(named_params) -> tuple:
    """Split parameter names into (decayed, exempt)."""
    decayed: List[str] = []
    exempt: List[str] = []
    for name, p in named_params:
        (decayed if getattr(p, "decay", True) else exempt).append(name)
    return decayed, exempt
