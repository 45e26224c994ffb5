"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_input: List[float] = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_error:.3e} tol={self.tol:.0e} elements={self.checked}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-10) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``.

    Returns 0 when both gradients are below ``atol`` in norm (a gradient that
    is identically zero on both sides is a match).
    """
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < atol:
        return float(diff)
    return float(diff / scale)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence,
    tol: float = 1e-5,
    h: float = 1e-5,
    max_elements: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar closure against central differences.

    Parameters
    ----------
    fn
        Maps tensors (one per entry of ``inputs``) to a scalar tensor.
    inputs
        Arrays or tensors; every one is differentiated.
    max_elements
        When given, only this many randomly chosen entries per input are
        perturbed (the analytic gradient is compared on the same entries).
    """
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    backward(out, leaves)
    analytic = [leaf.grad for leaf in leaves]

    rng = np.random.default_rng(seed)
    errors = []
    checked = 0
    for i, base in enumerate(arrays):
        flat = base.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.empty(idx.size)
        for j, k in enumerate(idx):
            saved = flat[k]
            flat[k] = saved + h
            fp = float(fn(*[Tensor(a) for a in arrays]).data.sum())
            flat[k] = saved - h
            fm = float(fn(*[Tensor(a) for a in arrays]).data.sum())
            flat[k] = saved
            numeric[j] = (fp - fm) / (2.0 * h)
        checked += idx.size
        errors.append(relative_error(analytic[i].reshape(-1)[idx], numeric))
    return GradCheckReport(max(errors) if errors else 0.0, tol, errors, checked)


def module_grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence,
    params: Sequence[Tensor],
    tol: float = 1e-3,
    h: float = 1e-5,
    max_elements: Optional[int] = 8,
    seed: int = 0,
) -> GradCheckReport:
    """Like :func:`grad_check` but also differentiates existing parameter tensors.

    ``params`` are perturbed in place (and restored), so ``fn`` can close
    over a module whose parameters are among them.
    """
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    try:
        out = fn(*leaves)
        backward(out, leaves + list(params))
        analytic = [leaf.grad for leaf in leaves] + [p.grad.copy() for p in params]

        def evaluate() -> float:
            return float(fn(*[Tensor(a) for a in arrays]).data.sum())

        rng = np.random.default_rng(seed)
        errors, checked = [], 0
        targets = [a.reshape(-1) for a in arrays] + [p.data.reshape(-1) for p in params]
        for i, flat in enumerate(targets):
            idx = np.arange(flat.size)
            if max_elements is not None and flat.size > max_elements:
                idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
            numeric = np.empty(idx.size)
            for j, k in enumerate(idx):
                saved = flat[k]
                flat[k] = saved + h
                fp = evaluate()
                flat[k] = saved - h
                fm = evaluate()
                flat[k] = saved
                numeric[j] = (fp - fm) / (2.0 * h)
            checked += idx.size
            errors.append(relative_error(analytic[i].reshape(-1)[idx], numeric))
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f
            p.grad = None
    return GradCheckReport(max(errors) if errors else 0.0, tol, errors, checked)
