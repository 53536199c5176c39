"""Central finite-difference checking of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, backward, no_grad


class NonDeterministicError(RuntimeError):
    pass


@dataclass
class GradcheckReport:
    max_rel_error: float
    passed: bool
    checked: int
    tol: float
    worst: Optional[tuple] = None
    per_tensor: dict = field(default_factory=dict)
    refined: int = 0

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        extra = f", {self.refined} refined" if self.refined else ""
        return f"{state} max_rel_error={self.max_rel_error:.3e} (tol {self.tol:g}, {self.checked} entries{extra})"


def _value(fn, args):
    out = fn(*args)
    return float(np.asarray(out.data).reshape(-1)[0])


def _central(fn, args, flat, i, h) -> float:
    orig = flat[i]
    with no_grad():
        flat[i] = orig + h
        fp = _value(fn, args)
        flat[i] = orig - h
        fm = _value(fn, args)
    flat[i] = orig
    return (fp - fm) / (2.0 * h)


def gradcheck(
    fn: Callable[..., Tensor],
    tensors: Union[Tensor, Sequence[Tensor]],
    step: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
    samples: Optional[int] = None,
    seed: int = 0,
    names: Optional[Sequence[str]] = None,
    call_with_inputs: Optional[bool] = None,
    refine: int = 2,
) -> GradcheckReport:
    """Compare backprop gradients of scalar ``fn`` against central differences.

    ``fn`` is called as ``fn(x)`` when a single tensor is given, otherwise with
    no arguments (it is expected to close over ``tensors``). The relative error
    of an entry is ``|a - n| / max(|a|, |n|, floor)``. With ``samples`` set,
    at most that many entries per tensor are probed (chosen by ``seed``).

    Piecewise-linear primitives (ReLU, max) make the stencil wrong when a
    switch point lies within ``step`` of the probe; an entry that fails is
    re-probed with the step divided by 10, at most ``refine`` times. Entries
    within a factor 10 of ``tol`` are re-probed too, since truncation error
    of the stencil alone can reach that on strongly curved losses; the best
    attempt is kept.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    single = isinstance(tensors, Tensor)
    ts = [tensors] if single else list(tensors)
    if call_with_inputs is None:
        call_with_inputs = single
    args = tuple(ts) if call_with_inputs else ()
    names = list(names) if names is not None else [t.name or f"t{i}" for i, t in enumerate(ts)]

    for t in ts:
        t.requires_grad = True
        t.grad = None
    loss = fn(*args)
    if loss.data.size != 1:
        raise ValueError("gradcheck needs a scalar-valued function")
    base = float(loss.data.reshape(-1)[0])
    with no_grad():
        again = _value(fn, args)
    if again != base:
        raise NonDeterministicError(f"two forward passes differ: {base!r} vs {again!r}")
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in ts]

    rng = np.random.default_rng(seed)
    worst_err, worst, checked, refined, per = 0.0, None, 0, 0, {}
    for name, t, ga in zip(names, ts, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if samples is not None and flat.size > samples:
            idx = np.sort(rng.choice(flat.size, size=samples, replace=False))
        terr = 0.0
        for i in idx:
            a = ga.reshape(-1)[i]
            h, err, num = step, np.inf, 0.0
            for attempt in range(refine + 1):
                n_h = _central(fn, args, flat, i, h)
                e_h = abs(a - n_h) / max(abs(a), abs(n_h), floor)
                if e_h < err:
                    err, num = e_h, n_h
                if err <= 0.1 * tol:
                    break
                h /= 10.0
            refined += attempt > 0
            checked += 1
            terr = max(terr, err)
            if err > worst_err:
                worst_err, worst = err, (name, int(i), float(a), float(num))
        per[name] = terr
    for t in ts:
        t.grad = None
    return GradcheckReport(worst_err, worst_err <= tol, checked, tol, worst, per, refined)
