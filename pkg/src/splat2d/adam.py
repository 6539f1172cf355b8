"""Adam optimizer over named attribute groups with resizable state.

Moment arrays track the cloud's attribute arrays through growth (new rows
start at zero) and pruning (rows removed at matching indices), so the
optimizer state always lines up with the primitives it describes.

Bias correction runs on per-row step counts: rows created mid-run are
corrected by their own age, not the optimizer's global step.  Correcting
fresh zero moments with a large global step would inflate a newcomer's
first update by ~(1 - beta1) / sqrt(1 - beta2) (over 3x the learning
rate), which reliably knocks new covariances out of the PSD region.
"""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(
        self,
        shapes: dict[str, tuple[int, ...]],
        learning_rates: dict[str, float],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if set(shapes) != set(learning_rates):
            raise ValueError("shapes and learning_rates must cover the same groups")
        rows = {shape[0] for shape in shapes.values()}
        if len(rows) != 1:
            raise ValueError("all groups must share the same row count")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.learning_rates = dict(learning_rates)
        self.t = 0
        self.ages = np.zeros(rows.pop(), dtype=np.int64)
        self.m = {name: np.zeros(shape) for name, shape in shapes.items()}
        self.v = {name: np.zeros(shape) for name, shape in shapes.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One update, applied to the parameter arrays in place."""
        self.t += 1
        self.ages += 1
        bc1 = 1.0 - self.beta1**self.ages
        bc2 = 1.0 - self.beta2**self.ages
        for name, grad in grads.items():
            m = self.m[name]
            v = self.v[name]
            if m.shape != grad.shape:
                raise ValueError(
                    f"group {name!r}: moment shape {m.shape} does not match gradient {grad.shape}"
                )
            correct1 = bc1.reshape((-1,) + (1,) * (m.ndim - 1))
            correct2 = bc2.reshape((-1,) + (1,) * (m.ndim - 1))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            params[name] -= self.learning_rates[name] * update

    def extend(self, count: int) -> None:
        """Append ``count`` zero-initialized rows (age zero) to every group."""
        for name in self.m:
            pad = np.zeros((count,) + self.m[name].shape[1:])
            self.m[name] = np.concatenate([self.m[name], pad])
            self.v[name] = np.concatenate([self.v[name], pad])
        self.ages = np.concatenate([self.ages, np.zeros(count, dtype=np.int64)])

    def compact(self, mask: np.ndarray) -> None:
        """Keep only the rows where ``mask`` is True, preserving order."""
        mask = np.asarray(mask, dtype=bool)
        for name in self.m:
            self.m[name] = self.m[name][mask]
            self.v[name] = self.v[name][mask]
        self.ages = self.ages[mask]

    def scale_learning_rates(self, factor: float) -> None:
        for name in self.learning_rates:
            self.learning_rates[name] *= factor

    def lengths_match(self, n: int) -> bool:
        return self.ages.shape[0] == n and all(
            arr.shape[0] == n for arr in self.m.values()
        ) and all(arr.shape[0] == n for arr in self.v.values())
