"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GROUPS, AreaParams, ScfModel
from .trainer import MlpHead, bce_loss, embed, grad, mlp_forward


@dataclass
class EntryCheck:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric))
        return abs(self.analytic - self.numeric) / scale if scale > 0 else 0.0


@dataclass
class GradCheckReport:
    entries: list[EntryCheck]
    tol: float
    min_grad: float

    @property
    def checked(self) -> list[EntryCheck]:
        return [e for e in self.entries if abs(e.analytic) > self.min_grad]

    @property
    def worst(self) -> float:
        return max((e.rel_error for e in self.checked), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol

    def table(self) -> str:
        by_group: dict[str, list[EntryCheck]] = {}
        for e in self.checked:
            by_group.setdefault(e.name, []).append(e)
        lines = ["parameter        entries  max_rel_error"]
        for name, items in by_group.items():
            lines.append(f"{name:16s} {len(items):7d}  {max(i.rel_error for i in items):.3e}")
        lines.append(f"worst {self.worst:.3e} (tol {self.tol:g}) -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def batch_loss(fuser, head, stimuli, labels) -> float:
    emb, _ = embed(fuser, stimuli)
    return float(np.mean(bce_loss(mlp_forward(head, emb), labels)))


def check_gradients(fuser, head: MlpHead, stimuli, labels, *, h: float = 1e-5,
                    tol: float = 1e-4, min_grad: float = 1e-8) -> GradCheckReport:
    """Compare every entry of every trainable parameter against
    (L(theta + h) - L(theta - h)) / 2h, with dropout off."""
    _, analytic, _ = grad(fuser, head, stimuli, labels)
    params = {**fuser.get_params(), **head.get_params()}
    entries = []
    for name, value in params.items():
        flat = value.reshape(-1)
        for i in range(flat.size):
            losses = []
            for sign in (1.0, -1.0):
                trial = dict(params)
                arr = value.copy()
                arr.reshape(-1)[i] += sign * h
                trial[name] = arr
                losses.append(batch_loss(fuser.with_params(trial), head.with_params(trial), stimuli, labels))
            numeric = (losses[0] - losses[1]) / (2 * h)
            entries.append(EntryCheck(name, i, float(analytic[name].reshape(-1)[i]), numeric))
    return GradCheckReport(entries, tol, min_grad)


def small_problem(grid=(5, 5), steps: int = 3, dim: int = 4, hidden: int = 8,
                  batch: int = 6, seed: int = 0):
    """A model with every parameter group trainable plus a random batch.

    Gains and receptive-field scale are chosen so no area saturates, which
    keeps all gradients well above finite-difference round-off.
    """
    rng = np.random.default_rng(seed)
    area = AreaParams(tau=2.0, theta=0.2, slope=4.0, l_ex=0.6, l_in=0.4, sigma_ex=1.0, sigma_in=2.0)
    model = ScfModel.create(
        [dim, dim], grid, params=area, multimodal=area, feedback=0.5, gain=1.0,
        steps=steps, trainable=GROUPS, rf_scale=0.5, seed=rng,
    )
    head = MlpHead.create(model.n_cells, (hidden,), seed=rng)
    stimuli = [rng.standard_normal((batch, dim)) for _ in range(2)]
    labels = rng.integers(0, 2, size=batch).astype(float)
    labels[:2] = (0.0, 1.0)
    return model, head, stimuli, labels
