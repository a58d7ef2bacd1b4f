"""
Superior-colliculus fusion (SCF) layer.

Two or more upstream unimodal areas and one downstream multimodal area, each an
N x M grid of rate neurons. Every area evolves with the discretised leaky update

    tau * z[n+1] = (tau - 1) * z[n] + phi(p * (u[n] - theta))

where ``phi`` is the logistic function and the composite input ``u`` is

    unimodal s:   u_s = R_s . I_s  +  L_s (*) z_s  +  F_s * z_m
    multimodal:   u_m = sum_s k_s * z_s  +  L_m (*) z_m

``(*)`` is a 2-D circular convolution with a difference-of-Gaussians
("Mexican hat") kernel. All areas are updated synchronously from the step-n
activities. The fused embedding is the multimodal activity after ``steps``
updates, flattened row-major.

Every array-valued function accepts an optional leading batch axis.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, InputError

GROUPS = ("rf", "feedback", "gain", "dynamics", "lateral")
LATERAL_FIELDS = ("l_ex", "l_in", "sigma_ex", "sigma_in")
DYNAMIC_FIELDS = ("tau", "theta", "slope")


@dataclass(frozen=True)
class AreaParams:
    """Scalar parameters of one neural area."""

    tau: float = 3.0
    theta: float = 0.5
    slope: float = 10.0
    l_ex: float = 2.0
    l_in: float = 1.8
    sigma_ex: float = 1.0
    sigma_in: float = 4.0

    def __post_init__(self):
        if not self.tau >= 1.0:
            raise ConfigurationError(f"tau must be >= 1, got {self.tau}")
        if not (self.sigma_ex > 0 and self.sigma_in > 0):
            raise ConfigurationError(
                f"lateral spreads must be positive, got sigma_ex={self.sigma_ex}, "
                f"sigma_in={self.sigma_in}"
            )


@dataclass
class UnimodalArea:
    """An upstream area: its own dynamics, a receptive-field matrix of shape
    (N*M, D), the feedback strength F from the multimodal area and the gain k
    of its projection onto the multimodal area."""

    params: AreaParams
    rf: np.ndarray
    feedback: float = 1.0
    gain: float = 10.0
    name: str = ""

    @property
    def dim(self) -> int:
        return self.rf.shape[1]


@dataclass
class ScfModel:
    shape: tuple[int, int]
    unimodal: list[UnimodalArea]
    multimodal: AreaParams = field(default_factory=AreaParams)
    steps: int = 15
    trainable: frozenset = frozenset({"rf"})

    def __post_init__(self):
        self.shape = (int(self.shape[0]), int(self.shape[1]))
        n_cells = self.shape[0] * self.shape[1]
        if min(self.shape) < 1:
            raise ConfigurationError(f"grid shape must be positive, got {self.shape}")
        if not self.unimodal:
            raise ConfigurationError("an SCF model needs at least one unimodal area")
        if self.steps < 0:
            raise ConfigurationError(f"steps must be >= 0, got {self.steps}")
        unknown = set(self.trainable) - set(GROUPS)
        if unknown:
            raise ConfigurationError(f"unknown trainable groups: {sorted(unknown)}")
        self.trainable = frozenset(self.trainable)
        names = set()
        for idx, area in enumerate(self.unimodal):
            if area.rf.ndim != 2 or area.rf.shape[0] != n_cells:
                raise ConfigurationError(
                    f"receptive field of area {idx} has shape {area.rf.shape}, "
                    f"expected ({n_cells}, D)"
                )
            if not area.name:
                area.name = default_area_names(len(self.unimodal))[idx]
            if area.name in names or area.name == "m":
                raise ConfigurationError(f"duplicate or reserved area name {area.name!r}")
            names.add(area.name)

    @classmethod
    def create(
        cls,
        dims: Sequence[int],
        shape: tuple[int, int] = (17, 17),
        *,
        params: AreaParams | Sequence[AreaParams] | None = None,
        multimodal: AreaParams | None = None,
        feedback: float | Sequence[float] = 1.0,
        gain: float | Sequence[float] = 10.0,
        steps: int = 15,
        trainable=("rf",),
        rf_scale: float = 0.05,
        seed: int | np.random.Generator = 0,
        names: Sequence[str] | None = None,
    ) -> "ScfModel":
        """Build a model with receptive fields drawn uniformly from
        [-rf_scale, rf_scale]."""
        rng = np.random.default_rng(seed)
        count = len(dims)
        names = list(names) if names else default_area_names(count)
        params = _per_area(params if params is not None else AreaParams(), count)
        feedback = _per_area(feedback, count)
        gain = _per_area(gain, count)
        n_cells = shape[0] * shape[1]
        areas = [
            UnimodalArea(
                params=params[i],
                rf=rng.uniform(-rf_scale, rf_scale, size=(n_cells, int(dims[i]))),
                feedback=float(feedback[i]),
                gain=float(gain[i]),
                name=names[i],
            )
            for i in range(count)
        ]
        return cls(
            shape=shape,
            unimodal=areas,
            multimodal=multimodal if multimodal is not None else AreaParams(),
            steps=steps,
            trainable=frozenset(trainable),
        )

    @property
    def n_cells(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(area.dim for area in self.unimodal)

    @property
    def area_params(self) -> list[AreaParams]:
        """Parameters of every area, unimodal first, multimodal last."""
        return [area.params for area in self.unimodal] + [self.multimodal]

    @property
    def area_names(self) -> list[str]:
        return [area.name for area in self.unimodal] + ["m"]

    def kernels(self) -> list[np.ndarray]:
        return [lateral_kernel(self.shape, p) for p in self.area_params]

    # -- flat parameter view used by the optimiser and checkpoints ----------

    def get_params(self, groups: Sequence[str] | None = None) -> dict[str, np.ndarray]:
        """Named copies of the parameters in ``groups`` (default: trainable)."""
        groups = self.trainable if groups is None else set(groups)
        out: dict[str, np.ndarray] = {}
        for area in self.unimodal:
            if "rf" in groups:
                out[f"rf.{area.name}"] = area.rf.copy()
            if "feedback" in groups:
                out[f"feedback.{area.name}"] = np.array(area.feedback)
            if "gain" in groups:
                out[f"gain.{area.name}"] = np.array(area.gain)
        for name, p in zip(self.area_names, self.area_params):
            if "dynamics" in groups:
                for f in DYNAMIC_FIELDS:
                    out[f"{f}.{name}"] = np.array(getattr(p, f))
            if "lateral" in groups:
                for f in LATERAL_FIELDS:
                    out[f"{f}.{name}"] = np.array(getattr(p, f))
        return out

    def with_params(self, values: dict[str, np.ndarray]) -> "ScfModel":
        """Return a copy with the named parameters replaced."""
        areas = []
        for area in self.unimodal:
            n = area.name
            areas.append(
                UnimodalArea(
                    params=_replace_area(area.params, n, values),
                    rf=np.array(values[f"rf.{n}"], dtype=float) if f"rf.{n}" in values else area.rf,
                    feedback=float(values.get(f"feedback.{n}", area.feedback)),
                    gain=float(values.get(f"gain.{n}", area.gain)),
                    name=n,
                )
            )
        return dataclasses.replace(
            self, unimodal=areas, multimodal=_replace_area(self.multimodal, "m", values)
        )


def default_area_names(count: int) -> list[str]:
    if count == 2:
        return ["a", "v"]
    return [f"u{i}" for i in range(count)]


def _per_area(value, count):
    if isinstance(value, (AreaParams, int, float)):
        return [value] * count
    value = list(value)
    if len(value) != count:
        raise ConfigurationError(f"expected {count} per-area values, got {len(value)}")
    return value


def _replace_area(params: AreaParams, name: str, values) -> AreaParams:
    changes = {}
    for f in DYNAMIC_FIELDS + LATERAL_FIELDS:
        key = f"{f}.{name}"
        if key in values:
            changes[f] = float(values[key])
    return dataclasses.replace(params, **changes) if changes else params


# ---------------------------------------------------------------------------
# Lateral connectivity


def circular_distance(i, h, n: int):
    """Shortest distance between indices ``i`` and ``h`` on a ring of length ``n``."""
    d = np.abs(np.asarray(i) - np.asarray(h))
    d = np.minimum(d, n - d)
    return int(d) if d.ndim == 0 else d


def lateral_weight(d_x, d_y, params: AreaParams):
    """Difference-of-Gaussians synaptic strength at offset (d_x, d_y)."""
    r2 = np.square(d_x) + np.square(d_y)
    return params.l_ex * np.exp(-r2 / (2.0 * params.sigma_ex**2)) - params.l_in * np.exp(
        -r2 / (2.0 * params.sigma_in**2)
    )


def _offset_sq(shape: tuple[int, int]) -> np.ndarray:
    n, m = shape
    dx = circular_distance(np.arange(n), 0, n)
    dy = circular_distance(np.arange(m), 0, m)
    return np.add.outer(dx**2, dy**2).astype(float)


def lateral_kernel(shape: tuple[int, int], params: AreaParams) -> np.ndarray:
    """Kernel grid indexed by offset: ``K[a, b]`` is the weight from a neuron
    ``a`` rows and ``b`` columns away (circularly)."""
    n, m = shape
    dx = circular_distance(np.arange(n), 0, n)
    dy = circular_distance(np.arange(m), 0, m)
    return lateral_weight(dx[:, None], dy[None, :], params)


def lateral_kernel_param_grads(shape, params: AreaParams) -> dict[str, np.ndarray]:
    """Partial derivatives of the kernel grid w.r.t. each lateral parameter."""
    r2 = _offset_sq(shape)
    e_ex = np.exp(-r2 / (2.0 * params.sigma_ex**2))
    e_in = np.exp(-r2 / (2.0 * params.sigma_in**2))
    return {
        "l_ex": e_ex,
        "l_in": -e_in,
        "sigma_ex": params.l_ex * e_ex * r2 / params.sigma_ex**3,
        "sigma_in": -params.l_in * e_in * r2 / params.sigma_in**3,
    }


def connectivity_matrix(kernel: np.ndarray) -> np.ndarray:
    """Dense (N*M, N*M) matrix of L_{ij,hk} built from a kernel grid."""
    n, m = kernel.shape
    i = np.arange(n)
    j = np.arange(m)
    di = (i[:, None] - i[None, :]) % n  # (i, h)
    dj = (j[:, None] - j[None, :]) % m  # (j, k)
    full = kernel[di[:, None, :, None], dj[None, :, None, :]]  # (i, j, h, k)
    return full.reshape(n * m, n * m)


LATERAL_MODES = ("naive", "fast", "matrix", "auto")
# below this many neurons the dense connectivity product beats the FFT
MATRIX_LIMIT = 1024


def lateral_input(activity: np.ndarray, kernel: np.ndarray, mode: str = "fast") -> np.ndarray:
    """Weighted sum of neighbouring activities, ``l_ij = sum_hk L_{ij,hk} z_hk``.

    ``naive`` sums over every source neuron per target neuron; ``fast`` does
    the same circular convolution in the frequency domain; ``matrix``
    multiplies by the dense connectivity matrix.
    """
    activity = np.asarray(activity, dtype=float)
    if activity.shape[-2:] != kernel.shape:
        raise ConfigurationError(
            f"activity grid {activity.shape[-2:]} does not match kernel {kernel.shape}"
        )
    return LateralOperator(kernel, mode).apply(activity)


def _naive_lateral(activity: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    n, m = kernel.shape
    out = np.empty(activity.shape)
    h = np.arange(n)[:, None]
    k = np.arange(m)[None, :]
    for i in range(n):
        for j in range(m):
            weights = kernel[(i - h) % n, (j - k) % m]
            out[..., i, j] = np.sum(weights * activity, axis=(-2, -1))
    return out


class LateralOperator:
    """Circular convolution with a fixed kernel, plus its adjoint."""

    def __init__(self, kernel: np.ndarray, mode: str = "auto"):
        if mode not in LATERAL_MODES:
            raise ConfigurationError(f"unknown lateral mode {mode!r}")
        if mode == "auto":
            mode = "matrix" if kernel.size <= MATRIX_LIMIT else "fast"
        self.kernel = kernel
        self.shape = kernel.shape
        self.mode = mode
        if mode == "fast":
            self._spec = np.fft.rfft2(kernel)
        elif mode == "matrix":
            self._mat = connectivity_matrix(kernel)

    def _flat(self, x):
        return x.reshape(x.shape[:-2] + (self.kernel.size,))

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self.mode == "fast":
            return np.fft.irfft2(np.fft.rfft2(z) * self._spec, s=self.shape)
        if self.mode == "matrix":
            return (self._flat(z) @ self._mat.T).reshape(z.shape)
        return _naive_lateral(z, self.kernel)

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        if self.mode == "fast":
            return np.fft.irfft2(np.fft.rfft2(g) * np.conj(self._spec), s=self.shape)
        if self.mode == "matrix":
            return (self._flat(g) @ self._mat).reshape(g.shape)
        return _naive_lateral(g, _point_reflect(self.kernel))


def _point_reflect(kernel: np.ndarray) -> np.ndarray:
    return np.roll(kernel[::-1, ::-1], (1, 1), axis=(0, 1))


# ---------------------------------------------------------------------------
# Input terms and dynamics


def activation(u, params: AreaParams):
    """Logistic response centred at ``theta`` with slope ``slope``; in (0, 1)."""
    return expit(params.slope * (np.asarray(u, dtype=float) - params.theta))


def external_stimulus(rf: np.ndarray, stimulus, shape: tuple[int, int]) -> np.ndarray:
    """Project a stimulus through the receptive fields: one dot product per neuron."""
    stimulus = np.asarray(stimulus, dtype=float)
    if stimulus.shape[-1] != rf.shape[1]:
        raise InputError(
            f"stimulus has dimension {stimulus.shape[-1]}, receptive field expects {rf.shape[1]}"
        )
    return (stimulus @ rf.T).reshape(stimulus.shape[:-1] + tuple(shape))


def feedback_input(feedback_strength: float, multimodal_activity: np.ndarray) -> np.ndarray:
    return feedback_strength * np.asarray(multimodal_activity, dtype=float)


def initial_state(model: ScfModel, batch: tuple[int, ...] = ()) -> list[np.ndarray]:
    """Resting activity (all zeros) for every area, multimodal last."""
    return [np.zeros(batch + model.shape) for _ in range(len(model.unimodal) + 1)]


def composite_input(
    area: int | str,
    model: ScfModel,
    state: Sequence[np.ndarray],
    projections: Sequence[np.ndarray],
    *,
    kernels: Sequence[np.ndarray] | None = None,
    mode: str = "fast",
) -> np.ndarray:
    """Composite input of one area given the current ``state``.

    ``projections`` are the external stimulus grids ``R_s . I_s`` of the
    unimodal areas; ``area`` is an index into ``model.area_names`` or a name.
    """
    idx = model.area_names.index(area) if isinstance(area, str) else int(area)
    kernels = model.kernels() if kernels is None else kernels
    lateral = lateral_input(state[idx], kernels[idx], mode)
    mm = len(model.unimodal)
    if idx == mm:
        total = lateral
        for s, unit in enumerate(model.unimodal):
            total = total + unit.gain * state[s]
        return total
    unit = model.unimodal[idx]
    return projections[idx] + lateral + feedback_input(unit.feedback, state[mm])


def step(
    model: ScfModel,
    state: Sequence[np.ndarray],
    projections: Sequence[np.ndarray],
    *,
    kernels: Sequence[np.ndarray] | None = None,
    mode: str = "fast",
) -> list[np.ndarray]:
    """Advance every area by one synchronous update."""
    kernels = model.kernels() if kernels is None else kernels
    inputs = [
        composite_input(q, model, state, projections, kernels=kernels, mode=mode)
        for q in range(len(state))
    ]
    return [
        _leak(z, activation(u, p), p.tau)
        for z, u, p in zip(state, inputs, model.area_params)
    ]


def _leak(z, a, tau):
    return ((tau - 1.0) * z + a) / tau


def project_stimuli(model: ScfModel, stimuli: Sequence) -> list[np.ndarray]:
    if len(stimuli) != len(model.unimodal):
        raise InputError(f"expected {len(model.unimodal)} stimuli, got {len(stimuli)}")
    return [
        external_stimulus(area.rf, stim, model.shape)
        for area, stim in zip(model.unimodal, stimuli)
    ]


@dataclass
class ForwardResult:
    embedding: np.ndarray
    state: list[np.ndarray]
    history: list[list[np.ndarray]] | None = None
    activations: list[list[np.ndarray]] | None = None
    inputs: list[list[np.ndarray]] | None = None


def run_forward(
    model: ScfModel,
    stimuli: Sequence,
    *,
    steps: int | None = None,
    mode: str = "auto",
    record: bool = False,
) -> ForwardResult:
    """Clamp ``stimuli`` (one array per unimodal area, zeros for an absent
    modality) and iterate the dynamics from rest.

    With ``record`` the per-step activities, activations and composite inputs
    are kept; :func:`backward` needs them.
    """
    steps = model.steps if steps is None else steps
    projections = project_stimuli(model, stimuli)
    batch = projections[0].shape[:-2]
    kernels = model.kernels()
    params = model.area_params
    mm = len(model.unimodal)

    ops = [LateralOperator(k, mode) for k in kernels]

    def lateral(q, z):
        return ops[q].apply(z)

    state = initial_state(model, batch)
    history = [state] if record else None
    acts = [] if record else None
    inputs = [] if record else None
    for _ in range(steps):
        u = []
        for q in range(mm):
            unit = model.unimodal[q]
            u.append(projections[q] + lateral(q, state[q]) + unit.feedback * state[mm])
        um = lateral(mm, state[mm])
        for q in range(mm):
            um = um + model.unimodal[q].gain * state[q]
        u.append(um)
        a = [activation(uq, p) for uq, p in zip(u, params)]
        state = [_leak(z, aq, p.tau) for z, aq, p in zip(state, a, params)]
        if record:
            history.append(state)
            acts.append(a)
            inputs.append(u)
    embedding = state[mm].reshape(batch + (model.n_cells,))
    return ForwardResult(embedding, state, history, acts, inputs)


def backward(
    model: ScfModel,
    stimuli: Sequence,
    result: ForwardResult,
    grad_embedding: np.ndarray,
    groups: Sequence[str] | None = None,
    mode: str = "auto",
) -> dict[str, np.ndarray]:
    """Reverse-mode derivative through every unrolled step.

    ``grad_embedding`` is dLoss/d(embedding) with the same shape as
    ``result.embedding``; gradients are summed over the batch axis. Returns
    entries for the parameter groups in ``groups`` (default: trainable),
    keyed as in :meth:`ScfModel.get_params`.
    """
    if result.history is None:
        raise ConfigurationError("backward needs a forward result recorded with record=True")
    groups = model.trainable if groups is None else set(groups)
    stimuli = [np.asarray(s, dtype=float) for s in stimuli]
    unbatched = stimuli[0].ndim == 1
    if unbatched:
        stimuli = [s[None] for s in stimuli]
        grad_embedding = np.asarray(grad_embedding)[None]
        hist = [[z[None] for z in zs] for zs in result.history]
        acts = [[a[None] for a in az] for az in result.activations]
        ins = [[u[None] for u in uz] for uz in result.inputs]
    else:
        hist, acts, ins = result.history, result.activations, result.inputs

    shape = model.shape
    params = model.area_params
    names = model.area_names
    mm = len(model.unimodal)
    n_areas = mm + 1
    batch = grad_embedding.shape[0]
    ops = [LateralOperator(k, mode) for k in model.kernels()]
    want_lateral = "lateral" in groups
    want_dyn = "dynamics" in groups

    g_z = [np.zeros((batch,) + shape) for _ in range(n_areas)]
    g_z[mm] = np.asarray(grad_embedding, dtype=float).reshape((batch,) + shape)
    g_r = [np.zeros((batch,) + shape) for _ in range(mm)]
    g_fb = np.zeros(mm)
    g_gain = np.zeros(mm)
    g_tau = np.zeros(n_areas)
    g_theta = np.zeros(n_areas)
    g_slope = np.zeros(n_areas)
    g_kspec = [0.0] * n_areas

    for n in reversed(range(len(acts))):
        z_n, a_n, u_n = hist[n], acts[n], ins[n]
        g_u = []
        for q in range(n_areas):
            p = params[q]
            a = a_n[q]
            if want_dyn:
                g_tau[q] += np.sum(g_z[q] * (z_n[q] - a)) / p.tau**2
            g_pre = g_z[q] / p.tau * a * (1.0 - a)
            if want_dyn:
                g_slope[q] += np.sum(g_pre * (u_n[q] - p.theta))
                g_theta[q] -= p.slope * np.sum(g_pre)
            g_u.append(g_pre * p.slope)

        new_g = []
        for q in range(n_areas):
            carry = g_z[q] * (params[q].tau - 1.0) / params[q].tau
            new_g.append(carry + ops[q].adjoint(g_u[q]))
            if want_lateral:
                # kernel gradient is the batch-summed cross-correlation of g_u with z
                spec = np.fft.rfft2(g_u[q]) * np.conj(np.fft.rfft2(z_n[q]))
                g_kspec[q] = g_kspec[q] + np.sum(spec, axis=0)
        for s, unit in enumerate(model.unimodal):
            new_g[s] += unit.gain * g_u[mm]
            new_g[mm] += unit.feedback * g_u[s]
            g_gain[s] += np.sum(g_u[mm] * z_n[s])
            g_fb[s] += np.sum(g_u[s] * z_n[mm])
            g_r[s] += g_u[s]
        g_z = new_g

    out: dict[str, np.ndarray] = {}
    for s, unit in enumerate(model.unimodal):
        if "rf" in groups:
            out[f"rf.{unit.name}"] = g_r[s].reshape(batch, -1).T @ stimuli[s]
        if "feedback" in groups:
            out[f"feedback.{unit.name}"] = np.array(g_fb[s])
        if "gain" in groups:
            out[f"gain.{unit.name}"] = np.array(g_gain[s])
    for q, name in enumerate(names):
        if want_dyn:
            out[f"tau.{name}"] = np.array(g_tau[q])
            out[f"theta.{name}"] = np.array(g_theta[q])
            out[f"slope.{name}"] = np.array(g_slope[q])
        if want_lateral:
            if np.isscalar(g_kspec[q]):
                g_kernel = np.zeros(shape)
            else:
                g_kernel = np.fft.irfft2(g_kspec[q], s=shape)
            for f, dk in lateral_kernel_param_grads(shape, params[q]).items():
                out[f"{f}.{name}"] = np.array(np.sum(g_kernel * dk))
    return out
