"""Bayesian search over the training hyperparameter space, plus the
training-control policies (early stop, reduce-on-plateau, cosine decay)
as pure decision functions.

The surrogate is a Gaussian process with a squared-exponential kernel and
per-dimension length scales; categorical dimensions enter through one-hot
coordinates with unit length scales. Suggestions maximize expected
improvement over the incumbent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize, special
from scipy.stats import qmc

from .errors import DuplicateTrialId, StepOutOfRange

INITIAL_DESIGN_SIZE = 5
CANDIDATE_POOL = 256
REFIT_EVERY = 5
JITTER = 1e-10


# ---------------------------------------------------------------------------
# Search space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousDim:
    name: str
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"{self.name}: low must be below high")
        if self.log and self.low <= 0:
            raise ValueError(f"{self.name}: log dimension needs positive bounds")

    def to_unit(self, value: float) -> float:
        if self.log:
            return (math.log(value) - math.log(self.low)) / (
                math.log(self.high) - math.log(self.low)
            )
        return (value - self.low) / (self.high - self.low)

    def from_unit(self, u: float) -> float:
        u = min(max(u, 0.0), 1.0)
        if self.log:
            value = math.exp(
                math.log(self.low) + u * (math.log(self.high) - math.log(self.low))
            )
        else:
            value = self.low + u * (self.high - self.low)
        # exp/log round trips can land an ulp outside the interval
        return min(max(value, self.low), self.high)

    def contains(self, value) -> bool:
        return isinstance(value, (int, float)) and self.low <= value <= self.high


@dataclass(frozen=True)
class CategoricalDim:
    name: str
    choices: tuple

    def __post_init__(self):
        if len(self.choices) < 2:
            raise ValueError(f"{self.name}: need at least two choices")

    def contains(self, value) -> bool:
        return value in self.choices


Dimension = Union[ContinuousDim, CategoricalDim]


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    @property
    def continuous(self) -> tuple[ContinuousDim, ...]:
        return tuple(d for d in self.dimensions if isinstance(d, ContinuousDim))

    @property
    def categorical(self) -> tuple[CategoricalDim, ...]:
        return tuple(d for d in self.dimensions if isinstance(d, CategoricalDim))

    def validate(self, values: dict) -> None:
        for dim in self.dimensions:
            if dim.name not in values:
                raise ValueError(f"missing value for dimension {dim.name}")
            if not dim.contains(values[dim.name]):
                raise ValueError(f"{dim.name}={values[dim.name]!r} outside the space")
        extra = set(values) - {d.name for d in self.dimensions}
        if extra:
            raise ValueError(f"unknown dimensions: {sorted(extra)}")

    def embedded_size(self) -> int:
        return len(self.continuous) + sum(len(d.choices) for d in self.categorical)

    def embed(self, values: dict) -> np.ndarray:
        coords = [d.to_unit(values[d.name]) for d in self.continuous]
        for d in self.categorical:
            onehot = [1.0 if values[d.name] == c else 0.0 for c in d.choices]
            coords.extend(onehot)
        return np.asarray(coords, dtype=np.float64)


def default_space() -> SearchSpace:
    """The model-tuning space: dropout, L2 strength, learning rate, dense
    width, and optimizer choice."""
    return SearchSpace(
        dimensions=(
            ContinuousDim("dropout", 0.3, 0.5),
            ContinuousDim("l2", 1e-4, 1e-2, log=True),
            ContinuousDim("learning_rate", 1e-5, 1e-3, log=True),
            CategoricalDim("dense_units", (512, 1024)),
            CategoricalDim("optimizer", ("adam", "sgd")),
        )
    )


def load_space(path) -> SearchSpace:
    """Read a search space from a TOML file of [[dimension]] entries."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    dims: list[Dimension] = []
    for entry in doc.get("dimension", []):
        kind = entry.get("type")
        if kind == "continuous":
            dims.append(
                ContinuousDim(
                    entry["name"], float(entry["low"]), float(entry["high"]),
                    log=bool(entry.get("log", False)),
                )
            )
        elif kind == "categorical":
            dims.append(CategoricalDim(entry["name"], tuple(entry["choices"])))
        else:
            raise ValueError(f"unknown dimension type {kind!r}")
    if not dims:
        raise ValueError(f"{path} defines no dimensions")
    return SearchSpace(dimensions=tuple(dims))


@dataclass(frozen=True)
class TrialConfig:
    trial_id: str
    seed: int
    values: dict

    def as_dict(self) -> dict:
        return {"trial_id": self.trial_id, "seed": self.seed, "values": dict(self.values)}


# ---------------------------------------------------------------------------
# Gaussian-process surrogate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelParams:
    length_scales: np.ndarray
    signal_var: float = 1.0
    noise_var: float = 1e-4


def _sq_dists(a: np.ndarray, b: np.ndarray, ls: np.ndarray) -> np.ndarray:
    d = a[:, None, :] / ls - b[None, :, :] / ls
    return np.sum(d * d, axis=2)


def _kernel(a: np.ndarray, b: np.ndarray, params: KernelParams) -> np.ndarray:
    return params.signal_var * np.exp(-0.5 * _sq_dists(a, b, params.length_scales))


class _Gp:
    """Exact GP on standardized objectives."""

    def __init__(self, x: np.ndarray, y: np.ndarray, params: KernelParams):
        self.x = x
        self.params = params
        self.y_mean = float(np.mean(y))
        y_std = float(np.std(y))
        self.y_std = y_std if y_std > 0.0 else 1.0
        self.y = (y - self.y_mean) / self.y_std
        k = _kernel(x, x, params)
        k[np.diag_indices_from(k)] += params.noise_var + JITTER
        self.chol = np.linalg.cholesky(k)
        self.alpha = np.linalg.solve(
            self.chol.T, np.linalg.solve(self.chol, self.y)
        )

    def posterior(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Standardized posterior mean and variance at query rows."""
        ks = _kernel(self.x, q, self.params)
        mu = ks.T @ self.alpha
        v = np.linalg.solve(self.chol, ks)
        var = np.maximum(self.params.signal_var - np.sum(v * v, axis=0), 1e-12)
        return mu, var

    def posterior_unstandardized(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu, var = self.posterior(q)
        return mu * self.y_std + self.y_mean, var * self.y_std ** 2


def _log_marginal_likelihood(x: np.ndarray, y: np.ndarray, params: KernelParams) -> float:
    n = x.shape[0]
    y_std = float(np.std(y))
    z = (y - np.mean(y)) / (y_std if y_std > 0 else 1.0)
    k = _kernel(x, x, params)
    k[np.diag_indices_from(k)] += params.noise_var + JITTER
    try:
        chol = np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, z))
    return float(
        -0.5 * z @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * math.log(2 * math.pi)
    )


def _refit_kernel(x: np.ndarray, y: np.ndarray, current: KernelParams) -> KernelParams:
    d = x.shape[1]

    def unpack(theta):
        return KernelParams(
            length_scales=np.exp(theta[:d]),
            signal_var=math.exp(theta[d]),
            noise_var=math.exp(theta[d + 1]),
        )

    def objective(theta):
        return -_log_marginal_likelihood(x, y, unpack(theta))

    x0 = np.concatenate(
        [np.log(current.length_scales), [math.log(current.signal_var), math.log(current.noise_var)]]
    )
    bounds = [(math.log(0.05), math.log(10.0))] * d + [
        (math.log(0.05), math.log(5.0)),
        (math.log(1e-8), math.log(1.0)),
    ]
    result = optimize.minimize(objective, x0, method="L-BFGS-B", bounds=bounds)
    candidate = unpack(result.x)
    if _log_marginal_likelihood(x, y, candidate) >= _log_marginal_likelihood(x, y, current):
        return candidate
    return current


# ---------------------------------------------------------------------------
# Surrogate state and the suggest/observe transition functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurrogateState:
    space: SearchSpace
    configs: tuple[TrialConfig, ...] = ()
    objectives: tuple[float, ...] = ()
    failed_ids: tuple[str, ...] = ()
    kernel: Optional[KernelParams] = None

    @property
    def n_recorded(self) -> int:
        return len(self.configs) + len(self.failed_ids)

    def incumbent(self) -> Optional[tuple[TrialConfig, float]]:
        if not self.objectives:
            return None
        i = int(np.argmin(self.objectives))
        return self.configs[i], self.objectives[i]

    def _kernel_or_default(self) -> KernelParams:
        if self.kernel is not None:
            return self.kernel
        return KernelParams(length_scales=np.full(self.space.embedded_size(), 0.5))


def new_state(space: Optional[SearchSpace] = None) -> SurrogateState:
    return SurrogateState(space=space or default_space())


def _sampler_matrix(seed_key: Sequence[int], n_dims: int, count: int) -> np.ndarray:
    seed = int(np.random.default_rng(list(seed_key)).integers(2**31 - 1))
    sampler = qmc.Sobol(d=n_dims, scramble=True, seed=seed)
    # draw a power of two to keep the sequence balanced (and warning-free)
    pow2 = 1 << max(count - 1, 1).bit_length()
    return sampler.random(pow2)[:count]

def _values_from_unit_row(space: SearchSpace, row: np.ndarray) -> dict:
    values: dict = {}
    i = 0
    for dim in space.continuous:
        values[dim.name] = dim.from_unit(float(row[i]))
        i += 1
    for dim in space.categorical:
        idx = min(int(row[i] * len(dim.choices)), len(dim.choices) - 1)
        values[dim.name] = dim.choices[idx]
        i += 1
    return values


def _expected_improvement(mu: np.ndarray, var: np.ndarray, best: float) -> np.ndarray:
    sigma = np.sqrt(var)
    gap = best - mu
    z = gap / sigma
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    ei = gap * special.ndtr(z) + sigma * pdf
    return np.where(sigma > 1e-9, ei, np.maximum(gap, 0.0))


def _trial_seed(seed: int, index: int) -> int:
    return int(np.random.default_rng([seed, index]).integers(2**31 - 1))


def suggest(state: SurrogateState, space: Optional[SearchSpace] = None, seed: int = 0) -> TrialConfig:
    """Next configuration to try, deterministic in (seed, state).

    The first few suggestions are a space-filling quasi-random design;
    afterwards candidates are scored by expected improvement under the GP
    posterior, with local refinement of the continuous coordinates.
    """
    space = space or state.space
    index = state.n_recorded
    trial_id = f"t{index + 1:04d}"
    n_sampler_dims = len(space.continuous) + len(space.categorical)

    if len(state.configs) < INITIAL_DESIGN_SIZE:
        rows = _sampler_matrix([seed, 0], n_sampler_dims, INITIAL_DESIGN_SIZE + len(state.failed_ids) + 1)
        values = _values_from_unit_row(space, rows[index])
        space.validate(values)
        return TrialConfig(trial_id, _trial_seed(seed, index), values)

    x = np.vstack([space.embed(c.values) for c in state.configs])
    y = np.asarray(state.objectives)
    gp = _Gp(x, y, state._kernel_or_default())
    best = float(np.min(gp.y))

    rows = _sampler_matrix([seed, index], n_sampler_dims, CANDIDATE_POOL)
    candidates = [_values_from_unit_row(space, r) for r in rows]
    embedded = np.vstack([space.embed(v) for v in candidates])
    mu, var = gp.posterior(embedded)
    ei = _expected_improvement(mu, var, best)

    n_cont = len(space.continuous)
    top = np.argsort(-ei)[:3]
    best_values = candidates[int(top[0])]
    best_ei = float(ei[int(top[0])])
    for idx in top:
        values = dict(candidates[int(idx)])
        if n_cont == 0:
            continue
        cat_tail = space.embed(values)[n_cont:]

        def neg_ei(u):
            q = np.concatenate([u, cat_tail])[None, :]
            m, v = gp.posterior(q)
            return -float(_expected_improvement(m, v, best)[0])

        u0 = np.array([space.continuous[i].to_unit(values[space.continuous[i].name]) for i in range(n_cont)])
        result = optimize.minimize(
            neg_ei, u0, method="L-BFGS-B", bounds=[(0.0, 1.0)] * n_cont,
            options={"maxiter": 30},
        )
        if -result.fun > best_ei:
            best_ei = -float(result.fun)
            for i, dim in enumerate(space.continuous):
                values[dim.name] = dim.from_unit(float(result.x[i]))
            best_values = values

    space.validate(best_values)
    return TrialConfig(trial_id, _trial_seed(seed, index), best_values)


def observe(state: SurrogateState, config: TrialConfig, objective: Optional[float]) -> SurrogateState:
    """Record a trial result, returning the extended state.

    A non-finite or missing objective marks the trial failed: it is
    excluded from the surrogate but still counts toward the sequence.
    Kernel hyperparameters refit by marginal-likelihood ascent every
    few observations.
    """
    seen = {c.trial_id for c in state.configs} | set(state.failed_ids)
    if config.trial_id in seen:
        raise DuplicateTrialId(config.trial_id)

    if objective is None or not math.isfinite(objective):
        return replace(state, failed_ids=state.failed_ids + (config.trial_id,))

    configs = state.configs + (config,)
    objectives = state.objectives + (float(objective),)
    kernel = state.kernel
    if len(configs) >= INITIAL_DESIGN_SIZE and len(configs) % REFIT_EVERY == 0:
        x = np.vstack([state.space.embed(c.values) for c in configs])
        y = np.asarray(objectives)
        y_std = float(np.std(y))
        z = (y - np.mean(y)) / (y_std if y_std > 0 else 1.0)
        base = state._kernel_or_default()
        kernel = _refit_kernel(x, z, base)
    return replace(state, configs=configs, objectives=objectives, kernel=kernel)


# ---------------------------------------------------------------------------
# Training-control policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EarlyStopPolicy:
    patience: int = 5
    min_delta: float = 0.0
    mode: str = "absolute"  # or "relative"

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.min_delta < 0:
            raise ValueError("min_delta must be nonnegative")


@dataclass(frozen=True)
class PlateauPolicy:
    patience: int = 2
    factor: float = 0.5
    min_lr: float = 0.0
    min_delta: float = 0.0
    mode: str = "absolute"

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie strictly between 0 and 1")
        if self.min_lr < 0:
            raise ValueError("min_lr must be nonnegative")


@dataclass(frozen=True)
class CosineDecayPolicy:
    initial_lr: float
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")


SchedulePolicy = Union[EarlyStopPolicy, PlateauPolicy, CosineDecayPolicy]


def _improved(loss: float, best: float, min_delta: float, mode: str) -> bool:
    if math.isinf(best):
        return True
    if mode == "relative":
        return best - loss > min_delta * abs(best)
    return best - loss > min_delta


def early_stop_decision(
    history: Sequence[float], patience: int = 5, min_delta: float = 0.0, mode: str = "absolute"
) -> bool:
    """True once `patience` consecutive epochs pass without improving the
    best validation loss by more than min_delta."""
    best = math.inf
    wait = 0
    for loss in history:
        if _improved(loss, best, min_delta, mode):
            best = loss
            wait = 0
        else:
            wait += 1
    return wait >= patience


def plateau_lr(
    history: Sequence[float],
    current_lr: float,
    patience: int = 2,
    factor: float = 0.5,
    min_lr: float = 0.0,
    min_delta: float = 0.0,
    mode: str = "absolute",
) -> float:
    """Learning rate for the next epoch under reduce-on-plateau.

    Replays the loss history: the stagnation counter resets on improvement
    and on each reduction. The rate shrinks only when the stagnation run
    ends exactly at the last epoch.
    """
    if not 0.0 < factor < 1.0:
        raise ValueError("factor must lie strictly between 0 and 1")
    best = math.inf
    wait = 0
    fired_at = -1
    for i, loss in enumerate(history):
        if _improved(loss, best, min_delta, mode):
            best = loss
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                fired_at = i
                wait = 0
    if fired_at == len(history) - 1 and fired_at >= 0:
        return max(current_lr * factor, min_lr)
    return current_lr


def cosine_lr(step: int, total_steps: int, initial_lr: float) -> float:
    """Half-cosine decay from initial_lr at step 0 to 0 at total_steps."""
    if total_steps < 1:
        raise ValueError("total_steps must be at least 1")
    if not 0 <= step <= total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps}]")
    return initial_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


# ---------------------------------------------------------------------------
# Named training presets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingPreset:
    """Bundle of training-loop settings outside the searched space."""

    name: str
    bayesian: bool
    batch_size: int
    plateau_patience: int
    cosine_decay: bool
    horizontal_flip: bool
    fixed_values: Optional[dict] = None


def standard_preset() -> TrainingPreset:
    return TrainingPreset(
        name="standard",
        bayesian=True,
        batch_size=32,
        plateau_patience=2,
        cosine_decay=False,
        horizontal_flip=True,
    )


def turbidity_preset() -> TrainingPreset:
    """High-volume preset: fixed hyperparameters, no Bayesian loop, small
    batches, stricter plateau schedule, cosine decay, no horizontal flip."""
    return TrainingPreset(
        name="turbidity",
        bayesian=False,
        batch_size=8,
        plateau_patience=1,
        cosine_decay=True,
        horizontal_flip=False,
        fixed_values={
            "dropout": 0.4,
            "l2": 1e-3,
            "learning_rate": 1e-4,
            "dense_units": 1024,
            "optimizer": "adam",
        },
    )


def load_presets(path) -> dict[str, TrainingPreset]:
    """Read [[preset]] entries from a TOML file, keyed by name."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    presets = {}
    for entry in doc.get("preset", []):
        preset = TrainingPreset(
            name=entry["name"],
            bayesian=bool(entry.get("bayesian", True)),
            batch_size=int(entry.get("batch_size", 32)),
            plateau_patience=int(entry.get("plateau_patience", 2)),
            cosine_decay=bool(entry.get("cosine_decay", False)),
            horizontal_flip=bool(entry.get("horizontal_flip", True)),
            fixed_values=entry.get("fixed_values"),
        )
        presets[preset.name] = preset
    return presets
