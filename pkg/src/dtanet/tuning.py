"""Hyperparameter search: seeded random sampling and GP-guided search.

Both strategies minimize an objective over a named space of continuous
(optionally log-scaled), integer and categorical dimensions. The guided
strategy fits a Gaussian process with a squared-exponential kernel on the
unit-cube encoding of the completed trials (lengthscale and noise picked by
marginal likelihood over a small grid), then proposes the maximizer of the
expected improvement over a seeded candidate pool. Objective failures are
recorded as failed trials and never abort the search; Cholesky failures
escalate the jitter and, as a last resort, fall back to a random proposal
for that iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "TuneError",
    "Continuous",
    "Integer",
    "Categorical",
    "SearchSpace",
    "Trial",
    "SearchResult",
    "random_search",
    "gp_ei_search",
    "expected_improvement",
    "GaussianProcess",
    "load_space",
    "default_search_space",
    "make_composite_objective",
]

log = logging.getLogger(__name__)


class TuneError(ValueError):
    pass


@dataclass(frozen=True)
class Continuous:
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise TuneError(f"continuous bounds need lo < hi, got [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise TuneError("log-scaled dimensions need lo > 0")

    def sample(self, rng):
        if self.log:
            return float(np.exp(rng.uniform(np.log(self.lo), np.log(self.hi))))
        return float(rng.uniform(self.lo, self.hi))

    def encode(self, value):
        if self.log:
            return [(math.log(value) - math.log(self.lo))
                    / (math.log(self.hi) - math.log(self.lo))]
        return [(value - self.lo) / (self.hi - self.lo)]

    @property
    def width(self):
        return 1


@dataclass(frozen=True)
class Integer:
    lo: int
    hi: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise TuneError(f"integer bounds need lo < hi, got [{self.lo}, {self.hi}]")

    def sample(self, rng):
        return int(rng.integers(self.lo, self.hi + 1))

    def encode(self, value):
        return [(value - self.lo) / (self.hi - self.lo)]

    @property
    def width(self):
        return 1


@dataclass(frozen=True)
class Categorical:
    choices: tuple

    def __post_init__(self):
        if not self.choices:
            raise TuneError("categorical dimension with no choices")

    def sample(self, rng):
        return self.choices[int(rng.integers(0, len(self.choices)))]

    def encode(self, value):
        row = [0.0] * len(self.choices)
        row[self.choices.index(value)] = 1.0
        return row

    @property
    def width(self):
        return len(self.choices)


@dataclass
class SearchSpace:
    dimensions: dict[str, Continuous | Integer | Categorical]

    def sample(self, rng: np.random.Generator) -> dict:
        return {name: dim.sample(rng) for name, dim in self.dimensions.items()}

    def encode(self, point: dict) -> np.ndarray:
        row: list[float] = []
        for name, dim in self.dimensions.items():
            row.extend(dim.encode(point[name]))
        return np.asarray(row, dtype=np.float64)


@dataclass
class Trial:
    index: int
    point: dict
    value: float | None
    status: str  # "complete" | "failed"
    message: str | None = None


@dataclass
class SearchResult:
    trials: list[Trial]
    strategy: str
    seed: int

    @property
    def best(self) -> Trial:
        return best_of(self.trials)


def best_of(trials: list[Trial]) -> Trial:
    complete = [t for t in trials if t.status == "complete"]
    if not complete:
        raise TuneError("no completed trial")
    return min(complete, key=lambda t: (t.value, t.index))


def _evaluate(objective, point: dict, index: int) -> Trial:
    try:
        value = float(objective(point))
    except Exception as exc:  # failed trials are data, not crashes
        log.warning("trial %d failed: %s", index, exc)
        return Trial(index=index, point=point, value=None, status="failed",
                     message=str(exc))
    if not np.isfinite(value):
        return Trial(index=index, point=point, value=None, status="failed",
                     message=f"non-finite objective {value}")
    return Trial(index=index, point=point, value=value, status="complete")


def random_search(space: SearchSpace, objective, budget: int,
                  seed: int = 0) -> SearchResult:
    """``budget`` independent seeded samples; returns all trials."""
    if budget < 1:
        raise TuneError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    trials = [_evaluate(objective, space.sample(rng), i) for i in range(budget)]
    return SearchResult(trials=trials, strategy="random", seed=seed)


def _norm_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))


def _norm_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def expected_improvement(mean: np.ndarray, std: np.ndarray,
                         best: float) -> np.ndarray:
    """EI for minimization; zero wherever std is 0 and mean >= best."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    improvement = best - mean
    out = np.maximum(improvement, 0.0)
    positive = std > 0.0
    z = np.divide(improvement, std, out=np.zeros_like(std), where=positive)
    ei = improvement * _norm_cdf(z) + std * _norm_pdf(z)
    out = np.where(positive, ei, out)
    return np.maximum(out, 0.0)


class GaussianProcess:
    """Squared-exponential GP with grid-selected lengthscale and noise.

    Targets are standardized internally. The noise grid starts near zero, so
    on noiseless data the posterior mean interpolates the training targets
    (up to the jitter used to keep the Cholesky factor alive).
    """

    def __init__(self,
                 lengthscales=(0.05, 0.1, 0.2, 0.5, 1.0, 2.0),
                 noise_levels=(1e-10, 1e-6, 1e-4, 1e-2),
                 jitter: float = 1e-12):
        self.lengthscales = tuple(lengthscales)
        self.noise_levels = tuple(noise_levels)
        self.jitter = jitter
        self._fit = None

    @staticmethod
    def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)

    def _chol_with_jitter(self, k: np.ndarray) -> tuple[np.ndarray, float] | None:
        jitter = self.jitter
        for _ in range(8):
            try:
                return np.linalg.cholesky(k + jitter * np.eye(k.shape[0])), jitter
            except np.linalg.LinAlgError:
                jitter *= 100.0
        return None

    def fit(self, x: np.ndarray, y: np.ndarray) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).ravel()
        if x.shape[0] != y.shape[0] or x.shape[0] < 2:
            raise TuneError("GP fit needs at least 2 matching observations")
        self._y_mean = float(y.mean())
        self._y_std = float(y.std())
        if self._y_std == 0.0:
            self._y_std = 1.0
        yn = (y - self._y_mean) / self._y_std
        sq = self._sqdist(x, x)
        best = None
        for ell in self.lengthscales:
            k_base = np.exp(-0.5 * sq / (ell * ell))
            for noise in self.noise_levels:
                chol = self._chol_with_jitter(k_base + noise * np.eye(len(yn)))
                if chol is None:
                    continue
                lower, jitter = chol
                alpha = np.linalg.solve(lower.T, np.linalg.solve(lower, yn))
                log_ml = (-0.5 * yn @ alpha
                          - np.log(np.diag(lower)).sum()
                          - 0.5 * len(yn) * math.log(2.0 * math.pi))
                if best is None or log_ml > best[0]:
                    best = (log_ml, ell, noise, lower, alpha, jitter)
        if best is None:
            raise TuneError("GP fit failed: no kernel configuration factorized")
        _, ell, noise, lower, alpha, jitter = best
        self._fit = {"x": x, "ell": ell, "noise": noise, "lower": lower,
                     "alpha": alpha, "jitter": jitter}

    def predict(self, x_new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._fit is None:
            raise TuneError("predict before fit")
        x_new = np.atleast_2d(np.asarray(x_new, dtype=np.float64))
        fit = self._fit
        k_star = np.exp(-0.5 * self._sqdist(x_new, fit["x"])
                        / (fit["ell"] ** 2))
        mean_n = k_star @ fit["alpha"]
        v = np.linalg.solve(fit["lower"], k_star.T)
        var_n = 1.0 + fit["noise"] - (v ** 2).sum(axis=0)
        var_n = np.maximum(var_n, 0.0)
        mean = mean_n * self._y_std + self._y_mean
        std = np.sqrt(var_n) * self._y_std
        return mean, std


def gp_ei_search(space: SearchSpace, objective, budget: int,
                 n_init: int = 10, seed: int = 0,
                 n_candidates: int = 1024) -> SearchResult:
    """GP-guided minimization: random warm-up, then EI over a candidate pool."""
    if budget <= n_init:
        raise TuneError(f"budget {budget} must exceed n_init {n_init}")
    rng = np.random.default_rng(seed)
    trials = [_evaluate(objective, space.sample(rng), i) for i in range(n_init)]
    gp = GaussianProcess()
    for index in range(n_init, budget):
        complete = [t for t in trials if t.status == "complete"]
        point = None
        if len(complete) >= 2:
            x = np.stack([space.encode(t.point) for t in complete])
            y = np.array([t.value for t in complete])
            try:
                gp.fit(x, y)
                candidates = [space.sample(rng) for _ in range(n_candidates)]
                encoded = np.stack([space.encode(c) for c in candidates])
                mean, std = gp.predict(encoded)
                ei = expected_improvement(mean, std, float(y.min()))
                point = candidates[int(np.argmax(ei))]
            except TuneError as exc:
                log.warning("GP proposal failed (%s); sampling randomly", exc)
        if point is None:
            point = space.sample(rng)
        trials.append(_evaluate(objective, point, index))
    return SearchResult(trials=trials, strategy="gp", seed=seed)


# -- space files ---------------------------------------------------------------


def default_search_space() -> SearchSpace:
    """Model/training dimensions searched when no space file is given."""
    return SearchSpace(dimensions={
        "learning_rate": Continuous(1e-4, 1e-2, log=True),
        "batch_size": Categorical((16, 32, 64)),
        "n_layers": Integer(1, 3),
        "layer_width": Categorical((64, 128, 256, 512)),
        "dropout": Continuous(0.0, 0.5),
    })


def load_space(path: str | Path) -> SearchSpace:
    """Read a space file: ``name kind args...`` per line.

    Kinds: ``continuous lo hi [log]``, ``integer lo hi``,
    ``categorical v1 v2 ...`` (values parsed as numbers when possible).
    """
    dims: dict[str, Continuous | Integer | Categorical] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise TuneError(f"{path}:{lineno}: expected 'name kind args...'")
            name, kind, *args = parts
            if kind == "continuous":
                is_log = len(args) > 2 and args[2] == "log"
                dims[name] = Continuous(float(args[0]), float(args[1]), is_log)
            elif kind == "integer":
                dims[name] = Integer(int(args[0]), int(args[1]))
            elif kind == "categorical":
                dims[name] = Categorical(tuple(_parse_scalar(a) for a in args))
            else:
                raise TuneError(f"{path}:{lineno}: unknown dimension kind {kind!r}")
    if not dims:
        raise TuneError(f"{path}: empty search space")
    return SearchSpace(dimensions=dims)


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def make_composite_objective(dataset, variant: str, seed: int = 0,
                             max_epochs: int = 20, patience: int = 3,
                             holdout_fraction: float = 0.1):
    """Objective: train on the 90% split, return the composite score on the 10%.

    The holdout split is random regardless of the CV scheme the resulting
    hyperparameters will be used with; one tuned configuration per
    (dataset, variant) is reused across all schemes.
    """
    from .model import FeatureStore, ModelConfig
    from .splits import hyperopt_holdout
    from .training import TrainConfig, train

    train_idx, val_idx = hyperopt_holdout(dataset.n_pairs, seed=seed)

    def objective(point: dict) -> float:
        width = int(point.get("layer_width", 128))
        layers = tuple([width] * int(point.get("n_layers", 2)))
        cfg = ModelConfig(
            variant=variant,
            n_tasks=dataset.n_tasks,
            hidden_layers=layers,
            dropout_rates=(float(point.get("dropout", 0.1)),),
            seed=seed,
        )
        store = FeatureStore(dataset, cfg)
        model = store.build_model()
        result = train(model, store, train_idx, val_idx, TrainConfig(
            batch_size=int(point.get("batch_size", 32)),
            max_epochs=max_epochs,
            patience=patience,
            learning_rate=float(point.get("learning_rate", 1e-3)),
            seed=seed,
        ))
        return result.best_score

    return objective
