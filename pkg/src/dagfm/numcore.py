"""Parameter storage, Adam updates, and finite-difference gradient checking.

Every model in this package keeps its trainable state in a :class:`ParamStore`
and supplies hand-derived analytic gradients. ``grad_check`` validates those
gradients against central finite differences; it is the single verification
harness shared by all model tests.

Training is typically run in float32, verification in float64. Batch
reductions use numpy's deterministic reduction order, so a run is
bit-reproducible for a fixed seed on a fixed machine.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ConfigurationError(ValueError):
    """A shape or setting is invalid before any arithmetic runs."""


class ShapeError(ConfigurationError):
    """Operands disagree on shape."""


class TrainingDivergenceError(RuntimeError):
    """A non-finite value appeared during a training step."""


class EvaluationError(RuntimeError):
    """A loss evaluation produced a non-finite value."""


def require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise TrainingDivergenceError(f"non-finite values in '{name}'")


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function, branching on the sign of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ParamStore:
    """Named dense parameters with per-parameter trainable flag and Adam state.

    Parameters are numpy arrays owned by the store. A frozen parameter is
    bitwise untouched by ``adam_step``: neither its value nor its optimizer
    moments move.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._values: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._step: dict[str, int] = {}

    # -- registration / access ------------------------------------------------

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> np.ndarray:
        if name in self._values:
            raise ConfigurationError(f"parameter '{name}' already registered")
        arr = np.ascontiguousarray(value, dtype=self.dtype)
        self._values[name] = arr
        self._trainable[name] = bool(trainable)
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        self._step[name] = 0
        return arr

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def set(self, name: str, value: np.ndarray) -> None:
        cur = self._values[name]
        arr = np.ascontiguousarray(value, dtype=self.dtype)
        if arr.shape != cur.shape:
            raise ShapeError(
                f"parameter '{name}': expected shape {cur.shape}, got {arr.shape}"
            )
        self._values[name] = arr

    def names(self) -> list[str]:
        return list(self._values)

    def trainable_names(self) -> list[str]:
        return [n for n, t in self._trainable.items() if t]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def freeze(self, *names: str) -> None:
        for n in names:
            self._trainable[n] = False  # noqa: B909 - plain dict write

    def unfreeze(self, *names: str) -> None:
        for n in names:
            self._trainable[n] = True

    def unfreeze_all(self) -> None:
        for n in self._trainable:
            self._trainable[n] = True

    def step_count(self, name: str) -> int:
        return self._step[name]

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m[name], self._v[name]

    def n_scalars(self, names: Iterable[str] | None = None) -> int:
        names = self.names() if names is None else list(names)
        return int(sum(self._values[n].size for n in names))

    def value_bytes(self, name: str) -> bytes:
        return self._values[name].tobytes()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self._values.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, v in snap.items():
            self.set(n, v)

    def copy(self) -> "ParamStore":
        out = ParamStore(self.dtype)
        for n, v in self._values.items():
            out.add(n, v.copy(), trainable=self._trainable[n])
            out._m[n] = self._m[n].copy()
            out._v[n] = self._v[n].copy()
            out._step[n] = self._step[n]
        return out


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected Adam update over the store's trainable parameters.

    Gradients supplied for frozen parameters are ignored; gradients for
    unknown names are a configuration error. ``weight_decay`` adds a classic
    L2 term ``wd * theta`` to the gradient before the moment updates (so with
    ``weight_decay > 0`` parameters move even under a zero loss gradient).
    """
    if lr < 0:
        raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
    for name in grads:
        if name not in store:
            raise ConfigurationError(f"gradient for unknown parameter '{name}'")
    for name in store.trainable_names():
        if name not in grads:
            raise ConfigurationError(f"missing gradient for trainable parameter '{name}'")
        theta = store[name]
        g = np.asarray(grads[name], dtype=store.dtype)
        if g.shape != theta.shape:
            raise ShapeError(
                f"gradient for '{name}': expected shape {theta.shape}, got {g.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for parameter '{name}'")
        if weight_decay:
            g = g + store.dtype.type(weight_decay) * theta
        m, v = store.moments(name)
        t = store.step_count(name) + 1
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        theta -= store.dtype.type(lr) * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        store._step[name] = t


LossAndGrads = Callable[[ParamStore], tuple[float, dict[str, np.ndarray]]]


def grad_check(
    fn: LossAndGrads,
    store: ParamStore,
    h: float = 1e-5,
    max_coords_per_param: int = 5,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(store)`` must deterministically return ``(loss, grads)`` where
    ``grads`` covers every trainable parameter. For each trainable parameter
    up to ``max_coords_per_param`` coordinates are sampled; each is perturbed
    by ``+-h`` and the relative error
    ``|analytic - fd| / (|fd| + 1e-8)`` is taken. Run in float64.
    """
    rng = rng or np.random.default_rng(0)
    loss, grads = fn(store)
    if not np.isfinite(loss):
        raise EvaluationError(f"non-finite loss {loss!r} during gradient check")
    worst = 0.0
    for name in store.trainable_names():
        theta = store[name]
        flat = theta.reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        analytic = np.asarray(grads[name]).reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            lp, _ = fn(store)
            flat[c] = orig - h
            lm, _ = fn(store)
            flat[c] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise EvaluationError(f"non-finite loss while perturbing '{name}'")
            fd = (lp - lm) / (2.0 * h)
            rel = abs(analytic[c] - fd) / (abs(fd) + 1e-8)
            worst = max(worst, float(rel))
    return worst
