"""Synthetic benchmark datasets and per-output standardization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDataError


@dataclass(eq=False)
class Output:
    """Observations of one output: id, inputs (p, D), responses (p,)."""

    id: int
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.X = X
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError("X and y lengths differ")

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]


@dataclass(eq=False)
class Dataset:
    """A collection of outputs plus free-form per-output metadata."""

    outputs: list
    meta: dict = field(default_factory=dict)

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    @property
    def input_dim(self) -> int:
        return self.outputs[0].input_dim

    @property
    def ids(self) -> list:
        return [out.id for out in self.outputs]

    def by_id(self, output_id) -> Output:
        for out in self.outputs:
            if out.id == output_id:
                return out
        raise KeyError(f"no output with id {output_id!r}")


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Exact equality of ids, inputs and responses (metadata ignored)."""
    if a.ids != b.ids:
        return False
    return all(np.array_equal(x.X, y.X) and np.array_equal(x.y, y.y)
               for x, y in zip(a.outputs, b.outputs))


# ---------------------------------------------------------------------------
# generators
#
# Each generator returns (dataset, truth) where truth(output_id, x) evaluates
# the noiseless function of that output at inputs x (array of shape (m,) or
# (m, 1) for these one-dimensional settings).


def _flat_x(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


def gen_setting1(N: int = 5, p: int = 10, sigma: float = 0.1, seed: int = 0):
    """Homogeneous sine group: every output is 1 + sin(x) on [0, 10]."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    x = np.linspace(0.0, 10.0, p)
    outputs = []
    for i in range(1, N + 1):
        y = 1.0 + np.sin(x) + sigma * rng.standard_normal(p)
        outputs.append(Output(i, x[:, None], y))

    def truth(output_id, xq):
        return 1.0 + np.sin(_flat_x(xq))

    return Dataset(outputs, meta={}), truth


def gen_setting2(N: int = 50, p_train: int = 20, p_target: int = 10,
                 sigma: float = 1.0, seed: int = 0):
    """Scaled parabolas 1 + e_i x^2 with per-output slopes e_i ~ U(0.8, 1.2).

    Outputs 1..N-1 are observed at p_train points on [0, 10]; the target
    output N only at p_target points on [0, 7].
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    coefs = {i: rng.uniform(0.8, 1.2) for i in range(1, N + 1)}
    outputs = []
    meta = {}
    for i in range(1, N + 1):
        if i < N:
            x = np.linspace(0.0, 10.0, p_train)
        else:
            x = np.linspace(0.0, 7.0, p_target)
        y = 1.0 + coefs[i] * x ** 2 + sigma * rng.standard_normal(x.size)
        outputs.append(Output(i, x[:, None], y))
        meta[i] = {"coef": coefs[i]}

    def truth(output_id, xq):
        return 1.0 + coefs[output_id] * _flat_x(xq) ** 2

    return Dataset(outputs, meta=meta), truth


_SETTING3_FAMILY = {1: 1, 2: 1, 3: 1, 4: 1, 5: 2, 6: 2, 7: 3, 8: 3}


def _setting3_truth(family: int, x: np.ndarray) -> np.ndarray:
    if family == 1:
        return x ** 2
    if family == 2:
        return x ** 2 / (2.0 * (1.0 - x))
    return x ** 2 / (1.0 - x)


def gen_setting3(sigma: float = 0.005, seed: int = 0):
    """Three response families on [0, 0.8]: eight outputs, seven points each.

    Outputs 1-4 follow x^2, outputs 5-6 follow x^2 / (2(1-x)) and outputs
    7-8 follow x^2 / (1-x), which is exactly twice the second family.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    x = np.linspace(0.0, 0.8, 7)
    outputs = []
    meta = {}
    for i in range(1, 9):
        family = _SETTING3_FAMILY[i]
        y = _setting3_truth(family, x) + sigma * rng.standard_normal(x.size)
        outputs.append(Output(i, x[:, None], y))
        meta[i] = {"family": family}

    def truth(output_id, xq):
        return _setting3_truth(_SETTING3_FAMILY[output_id], _flat_x(xq))

    return Dataset(outputs, meta=meta), truth


GENERATORS = {1: gen_setting1, 2: gen_setting2, 3: gen_setting3}


# ---------------------------------------------------------------------------
# standardization


def standardize(dataset: Dataset) -> Dataset:
    """Shift and scale each output's responses to mean 0, std 1.

    The applied (mean, std) pair is recorded per output in the returned
    dataset's metadata so predictions can be mapped back.
    """
    outputs = []
    meta = {k: dict(v) for k, v in dataset.meta.items()}
    for out in dataset.outputs:
        if out.n_obs < 2 or np.unique(out.y).size < 2:
            raise DegenerateDataError(
                f"output {out.id!r} needs at least two distinct responses")
        mean = float(np.mean(out.y))
        std = float(np.std(out.y, ddof=1))
        outputs.append(Output(out.id, out.X.copy(), (out.y - mean) / std))
        entry = meta.setdefault(out.id, {})
        entry["mean"] = mean
        entry["std"] = std
    return Dataset(outputs, meta=meta)


def de_standardize(dataset: Dataset) -> Dataset:
    """Invert :func:`standardize` using the recorded (mean, std) pairs."""
    outputs = []
    meta = {}
    for out in dataset.outputs:
        entry = dataset.meta.get(out.id, {})
        if "mean" not in entry or "std" not in entry:
            raise KeyError(f"output {out.id!r} has no standardization record")
        outputs.append(Output(out.id, out.X.copy(),
                              out.y * entry["std"] + entry["mean"]))
        rest = {k: v for k, v in entry.items() if k not in ("mean", "std")}
        if rest:
            meta[out.id] = rest
    return Dataset(outputs, meta=meta)
