"""Deterministic synthetic datasets for the training experiments.

Three generators, all pure functions of their parameters and seed:

* ``c4_toy``: single-channel images of centered squares; the target is
  a shape computed from the input's size and intensity. With
  ``target="square"`` the target is itself C4-symmetric, so an exactly
  equivariant model can fit it; ``rectangle`` keeps only the 180-degree
  symmetry and ``nonsymmetric`` none, forcing any equivariant model to
  miss by a margin.
* ``set_regression``: point sets with a permutation-equivariant target
  map plus an ``epsilon``-scaled row-position term that breaks the
  symmetry by a controlled amount.
* ``scalar_toys``: one-parameter convex problems with closed-form
  optima, used as oracles for the primal-dual dynamics.

Targets are noiseless by default; ``noise`` adds i.i.d. Gaussian
observation noise on top so symmetry-breaking effects stay separable
from generic noise in experiments.

Splits are 80/10/10 after a seeded shuffle; fractional sizes floor to
integers and the remainder goes to train, so every split is nonempty
once n >= 10.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _binio
from .tensor import Tensor

__all__ = [
    "Dataset",
    "SymmetryBreakSpec",
    "c4_toy",
    "set_regression",
    "set_target_map",
    "scalar_toys",
    "ScalarToy",
    "save_dataset",
    "load_dataset",
    "dataset_to_csv",
]


@dataclass(frozen=True)
class SymmetryBreakSpec:
    """How far the target map is from equivariant, and in what way."""

    epsilon: float
    break_kind: str  # none | subgroup_c2 | arbitrary

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.break_kind not in ("none", "subgroup_c2", "arbitrary"):
            raise ValueError(f"unknown break kind {self.break_kind!r}")


@dataclass(frozen=True)
class Dataset:
    """Immutable (inputs, targets) with index splits and provenance.

    ``inputs`` and ``targets`` are stacked arrays with the sample axis
    first; ``splits`` maps train/val/test to disjoint index arrays that
    together cover every sample.
    """

    inputs: np.ndarray
    targets: np.ndarray
    splits: dict
    seed: int
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.targets.shape[0] != n:
            raise ValueError(f"{n} inputs but {self.targets.shape[0]} targets")
        seen = np.concatenate([self.splits[k] for k in ("train", "val", "test")])
        if len(seen) != n or len(np.unique(seen)) != n:
            raise ValueError("splits must be disjoint and cover every sample")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def split_size(self, split: str) -> int:
        return len(self.splits[split])

    def stacked(self, split: str):
        """(inputs, targets) of one split as batched Tensors."""
        idx = self.splits[split]
        return Tensor(self.inputs[idx]), Tensor(self.targets[idx])

    def sample(self, i: int):
        return Tensor(self.inputs[i]), Tensor(self.targets[i])


def _split_indices(n: int, rng) -> dict:
    order = rng.permutation(n)
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return {
        "train": np.sort(order[:n_train]).astype(np.int64),
        "val": np.sort(order[n_train : n_train + n_val]).astype(np.int64),
        "test": np.sort(order[n_train + n_val :]).astype(np.int64),
    }


# ---------------------------------------------------------------- C4 image toy


def _block(image: np.ndarray, r0: int, r1: int, c0: int, c1: int, value: float) -> None:
    image[0, r0:r1, c0:c1] = value


def c4_toy(target: str = "square", n: int = 200, image_size: int = 8, seed: int = 0,
           noise: float = 0.0) -> Dataset:
    """Centered-square images mapped to a shape target.

    Inputs: one channel, a square of side 2s (s uniform in
    1..image_size/2 - 2) centered on the array center, intensity uniform
    in [0.5, 1], zero background. Centered even-sided blocks are exact
    fixed points of the 90-degree array rotation, so the inputs are
    C4-symmetric.

    Targets, computed from (s, intensity):
      square        side 2(s+1) centered block - C4-symmetric;
      rectangle     (2s+2) x 2s centered block - fixed by 180 degrees
                    only;
      nonsymmetric  side 2s block shifted by (1, 2) - fixed by no
                    nontrivial rotation.
    """
    if target not in ("square", "rectangle", "nonsymmetric"):
        raise ValueError(f"unknown target {target!r}")
    if image_size % 2 != 0 or image_size < 8:
        raise ValueError(f"image_size must be even and >= 8, got {image_size}")
    rng = np.random.default_rng(seed)
    c = image_size // 2
    s_max = c - 2
    inputs = np.zeros((n, 1, image_size, image_size))
    targets = np.zeros_like(inputs)
    for i in range(n):
        s = int(rng.integers(1, s_max + 1))
        value = float(rng.uniform(0.5, 1.0))
        _block(inputs[i], c - s, c + s, c - s, c + s, value)
        t = s + 1
        if target == "square":
            _block(targets[i], c - t, c + t, c - t, c + t, value)
        elif target == "rectangle":
            _block(targets[i], c - t, c + t, c - s, c + s, value)
        else:
            _block(targets[i], c - s + 1, c + s + 1, c - s + 2, c + s + 2, value)
    if noise > 0.0:
        targets = targets + noise * rng.normal(size=targets.shape)
    break_kind = {"square": "none", "rectangle": "subgroup_c2", "nonsymmetric": "arbitrary"}
    descriptor = {
        "task": "c4_toy",
        "target": target,
        "n": n,
        "image_size": image_size,
        "noise": noise,
        "break_kind": break_kind[target],
    }
    return Dataset(inputs, targets, _split_indices(n, rng), seed, descriptor)


# ---------------------------------------------------------------- set regression


def set_regression(n_points: int = 4, d: int = 3, epsilon: float = 0.0,
                   n_samples: int = 200, seed: int = 0, noise: float = 0.0) -> Dataset:
    """Point-set regression with a tunable equivariance defect.

    y = X A + (1/n) 1 1^T X B + 0.3 relu(X) C + epsilon * w (X D)

    where w = diag(linspace(-1, 1, n_points)) weights rows by their
    position. The first three terms commute with row permutations; the
    last does not, and epsilon scales it.
    """
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    rng = np.random.default_rng(seed)
    a, b, cmat, dmat = (rng.normal(size=(d, d)) / np.sqrt(d) for _ in range(4))
    w = np.linspace(-1.0, 1.0, n_points)[:, None]
    xs = rng.normal(size=(n_samples, n_points, d))
    pooled = xs.mean(axis=1, keepdims=True)
    ys = xs @ a + np.broadcast_to(pooled, xs.shape) @ b + 0.3 * np.maximum(xs, 0.0) @ cmat
    ys = ys + epsilon * (w * (xs @ dmat))
    if noise > 0.0:
        ys = ys + noise * rng.normal(size=ys.shape)
    descriptor = {
        "task": "set_regression",
        "n_points": n_points,
        "d": d,
        "epsilon": epsilon,
        "n_samples": n_samples,
        "noise": noise,
        "break_kind": "none" if epsilon == 0.0 else "arbitrary",
    }
    return Dataset(xs, ys, _split_indices(n_samples, rng), seed, descriptor)


def set_target_map(dataset: Dataset):
    """The exact target map of a noiseless set_regression dataset.

    Rebuilt from the dataset's seed so equivariance-defect checks can
    probe the map on arbitrary inputs, not just stored samples.
    """
    desc = dataset.descriptor
    if desc.get("task") != "set_regression":
        raise ValueError("not a set_regression dataset")
    rng = np.random.default_rng(dataset.seed)
    d = desc["d"]
    a, b, cmat, dmat = (rng.normal(size=(d, d)) / np.sqrt(d) for _ in range(4))
    w = np.linspace(-1.0, 1.0, desc["n_points"])[:, None]
    eps = desc["epsilon"]

    def apply_map(x: np.ndarray) -> np.ndarray:
        pooled = np.broadcast_to(x.mean(axis=-2, keepdims=True), x.shape)
        return x @ a + pooled @ b + 0.3 * np.maximum(x, 0.0) @ cmat + eps * (w * (x @ dmat))

    return apply_map


# ---------------------------------------------------------------- scalar toys


@dataclass(frozen=True)
class ScalarToy:
    """A one-parameter convex problem with its closed-form optimum.

    Objective (gamma - a)^2 under gamma = 0 (strict) or |gamma| <= u
    with slack price (rho/2) u^2 (resilient). ``optimum`` holds the
    exact primal-dual solution the iterates should approach.
    """

    kind: str
    a: float
    rho: float
    optimum: dict

    def objective(self, gamma: float) -> float:
        return (gamma - self.a) ** 2

    def dataset(self, n: int = 10) -> Dataset:
        """The problem embedded as data: n copies of x = [[1]], y = [[a]].

        A single-gamma model (zero equivariant branch, identity
        non-equivariant branch) then has MSE exactly (gamma - a)^2.
        """
        inputs = np.ones((n, 1, 1))
        targets = np.full((n, 1, 1), self.a)
        rng = np.random.default_rng(0)
        descriptor = {"task": "scalar_toy", "kind": self.kind, "a": self.a, "rho": self.rho}
        return Dataset(inputs, targets, _split_indices(n, rng), 0, descriptor)


def scalar_toys(kind: str, a: float, rho: float = 1.0) -> ScalarToy:
    if not np.isfinite(a):
        raise ValueError(f"a must be finite, got {a}")
    if kind == "strict_kkt":
        return ScalarToy(kind, a, rho, {"gamma": 0.0, "lambda": 2.0 * a, "u": None})
    if kind == "resilient_kkt":
        if rho <= 0.0:
            raise ValueError(f"rho must be positive, got {rho}")
        u = 2.0 * abs(a) / (2.0 + rho)
        return ScalarToy(kind, a, rho,
                         {"gamma": float(np.sign(a)) * u, "lambda": rho * u, "u": u})
    raise ValueError(f"unknown scalar toy kind {kind!r}")


# ---------------------------------------------------------------- serialization


def save_dataset(dataset: Dataset, path) -> None:
    meta = {
        "format": "ace-dataset",
        "version": 1,
        "seed": dataset.seed,
        "descriptor": dataset.descriptor,
    }
    arrays = {
        "inputs": dataset.inputs,
        "targets": dataset.targets,
        "split_train": dataset.splits["train"],
        "split_val": dataset.splits["val"],
        "split_test": dataset.splits["test"],
    }
    _binio.write_container(path, meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arrays = _binio.read_container(path)
    if meta.get("format") != "ace-dataset":
        raise _binio.ContainerError(f"{path}: not a dataset container")
    if meta.get("version") != 1:
        raise _binio.ContainerError(f"{path}: unsupported dataset version {meta.get('version')}")
    splits = {
        "train": arrays["split_train"],
        "val": arrays["split_val"],
        "test": arrays["split_test"],
    }
    return Dataset(arrays["inputs"], arrays["targets"], splits, meta["seed"],
                   meta["descriptor"])


def dataset_to_csv(dataset: Dataset, path) -> None:
    """Flat dump: one row per sample, inputs then targets, row-major."""
    n_in = int(np.prod(dataset.inputs.shape[1:]))
    n_out = int(np.prod(dataset.targets.shape[1:]))
    split_of = {}
    for name, idx in dataset.splits.items():
        for i in idx:
            split_of[int(i)] = name
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "split"]
                        + [f"x_{j}" for j in range(n_in)]
                        + [f"y_{j}" for j in range(n_out)])
        for i in range(dataset.n_samples):
            row = [i, split_of[i]]
            row += [repr(float(v)) for v in dataset.inputs[i].reshape(-1)]
            row += [repr(float(v)) for v in dataset.targets[i].reshape(-1)]
            writer.writerow(row)
