"""Model specification, state layout and score-driven coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import SpecError

FAMILIES = (
    "uni-gaussian",
    "uni-student-t",
    "mv-gaussian",
    "mv-student-t",
    "t-copula",
    "gaussian-copula",
)
COPULA_FAMILIES = ("t-copula", "gaussian-copula")
UNIVARIATE_FAMILIES = ("uni-gaussian", "uni-student-t")
BLOCK_NAMES = ("weights", "mean", "scale", "corr", "shape")

# Lower bound c in shape = exp(shape~) + c.
DEFAULT_SHAPE_OFFSET = {"uni-student-t": 2.0, "mv-student-t": 2.01, "t-copula": 2.01}


def n_corr(d: int) -> int:
    return d * (d - 1) // 2


def _family_blocks(family: str, d: int) -> list[tuple[str, int]]:
    m = n_corr(d)
    return {
        "uni-gaussian": [("mean", 1), ("scale", 1)],
        "uni-student-t": [("mean", 1), ("scale", 1), ("shape", 1)],
        "mv-gaussian": [("mean", d), ("scale", d), ("corr", m)],
        "mv-student-t": [("mean", d), ("scale", d), ("corr", m), ("shape", 1)],
        "t-copula": [("corr", m), ("shape", 1)],
        "gaussian-copula": [("corr", m)],
    }[family]


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a dynamic adaptive mixture.

    ``frozen_blocks`` lists parameter blocks (``weights``, ``mean``, ``scale``,
    ``corr``, ``shape``) whose dynamics are switched off: their score loading and
    autoregressive coefficient are zero, so the block sits at its intercept.
    The copula shape is always frozen.
    """

    family: str
    d: int = 1
    J: int = 2
    frozen_blocks: frozenset = field(default_factory=frozenset)
    shape_offset: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.J < 1:
            raise SpecError("J must be at least 1")
        if self.d < 1:
            raise SpecError("d must be at least 1")
        if self.family in UNIVARIATE_FAMILIES and self.d != 1:
            raise SpecError(f"{self.family} requires d = 1")
        if self.family in COPULA_FAMILIES and self.d < 2:
            raise SpecError("copula families require d >= 2")
        frozen = frozenset(self.frozen_blocks)
        unknown = frozen - set(BLOCK_NAMES)
        if unknown:
            raise SpecError(f"unknown block names {sorted(unknown)}")
        if self.family == "t-copula":
            frozen = frozen | {"shape"}
        object.__setattr__(self, "frozen_blocks", frozen)
        if self.shape_offset is None:
            object.__setattr__(self, "shape_offset", DEFAULT_SHAPE_OFFSET.get(self.family, 0.0))

    # -- layout -------------------------------------------------------------

    @property
    def blocks(self) -> list[tuple[str, int]]:
        """(name, size) of the per-component blocks, in storage order."""
        return _family_blocks(self.family, self.d)

    @property
    def block_names(self) -> list[str]:
        names = [b for b, _ in self.blocks]
        return (["weights"] if self.J > 1 else []) + names

    @property
    def component_size(self) -> int:
        return sum(size for _, size in self.blocks)

    @property
    def n_weights(self) -> int:
        return self.J - 1

    @property
    def n_state(self) -> int:
        return self.n_weights + self.J * self.component_size

    def component_slice(self, j: int) -> slice:
        start = self.n_weights + j * self.component_size
        return slice(start, start + self.component_size)

    def local_block_slice(self, name: str) -> slice:
        start = 0
        for b, size in self.blocks:
            if b == name:
                return slice(start, start + size)
            start += size
        raise SpecError(f"family {self.family} has no {name!r} block")

    def block_slice(self, name: str, j: int | None = None) -> slice:
        if name == "weights":
            return slice(0, self.n_weights)
        if j is None:
            raise SpecError("component index required for component blocks")
        local = self.local_block_slice(name)
        off = self.component_slice(j).start
        return slice(off + local.start, off + local.stop)

    def coordinate_blocks(self) -> np.ndarray:
        """Block name of every coordinate of the unconstrained state."""
        names = ["weights"] * self.n_weights
        for _ in range(self.J):
            for b, size in self.blocks:
                names.extend([b] * size)
        return np.array(names, dtype=object)

    def dynamic_mask(self) -> np.ndarray:
        blocks = self.coordinate_blocks()
        return np.array([b not in self.frozen_blocks for b in blocks], dtype=bool)

    def coordinate_labels(self) -> list[str]:
        labels = [f"w{k + 1}" for k in range(self.n_weights)]
        d = self.d
        pairs = [(i, l) for i in range(d) for l in range(i + 1, d)]
        for j in range(self.J):
            for b, size in self.blocks:
                if b == "corr":
                    labels.extend(f"c{j + 1}.corr{i + 1}{l + 1}" for i, l in pairs)
                elif size == 1:
                    labels.append(f"c{j + 1}.{b}")
                else:
                    labels.extend(f"c{j + 1}.{b}{i + 1}" for i in range(size))
        return labels

    @property
    def is_copula(self) -> bool:
        return self.family in COPULA_FAMILIES

    def with_frozen(self, blocks: Iterable[str]) -> "ModelSpec":
        return ModelSpec(self.family, self.d, self.J, frozenset(blocks), self.shape_offset)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "d": self.d,
            "J": self.J,
            "frozen_blocks": sorted(self.frozen_blocks),
            "shape_offset": self.shape_offset,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(
            family=data["family"],
            d=int(data.get("d", 1)),
            J=int(data.get("J", 2)),
            frozen_blocks=frozenset(data.get("frozen_blocks", ())),
            shape_offset=data.get("shape_offset"),
        )


@dataclass(frozen=True)
class UnconstrainedState:
    """Unconstrained parameter vector split into weight and component blocks."""

    weights_block: np.ndarray
    component_blocks: tuple

    @classmethod
    def from_flat(cls, spec: ModelSpec, theta_tilde) -> "UnconstrainedState":
        theta_tilde = np.asarray(theta_tilde, dtype=float)
        if theta_tilde.shape != (spec.n_state,):
            raise SpecError(
                f"state length {theta_tilde.shape} does not match layout length {spec.n_state}"
            )
        comps = tuple(theta_tilde[spec.component_slice(j)].copy() for j in range(spec.J))
        return cls(theta_tilde[: spec.n_weights].copy(), comps)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights_block, *self.component_blocks])


@dataclass
class GasCoefficients:
    """Intercept and diagonal score/autoregressive loadings of the recursion."""

    kappa: np.ndarray
    a_diag: np.ndarray
    b_diag: np.ndarray

    def __post_init__(self):
        self.kappa = np.asarray(self.kappa, dtype=float).copy()
        self.a_diag = np.asarray(self.a_diag, dtype=float).copy()
        self.b_diag = np.asarray(self.b_diag, dtype=float).copy()
        if not (self.kappa.shape == self.a_diag.shape == self.b_diag.shape) or self.kappa.ndim != 1:
            raise SpecError("kappa, a_diag and b_diag must be vectors of equal length")

    @property
    def L(self) -> int:
        return self.kappa.size

    def validate(self, spec: ModelSpec) -> "GasCoefficients":
        if self.L != spec.n_state:
            raise SpecError(f"coefficient length {self.L} does not match layout length {spec.n_state}")
        if np.any(np.abs(self.b_diag) >= 1.0):
            raise SpecError("every b_diag entry must lie strictly inside (-1, 1)")
        frozen = ~spec.dynamic_mask()
        if np.any(self.a_diag[frozen] != 0) or np.any(self.b_diag[frozen] != 0):
            raise SpecError("frozen blocks must have a_diag = b_diag = 0")
        if not (np.all(np.isfinite(self.kappa)) and np.all(np.isfinite(self.a_diag))):
            raise SpecError("coefficients must be finite")
        return self

    def stationary_state(self) -> np.ndarray:
        """Unconditional level kappa / (1 - b) of each coordinate."""
        return self.kappa / (1.0 - self.b_diag)

    @classmethod
    def static(cls, theta_tilde) -> "GasCoefficients":
        theta_tilde = np.asarray(theta_tilde, dtype=float)
        zeros = np.zeros_like(theta_tilde)
        return cls(theta_tilde, zeros, zeros.copy())

    @classmethod
    def from_levels(cls, spec: ModelSpec, levels, a, b) -> "GasCoefficients":
        """Coefficients whose stationary state equals ``levels``; frozen blocks get a = b = 0."""
        levels = np.asarray(levels, dtype=float)
        dyn = spec.dynamic_mask()
        a_diag = np.where(dyn, np.broadcast_to(a, levels.shape), 0.0)
        b_diag = np.where(dyn, np.broadcast_to(b, levels.shape), 0.0)
        return cls(levels * (1.0 - b_diag), a_diag, b_diag)

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa.tolist(),
            "a_diag": self.a_diag.tolist(),
            "b_diag": self.b_diag.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GasCoefficients":
        return cls(data["kappa"], data["a_diag"], data["b_diag"])

    def copy(self) -> "GasCoefficients":
        return GasCoefficients(self.kappa, self.a_diag, self.b_diag)
