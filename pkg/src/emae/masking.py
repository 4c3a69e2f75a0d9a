"""Random element masks over m x n signal matrices.

A mask is drawn by permuting the flat indices 0..m*n-1 (Fisher-Yates, via a
counter-based Philox stream) and keeping the first floor(m*n*r). Masked
positions are zeroed on the way into the encoder; the reversed mask keeps
exactly those positions for the reconstruction loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ContractError, ShapeError
from .tensor import Tensor

__all__ = [
    "MaskSpec",
    "Mask",
    "mask_count",
    "generate_mask",
    "flat_to_2d",
    "apply_mask",
    "apply_reversed_mask",
]


def mask_count(rows: int, cols: int, ratio: float) -> int:
    """floor(m*n*r): the documented rounding rule for fractional counts."""
    return int(math.floor(rows * cols * ratio))


@dataclass
class MaskSpec:
    """Parameters of one mask stream.

    `draw_counter` strictly increases across `generate_mask` calls so that a
    fresh, independent mask comes out for every batch and epoch of a run.
    """

    rows: int
    cols: int
    ratio: float
    rng_seed: int = 0
    draw_counter: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ContractError(f"mask grid must be non-empty, got {self.rows}x{self.cols}")
        if not (0.0 < self.ratio <= 1.0):
            raise ContractError(f"masking ratio must be in (0, 1], got {self.ratio}")
        if self.draw_counter < 0:
            raise ContractError(f"draw_counter must be non-negative, got {self.draw_counter}")


@dataclass(frozen=True)
class Mask:
    """Masked flat indices (sorted, duplicate-free) for one m x n matrix."""

    flat_indices: tuple[int, ...]
    rows: int
    cols: int

    def __len__(self) -> int:
        return len(self.flat_indices)

    def positions(self) -> list[tuple[int, int]]:
        return [flat_to_2d(i, self.cols) for i in self.flat_indices]

    def as_matrix(self) -> np.ndarray:
        """0/1 matrix with 1.0 at masked positions."""
        m = np.zeros(self.rows * self.cols, dtype=np.float64)
        if self.flat_indices:
            m[list(self.flat_indices)] = 1.0
        return m.reshape(self.rows, self.cols)


def generate_mask(spec: MaskSpec) -> Mask:
    """Draw the next mask from `spec`'s stream and advance its counter.

    The permutation is uniform over all orderings given (rng_seed,
    draw_counter), so the kept subset is a uniform floor(m*n*r)-subset.
    """
    total = spec.rows * spec.cols
    k = mask_count(spec.rows, spec.cols, spec.ratio)
    gen = rng.generator(spec.rng_seed, rng.STREAM_MASK, counter=spec.draw_counter)
    perm = gen.permutation(total)
    spec.draw_counter += 1
    chosen = tuple(sorted(int(i) for i in perm[:k]))
    return Mask(flat_indices=chosen, rows=spec.rows, cols=spec.cols)


def flat_to_2d(i: int, n: int) -> tuple[int, int]:
    """Flat index i of an (m x n) matrix -> (floor(i/n), i mod n)."""
    if i < 0 or n < 1:
        raise ContractError(f"flat_to_2d requires i >= 0 and n >= 1, got i={i}, n={n}")
    return i // n, i % n


def _check_dims(x, mask: Mask) -> None:
    shape = x.shape
    if len(shape) < 2 or shape[-2] != mask.rows or shape[-1] != mask.cols:
        raise ShapeError(
            f"mask is {mask.rows}x{mask.cols} but input trailing dims are {shape}"
        )


def apply_mask(x: Tensor, mask: Mask) -> Tensor:
    """Zero the masked positions; all other values pass through unchanged.

    Accepts any leading batch dims before the trailing (rows, cols).
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    _check_dims(x, mask)
    return x * Tensor(1.0 - mask.as_matrix())


def apply_reversed_mask(x: Tensor, mask: Mask) -> Tensor:
    """Keep only the masked positions; zero everything else.

    This is the complement selection used to restrict the reconstruction
    loss to the masked elements.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    _check_dims(x, mask)
    return x * Tensor(mask.as_matrix())
