"""Bipartite Schmidt decomposition, branch sampling, and entanglement diagnostics.

The decomposition works on the quadrature-weighted coefficient matrix: the
amplitudes are scaled by sqrt(prod dx), reshaped to (left dim, right dim),
and factored by singular value decomposition, so the returned factor states
are orthonormal under the same weighted inner product the rest of the
package uses.  Coefficients are non-negative and descending; near-equal
coefficients are flagged as degenerate groups rather than resolved, since
any rotation inside such a group is an equally valid decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ValidationError
from .hilbert import Space, StateVector

DEGENERACY_TOL = 1e-8
DEFAULT_TRUNC_TOL = 1e-12


@dataclass(frozen=True)
class Bipartition:
    """A two-block cut of a factor space, by label."""

    left: frozenset[str]
    right: frozenset[str]

    def __init__(self, left: Iterable[str], right: Iterable[str]):
        object.__setattr__(self, "left", frozenset(left))
        object.__setattr__(self, "right", frozenset(right))

    def validate(self, space: Space) -> None:
        labels = set(space.labels)
        if not self.left or not self.right:
            raise ValidationError("bipartition needs two non-empty blocks")
        if self.left & self.right:
            raise ValidationError(
                f"bipartition blocks overlap: {sorted(self.left & self.right)}"
            )
        if self.left | self.right != labels:
            raise ValidationError(
                f"bipartition {sorted(self.left)} | {sorted(self.right)} does not "
                f"cover the space {space.labels} exactly"
            )

    def swapped(self) -> "Bipartition":
        return Bipartition(self.right, self.left)


@dataclass(eq=False)
class SchmidtResult:
    """Coefficients with paired orthonormal factor states.

    coefficients are descending and >= trunc_tol; the squared coefficients of
    a normalized input sum to 1 - truncation_residual.  degenerate_groups
    lists index sets whose coefficients agree within the degeneracy tolerance
    (only groups of two or more).
    """

    coefficients: np.ndarray
    left_states: list[StateVector]
    right_states: list[StateVector]
    truncation_residual: float
    degenerate_groups: list[list[int]]
    cut: Bipartition

    @property
    def rank(self) -> int:
        return len(self.coefficients)

    def probabilities(self) -> np.ndarray:
        """Born weights C_j^2 renormalized over the kept coefficients."""
        p = self.coefficients**2
        total = p.sum()
        if total <= 0.0:
            raise ValidationError("decomposition has no weight left")
        return p / total


def _split_axes(space: Space, cut: Bipartition) -> tuple[list[int], list[int]]:
    left_axes = [i for i, f in enumerate(space.factors) if f.label in cut.left]
    right_axes = [i for i, f in enumerate(space.factors) if f.label in cut.right]
    return left_axes, right_axes


def coefficient_matrix(psi: StateVector, cut: Bipartition) -> np.ndarray:
    """Weighted amplitudes reshaped to (left dim, right dim) in space order."""
    cut.validate(psi.space)
    left_axes, right_axes = _split_axes(psi.space, cut)
    amps = np.transpose(psi.amplitudes, left_axes + right_axes)
    l_dim = int(np.prod([psi.space.dims[i] for i in left_axes], initial=1))
    weighted = amps * math.sqrt(psi.space.volume_element)
    return weighted.reshape(l_dim, -1)


def schmidt_decompose(
    psi: StateVector,
    cut: Bipartition,
    trunc_tol: float = DEFAULT_TRUNC_TOL,
    degeneracy_tol: float = DEGENERACY_TOL,
) -> SchmidtResult:
    """Schmidt decomposition of a normalized state across a bipartition.

    Singular values below trunc_tol are dropped and their summed square is
    reported as the truncation residual.  The phase of each left vector is
    fixed by rotating its largest-magnitude amplitude to the positive real
    axis (the inverse phase goes to the right vector), which makes the output
    deterministic for regression tests.
    """
    cut.validate(psi.space)
    if abs(psi.norm - 1.0) > 1e-8:
        raise ValidationError(f"input state is not normalized (norm {psi.norm:.12g})")
    left_axes, right_axes = _split_axes(psi.space, cut)
    matrix = coefficient_matrix(psi, cut)
    u, s, vh = np.linalg.svd(matrix, full_matrices=False)
    keep = s >= trunc_tol
    truncation_residual = float(np.sum(s[~keep] ** 2))
    s = s[keep]
    u = u[:, keep]
    vh = vh[keep, :]

    left_factors = tuple(psi.space.factors[i] for i in left_axes)
    right_factors = tuple(psi.space.factors[i] for i in right_axes)
    left_space = Space(left_factors)
    right_space = Space(right_factors)
    left_scale = 1.0 / math.sqrt(left_space.volume_element)
    right_scale = 1.0 / math.sqrt(right_space.volume_element)

    left_states: list[StateVector] = []
    right_states: list[StateVector] = []
    for j in range(s.size):
        col = u[:, j]
        pivot = col[np.argmax(np.abs(col))]
        phase = pivot / abs(pivot) if abs(pivot) > 0 else 1.0
        left = (col / phase) * left_scale
        right = (vh[j, :] * phase) * right_scale
        left_states.append(StateVector(left_space, left.reshape(left_space.dims)))
        right_states.append(StateVector(right_space, right.reshape(right_space.dims)))

    groups: list[list[int]] = []
    if s.size:
        tol = degeneracy_tol * float(s[0]) if s[0] > 0 else degeneracy_tol
        current = [0]
        for j in range(1, s.size):
            if abs(float(s[j - 1] - s[j])) < tol:
                current.append(j)
            else:
                if len(current) > 1:
                    groups.append(current)
                current = [j]
        if len(current) > 1:
            groups.append(current)

    return SchmidtResult(
        coefficients=s.astype(float),
        left_states=left_states,
        right_states=right_states,
        truncation_residual=truncation_residual,
        degenerate_groups=groups,
        cut=cut,
    )


class BranchSampler:
    """Born-rule sampler over the coefficients of a decomposition.

    Uses the PCG64 bit generator seeded through numpy's SeedSequence; each
    draw consumes exactly one uniform double in [0, 1) and selects the branch
    by inverse CDF over the cumulative squared coefficients.  Identical seeds
    reproduce identical draw sequences; one sampler per thread of use.
    """

    def __init__(self, seed: int):
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def draw(self, result: SchmidtResult) -> int:
        return int(self._draw_indices(result, 1)[0])

    def draw_many(self, result: SchmidtResult, n: int) -> np.ndarray:
        return self._draw_indices(result, n)

    def _draw_indices(self, result: SchmidtResult, n: int) -> np.ndarray:
        if result.rank == 0:
            raise ValidationError("cannot sample from an empty decomposition")
        cdf = np.cumsum(result.probabilities())
        u = self._rng.random(n)
        return np.minimum(np.searchsorted(cdf, u, side="right"), result.rank - 1)


def sample_branch(result: SchmidtResult, rng_seed: int) -> int:
    """Single Born-rule draw with a fresh sampler seeded by rng_seed."""
    return BranchSampler(rng_seed).draw(result)


def entanglement_entropy(result: SchmidtResult) -> float:
    """Von Neumann entropy -sum p ln p of the branch weights; 0 iff rank 1."""
    p = result.probabilities()
    p = p[p > 0.0]
    return float(-np.sum(p * np.log(p)))
