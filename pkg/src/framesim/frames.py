"""Frame transformations, branch ensembles, and density matrices.

Two directions are implemented.  Lifting composes the heavy system's
center-of-mass packet, its internal state, and the light system's state into
one product on the auxiliary frame's space.  The reverse transformation
first contracts the freely evolved center-of-mass packet out of the evolved
composite (a partial projection whose renormalization constant,
overlap_weight, is close to 1 exactly when the product approximation holds),
then expands what remains over Schmidt branches.  The full branch ensemble
carries weights C_j^2; drawing a single branch is the discontinuous,
generally irreversible reduction of the state.

Density matrices are stored in the discrete convention: amplitudes carry a
sqrt(dx) quadrature weight per coordinate factor, so the matrix trace is a
plain sum, eigenvalues are mixing probabilities, and matrices built from
branch ensembles and from partial traces are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import PropagationError, SpaceMismatchError, ValidationError
from .hilbert import (
    Grid,
    GaussianParams,
    Space,
    StateVector,
    make_gaussian,
    tensor_product,
)
from .schmidt import (
    Bipartition,
    SchmidtResult,
    BranchSampler,
    schmidt_decompose,
    DEFAULT_TRUNC_TOL,
)

MIN_OVERLAP_WEIGHT = 1e-6


@dataclass(eq=False)
class BranchEnsemble:
    """Mixed state as (probability, product branch) pairs with provenance."""

    branches: list[tuple[float, StateVector]]
    provenance: SchmidtResult

    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _ in self.branches])


@dataclass(eq=False)
class DensityMatrix:
    """Hermitian unit-trace matrix on a chosen set of factors."""

    labels: tuple[str, ...]
    matrix: np.ndarray
    basis_note: str

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @property
    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def eigenvalues(self) -> np.ndarray:
        """Real eigenvalues in descending order."""
        return np.linalg.eigvalsh(self.matrix)[::-1]

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)


@dataclass(eq=False)
class ExtractionResult:
    """Relative state left after contracting out the center-of-mass packet."""

    state: StateVector
    overlap_weight: float


def lift_to_auxiliary(
    phi_internal: StateVector,
    psi_s: StateVector,
    cm_params: GaussianParams,
    grid_cm: Grid,
    cm_label: str = "A_cm",
) -> StateVector:
    """Product state packet(cm) x internal x light-system, normalized.

    The shipped scenarios choose cm_params centered at zero position and
    momentum, so the auxiliary frame is co-moving with the heavy system and
    the later coordinate relabeling back is the identity.
    """
    phi_cm = make_gaussian(grid_cm, cm_params, cm_label)
    return tensor_product([phi_cm, phi_internal, psi_s]).normalized()


def extract_relative_state(
    psi_composite: StateVector, phi_cm_t: StateVector
) -> ExtractionResult:
    """Contract the center-of-mass packet out of the composite and renormalize.

    Computes the partial inner product <phi_cm_t | psi_composite> over the
    packet's factor.  The norm of the contraction is returned as
    overlap_weight; it approaches 1 when the composite is close to the
    product packet x relative-state.  A weight below 1e-6 means the product
    form has broken down and raises instead of returning garbage.
    """
    if len(phi_cm_t.space.factors) != 1:
        raise ValidationError("phi_cm_t must live on a single factor")
    cm_factor = phi_cm_t.space.factors[0]
    if not psi_composite.space.has(cm_factor.label):
        raise ValidationError(
            f"composite has no factor {cm_factor.label!r}; cannot extract"
        )
    if psi_composite.space.factor(cm_factor.label) != cm_factor:
        raise SpaceMismatchError(
            f"factor {cm_factor.label!r} differs between composite and packet"
        )
    axis = psi_composite.space.axis(cm_factor.label)
    weight = cm_factor.grid.dx if cm_factor.is_coordinate else 1.0
    amps = np.tensordot(
        phi_cm_t.amplitudes.conj(), psi_composite.amplitudes, axes=([0], [axis])
    )
    amps = amps * weight
    rest = Space(
        tuple(f for f in psi_composite.space.factors if f.label != cm_factor.label)
    )
    raw = StateVector(rest, amps)
    overlap_weight = raw.norm
    if overlap_weight < MIN_OVERLAP_WEIGHT:
        raise PropagationError(
            f"overlap weight {overlap_weight:.3e} vanished; the product "
            "approximation has broken down"
        )
    return ExtractionResult(raw.normalized(), float(overlap_weight))


def transform_to_intrinsic(
    psi1: StateVector,
    cut: Bipartition,
    seed: int | None = None,
    trunc_tol: float = DEFAULT_TRUNC_TOL,
):
    """Expand a relative state over Schmidt branches across the given cut.

    With seed=None, returns the full BranchEnsemble: every branch is the
    normalized product of paired factor states, weighted by its squared
    coefficient.  With an integer seed, one branch is drawn by its Born
    weight and (index, branch state) is returned; this single-branch
    reduction is discontinuous and cannot in general be undone.
    """
    result = schmidt_decompose(psi1, cut, trunc_tol=trunc_tol)
    probs = result.probabilities()
    branches = [
        (float(probs[j]), tensor_product([result.left_states[j], result.right_states[j]]))
        for j in range(result.rank)
    ]
    ensemble = BranchEnsemble(branches, result)
    if seed is None:
        return ensemble
    index = BranchSampler(seed).draw(result)
    return index, ensemble.branches[index][1]


def _weighted_vector(state: StateVector, keep: Sequence[str]) -> np.ndarray:
    """Reshape to (keep dim, rest dim) with sqrt-quadrature weights applied."""
    space = state.space
    keep_axes = [i for i, f in enumerate(space.factors) if f.label in set(keep)]
    rest_axes = [i for i in range(len(space.factors)) if i not in keep_axes]
    amps = np.transpose(state.amplitudes, keep_axes + rest_axes)
    k_dim = int(np.prod([space.dims[i] for i in keep_axes], initial=1))
    return amps.reshape(k_dim, -1) * math.sqrt(space.volume_element)


def _kept_labels(space: Space, keep: Sequence[str]) -> tuple[str, ...]:
    keep_set = set(keep)
    missing = keep_set - set(space.labels)
    if missing:
        raise ValidationError(f"kept factors {sorted(missing)} not in {space.labels}")
    return tuple(lab for lab in space.labels if lab in keep_set)


def _basis_note(space: Space, kept: Sequence[str]) -> str:
    parts = []
    for lab in kept:
        f = space.factor(lab)
        if f.is_coordinate:
            parts.append(f"{lab}: position grid ({f.dim} pts, sqrt(dx) weighted)")
        else:
            parts.append(f"{lab}: level basis ({f.dim})")
    return "; ".join(parts)


def mixed_density_matrix(ensemble: BranchEnsemble, keep: Sequence[str]) -> DensityMatrix:
    """rho = sum_j p_j |psi_j,keep><psi_j,keep| over the ensemble branches.

    Every branch must factor across (keep | rest); the kept pure component is
    recovered by a rank-1 factorization of the branch and a residual above
    1e-10 is an error rather than silently mixing in the remainder.
    """
    if not ensemble.branches:
        raise ValidationError("ensemble has no branches")
    space = ensemble.branches[0][1].space
    kept = _kept_labels(space, keep)
    if len(kept) == len(space.labels):
        raise ValidationError("keep must be a proper subset of the branch factors")
    dim = int(np.prod([space.factor(lab).dim for lab in kept]))
    rho = np.zeros((dim, dim), dtype=np.complex128)
    for prob, branch in ensemble.branches:
        matrix = _weighted_vector(branch, kept)
        u, s, _ = np.linalg.svd(matrix, full_matrices=False)
        total = float(np.sum(s**2))
        if total <= 0.0 or 1.0 - s[0] ** 2 / total > 1e-10:
            raise ValidationError(
                f"branch does not factor across kept labels {sorted(keep)}"
            )
        vec = u[:, 0] * s[0] / math.sqrt(total)
        rho += prob * np.outer(vec, vec.conj())
    return DensityMatrix(kept, rho, _basis_note(space, kept))


def reduced_density_matrix(psi: StateVector, keep: Sequence[str]) -> DensityMatrix:
    """Partial trace of |psi><psi| over the complement of the kept factors."""
    kept = _kept_labels(psi.space, keep)
    if not kept or len(kept) == len(psi.space.labels):
        raise ValidationError("keep must be a proper non-empty subset of the factors")
    matrix = _weighted_vector(psi, kept)
    rho = matrix @ matrix.conj().T
    return DensityMatrix(kept, rho, _basis_note(psi.space, kept))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """(1/2) sum |eigenvalues of (a - b)|."""
    if a.labels != b.labels or a.matrix.shape != b.matrix.shape:
        raise ValidationError(
            f"density matrices are not comparable: {a.labels}/{a.matrix.shape} "
            f"vs {b.labels}/{b.matrix.shape}"
        )
    diff = a.matrix - b.matrix
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))
