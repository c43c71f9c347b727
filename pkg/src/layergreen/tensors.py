"""Tucker tensors and the separated (CP) dynamic stiffness operator.

The dynamic stiffness over the whole sampling grid is a short sum of
Kronecker-product terms: one small matrix per tensor dimension per term.
Parametric dimensions (slowness, frequency, shear modulus) carry
diagonal factors stored as 1D arrays; the depth dimension carries the
assembled system matrices.  Diagonal trapezoid quadrature weights on the
sampling grid play the role of the parametric mass matrices, which keeps
every parametric factor diagonal and mode systems cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fom import DenseGreensTensor, ForceTensor, SamplingGrid, _mu_sweep_matrices
from .soil import HALFSPACE, SoilProfile
from .thinlayer import GlobalMatrices, HalfspaceImpedance, WaveProblem

_ORTHO_TOL = 1e-10


def _apply_factor(factor: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a per-dimension factor (1D = diagonal, 2D = dense) to a vector."""
    if factor.ndim == 1:
        return factor * x
    return factor @ x


def _apply_along(factor: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    """Apply a factor along one axis of a dense array."""
    if factor.ndim == 1:
        shape = [1] * arr.ndim
        shape[axis] = len(factor)
        return arr * factor.reshape(shape)
    moved = np.moveaxis(arr, axis, 0)
    out = np.tensordot(factor, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def _factor_matmul(factor: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Product of a per-dimension factor with a tall matrix of columns."""
    if factor.ndim == 1:
        return factor[:, None] * mat
    return factor @ mat


@dataclass(frozen=True)
class TuckerTensor:
    """Core tensor plus one orthonormal factor matrix per dimension."""

    core: np.ndarray
    factors: tuple[np.ndarray, ...]
    dims: tuple[str, ...]

    def __post_init__(self):
        if self.core.ndim != len(self.factors) or len(self.factors) != len(self.dims):
            raise ValueError("core order, factor count and dim labels must agree")
        for d, (r, u) in enumerate(zip(self.core.shape, self.factors)):
            if u.shape[1] != r:
                raise ValueError(f"factor {d} has {u.shape[1]} columns, core expects {r}")
            gram = u.conj().T @ u
            if np.max(np.abs(gram - np.eye(r))) > _ORTHO_TOL:
                raise ValueError(f"factor {self.dims[d]!r} columns are not orthonormal")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.shape

    def norm(self) -> float:
        """Frobenius norm; equals the core norm for orthonormal factors."""
        return float(np.linalg.norm(self.core))

    def axis(self, dim: str) -> int:
        return self.dims.index(dim)


def tucker_reconstruct(t: TuckerTensor, ranges: tuple[slice, ...] | None = None) -> np.ndarray:
    """Dense multilinear contraction of the core with the factor rows.

    ``ranges`` optionally restricts each dimension to an index slice.
    """
    out = t.core
    for d, u in enumerate(t.factors):
        rows = u if ranges is None else u[ranges[d]]
        if ranges is not None and rows.ndim != 2:
            raise IndexError("ranges must preserve matrix structure")
        out = np.moveaxis(np.tensordot(rows, out, axes=(1, d)), 0, d)
    return out


def tucker_truncate(t: TuckerTensor, ranks: tuple[int, ...]) -> TuckerTensor:
    """Keep the leading columns per dimension and the matching core block.

    The greedy ordering of the columns is preserved; no re-orthogonalization
    is needed.
    """
    if len(ranks) != len(t.dims):
        raise ValueError("need one target rank per dimension")
    for r, full in zip(ranks, t.ranks):
        if r < 1 or r > full:
            raise ValueError(f"target rank {r} outside [1, {full}]")
    core = t.core[tuple(slice(0, r) for r in ranks)]
    factors = tuple(u[:, :r] for u, r in zip(t.factors, ranks))
    return TuckerTensor(core=core.copy(), factors=factors, dims=t.dims)


def rel_frobenius_error(reference: np.ndarray, rom: TuckerTensor,
                        ranks: tuple[int, ...] | None = None) -> float:
    """Relative Frobenius error of a (possibly truncated) Tucker tensor.

    ``|| ref - reconstruct(truncate(rom, ranks)) ||_F / || ref ||_F``
    """
    ref_norm = np.linalg.norm(reference)
    if ref_norm == 0.0:
        raise ValueError("reference tensor has zero norm")
    trunc = rom if ranks is None else tucker_truncate(rom, ranks)
    return float(np.linalg.norm(reference - tucker_reconstruct(trunc)) / ref_norm)


def error_vs_rank(reference: np.ndarray, rom: TuckerTensor) -> list[tuple[int, float]]:
    """Relative Frobenius error for isotropic rank truncations 1..max(R_d).

    Algebraically identical to `rel_frobenius_error` per rank (the factors
    are orthonormal, so norms reduce to core norms) but computed from a
    single projection of the reference onto the factor bases.
    """
    ref_norm2 = float(np.vdot(reference, reference).real)
    if ref_norm2 == 0.0:
        raise ValueError("reference tensor has zero norm")
    proj = reference
    for d, u in enumerate(rom.factors):
        proj = np.moveaxis(np.tensordot(u.conj().T, proj, axes=(1, d)), 0, d)
    out = []
    for r in range(1, max(rom.ranks) + 1):
        cut = tuple(slice(0, min(r, rd)) for rd in rom.ranks)
        g = rom.core[cut]
        cross = np.vdot(proj[cut], g).real
        err2 = max(ref_norm2 - 2.0 * cross + float(np.vdot(g, g).real), 0.0)
        out.append((r, float(np.sqrt(err2 / ref_norm2))))
    return out


def storage_footprint(obj) -> int:
    """Storage of a tensor object in bytes (complex128 scalars).

    Dense arrays count ``16 * prod(N_d)``; Tucker tensors count
    ``16 * (prod(R_d) + sum(N_d R_d))``.
    """
    if isinstance(obj, TuckerTensor):
        return int(obj.core.nbytes + sum(u.nbytes for u in obj.factors))
    if isinstance(obj, DenseGreensTensor):
        return int(obj.values.nbytes)
    if isinstance(obj, np.ndarray):
        return int(obj.nbytes)
    if hasattr(obj, "storage_bytes"):
        return int(obj.storage_bytes())
    raise TypeError(f"no storage rule for {type(obj).__name__}")


@dataclass(frozen=True)
class CPTerm:
    """One Kronecker-product term: a per-dimension factor and a tag naming
    which physical block it came from."""

    factors: dict[str, np.ndarray]
    tag: str


@dataclass(frozen=True)
class CPOperator:
    """Dynamic stiffness as a sum of Kronecker rank-one terms."""

    dims: tuple[str, ...]
    terms: tuple[CPTerm, ...]
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        sizes = self.shape
        for term in self.terms:
            if set(term.factors) != set(self.dims):
                raise ValueError(f"term {term.tag!r} must supply every dimension")
            for dim in self.dims:
                f = term.factors[dim]
                n = f.shape[0]
                if n != sizes[self.dims.index(dim)]:
                    raise ValueError(f"term {term.tag!r} factor {dim!r} has size {n}")

    @property
    def shape(self) -> tuple[int, ...]:
        first = self.terms[0].factors
        return tuple(
            first[d].shape[0] for d in self.dims
        )

    def axis(self, dim: str) -> int:
        return self.dims.index(dim)

    def weighted_force(self, force: ForceTensor) -> dict[str, np.ndarray]:
        """Force factors with the parametric quadrature weights applied,
        consistent with the weighting inside the operator terms."""
        out = {}
        for dim in self.dims:
            f = force.factor(dim)
            w = self.weights.get(dim)
            out[dim] = f if w is None else w * f
        return out


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    """Diagonal trapezoid quadrature weights on a (possibly non-uniform,
    e.g. logarithmic) 1D grid."""
    x = np.asarray(x, dtype=float)
    if len(x) == 1:
        return np.ones(1)
    w = np.empty_like(x)
    w[0] = 0.5 * (x[1] - x[0])
    w[-1] = 0.5 * (x[-1] - x[-2])
    w[1:-1] = 0.5 * (x[2:] - x[:-2])
    return w


def build_operator(
    glob: GlobalMatrices,
    impedance: HalfspaceImpedance | None,
    grid: SamplingGrid,
    profile: SoilProfile | None = None,
) -> CPOperator:
    """Separated dynamic-stiffness operator on the sampling grid.

    Four volumetric terms carry the A, B, G, M blocks with slowness and
    frequency diagonals; a halfspace bottom adds one impedance term per
    distinct boundary-matrix entry (one for SH, three for P-SV using the
    symmetry of the off-diagonal pair).  An active shear-modulus
    dimension splits the A/B/G terms into swept-mu and fixed-lambda
    parts, which requires ``profile`` (uniform material, bedrock bottom).
    """
    px = grid.slowness
    om = grid.omega
    wp = trapezoid_weights(px)
    wo = trapezoid_weights(om)
    dims = ("p_x", "z", "omega")
    weights = {"p_x": wp, "omega": wo}

    has_mu = grid.mu is not None
    if has_mu:
        dims = dims + ("mu",)
        wm = trapezoid_weights(grid.mu)
        weights["mu"] = wm

    def volumetric(tag, zmat, p_diag, o_diag, mu_diag=None):
        factors = {"p_x": p_diag, "z": zmat, "omega": o_diag}
        if has_mu:
            factors["mu"] = wm if mu_diag is None else mu_diag
        return CPTerm(factors=factors, tag=tag)

    terms = []
    if not has_mu:
        terms.append(volumetric("a", glob.a, px**2 * wp, om**2 * wo))
        terms.append(volumetric("b", glob.b, px * wp, om * wo))
        terms.append(volumetric("g", glob.g, wp, wo))
        terms.append(volumetric("m", glob.m, wp, -(om**2) * wo))
    else:
        if profile is None:
            raise ValueError("shear-modulus dimension requires the soil profile")
        parts = _mu_sweep_matrices(glob, profile)
        mu_diag = grid.mu * wm
        for tag, pfac, ofac in (("a", px**2 * wp, om**2 * wo),
                                ("b", px * wp, om * wo),
                                ("g", wp, wo)):
            unit, fixed = parts[tag]
            terms.append(volumetric(f"{tag}_mu", unit, pfac, ofac, mu_diag=mu_diag))
            terms.append(volumetric(f"{tag}_fix", fixed, pfac, ofac))
        terms.append(volumetric("m", glob.m, wp, -(om**2) * wo))

    if glob.bottom == HALFSPACE:
        if impedance is None:
            raise ValueError("halfspace bottom requires an impedance")
        kp = impedance.kp_many(px)
        bd = glob.boundary_dofs
        n = glob.n_dof
        if glob.problem is WaveProblem.SH:
            ez = np.zeros((n, n), dtype=complex)
            ez[bd[0], bd[0]] = 1.0
            terms.append(volumetric("halfspace", ez, kp[:, 0, 0] * wp, om * wo))
        else:
            entries = ((0, 0, "halfspace_xx"), (0, 1, "halfspace_xz"), (1, 1, "halfspace_zz"))
            for i, j, tag in entries:
                ez = np.zeros((n, n), dtype=complex)
                ez[bd[i], bd[j]] = 1.0
                if i != j:
                    ez[bd[j], bd[i]] = 1.0
                terms.append(volumetric(tag, ez, kp[:, i, j] * wp, om * wo))

    return CPOperator(dims=dims, terms=tuple(terms), weights=weights)


def apply_rank_one(op: CPOperator, factors: dict[str, np.ndarray]) -> list[dict[str, np.ndarray]]:
    """Apply the operator to a rank-one tensor without forming it.

    Returns, per term, the per-dimension vectors ``M_d x_d`` whose outer
    products sum to the full result.
    """
    for dim in op.dims:
        n = op.shape[op.axis(dim)]
        if len(factors[dim]) != n:
            raise ValueError(f"factor {dim!r} has length {len(factors[dim])}, expected {n}")
    out = []
    for term in op.terms:
        out.append({dim: _apply_factor(term.factors[dim], factors[dim]) for dim in op.dims})
    return out


def apply_dense(op: CPOperator, x: np.ndarray) -> np.ndarray:
    """Apply the operator to a dense tensor (small grids and tests)."""
    if x.shape != op.shape:
        raise ValueError(f"tensor shape {x.shape} does not match grid {op.shape}")
    out = np.zeros_like(x)
    for term in op.terms:
        y = x
        for d, dim in enumerate(op.dims):
            y = _apply_along(term.factors[dim], y, d)
        out += y
    return out


def dense_matrix(op: CPOperator, max_entries: int = 1_000_000) -> np.ndarray:
    """Materialize the operator as a dense Kronecker-sum matrix (tests)."""
    n = int(np.prod(op.shape))
    if n * n > max_entries:
        raise ValueError(f"grid too large to materialize ({n}^2 entries)")
    out = np.zeros((n, n), dtype=complex)
    for term in op.terms:
        acc = np.ones((1, 1), dtype=complex)
        for dim in op.dims:
            f = term.factors[dim]
            mat = np.diag(f) if f.ndim == 1 else f
            acc = np.kron(acc, mat)
        out += acc
    return out


def _contract_core_except(core: np.ndarray, rows: dict[int, np.ndarray], keep: int) -> np.ndarray:
    """Contract a core with one row vector per dimension except ``keep``."""
    out = core
    # Contract from the highest axis down so axis numbering stays valid.
    for d in sorted(rows, reverse=True):
        out = np.tensordot(out, rows[d], axes=(d, 0))
    return out  # 1D, length R_keep


def mode_system(
    op: CPOperator,
    force: dict[str, np.ndarray],
    trial: dict[str, np.ndarray],
    test: dict[str, np.ndarray],
    residual_basis: tuple[dict[str, np.ndarray], np.ndarray] | None,
    mode: str,
):
    """Projected square system for one dimension of a rank-one update.

    With all factors fixed except dimension ``mode``, the operator and
    right-hand side are contracted through the test factors, leaving the
    ``N_k x N_k`` matrix ``H`` (returned as a 1D diagonal when every
    contributing factor is diagonal) and the vector ``b``.  The right-hand
    side subtracts the operator image of the previous Tucker iterate
    ``residual_basis = (factors_by_dim, core)``, contracted through its
    factor matrices and never densified.

    Raises
    ------
    ValueError
        If every term's scalar coefficient vanishes (degenerate system).
    """
    k = op.axis(mode)
    nk = op.shape[k]

    h_diag = np.zeros(nk, dtype=complex)
    h_dense = None
    any_coeff = False
    for term in op.terms:
        coeff = 1.0 + 0.0j
        for d, dim in enumerate(op.dims):
            if d == k:
                continue
            coeff *= np.vdot(test[dim], _apply_factor(term.factors[dim], trial[dim]))
        if coeff != 0.0:
            any_coeff = True
        fk = term.factors[mode]
        if fk.ndim == 1:
            h_diag += coeff * fk
        else:
            if h_dense is None:
                h_dense = np.zeros((nk, nk), dtype=complex)
            h_dense += coeff * fk
    if not any_coeff:
        raise ValueError(f"degenerate mode system in dimension {mode!r}")
    if h_dense is not None:
        h = h_dense + np.diag(h_diag)
    else:
        h = h_diag

    coeff = 1.0 + 0.0j
    for d, dim in enumerate(op.dims):
        if d == k:
            continue
        coeff *= np.vdot(test[dim], force[dim])
    b = coeff * force[mode]

    if residual_basis is not None:
        factors_by_dim, core = residual_basis
        for term in op.terms:
            rows = {}
            for d, dim in enumerate(op.dims):
                if d == k:
                    continue
                mu_cols = _factor_matmul(term.factors[dim], factors_by_dim[dim])
                rows[d] = test[dim].conj() @ mu_cols
            c = _contract_core_except(core, rows, k)
            b -= _factor_matmul(term.factors[mode], factors_by_dim[mode]) @ c
    return h, b


def reduced_term_matrices(
    op: CPOperator,
    trial_bases: dict[str, np.ndarray],
    test_bases: dict[str, np.ndarray],
) -> list[dict[str, np.ndarray]]:
    """Per-term small matrices ``V_d^H M_d U_d`` for the reduced system."""
    out = []
    for term in op.terms:
        mats = {}
        for dim in op.dims:
            mu_cols = _factor_matmul(term.factors[dim], trial_bases[dim])
            mats[dim] = test_bases[dim].conj().T @ mu_cols
        out.append(mats)
    return out


def apply_reduced(op: CPOperator, red_terms: list[dict[str, np.ndarray]],
                  core: np.ndarray) -> np.ndarray:
    """Apply the reduced (Kronecker-sum) operator to a core tensor."""
    out = np.zeros_like(core)
    for mats in red_terms:
        y = core
        for d, dim in enumerate(op.dims):
            y = _apply_along(mats[dim], y, d)
        out += y
    return out


def operator_image_gram(op: CPOperator, trial_bases: dict[str, np.ndarray]):
    """Per term-pair, per-dim Gram matrices (M U)^H (M' U); used to compute
    residual norms without densifying."""
    images = []
    for term in op.terms:
        images.append({dim: _factor_matmul(term.factors[dim], trial_bases[dim])
                       for dim in op.dims})
    return images


def residual_norm(op: CPOperator, force: dict[str, np.ndarray],
                  trial_bases: dict[str, np.ndarray], core: np.ndarray) -> float:
    """Frobenius norm of F - A(U...U; core), computed structurally."""
    f_norm2 = 1.0
    for dim in op.dims:
        f_norm2 *= float(np.vdot(force[dim], force[dim]).real)

    images = operator_image_gram(op, trial_bases)

    cross = 0.0 + 0.0j
    for img in images:
        rows = {d: force[op.dims[d]].conj() @ img[op.dims[d]] for d in range(len(op.dims))}
        val = core
        for d in sorted(rows, reverse=True):
            val = np.tensordot(val, rows[d], axes=(d, 0))
        cross += val

    quad = 0.0 + 0.0j
    for img_i in images:
        for img_j in images:
            y = core
            for d, dim in enumerate(op.dims):
                gram = img_i[dim].conj().T @ img_j[dim]
                y = _apply_along(gram, y, d)
            quad += np.vdot(core, y)

    val = f_norm2 - 2.0 * cross.real + quad.real
    return float(np.sqrt(max(val, 0.0)))
