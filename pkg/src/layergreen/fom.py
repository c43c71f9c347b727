"""Full-order Green's tensor: direct solves on the sampling grid.

Every (slowness, frequency[, shear-modulus]) sample is an independent
banded solve of the dynamic stiffness system, so the full-order model
doubles as the reference for reduced-order errors.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .soil import HALFSPACE, SoilProfile, complex_lame
from .thinlayer import (
    GlobalMatrices,
    HalfspaceImpedance,
    LayerMesh,
    WaveProblem,
    assemble_global,
)

_COMPONENTS = {
    "yy": ("y", 0),
    "xx": ("x", 0),
    "zx": ("x", 1),
    "xz": ("z", 0),
    "zz": ("z", 1),
}


@dataclass(frozen=True)
class SamplingGrid:
    """Per-dimension 1D sample vectors of the Green's tensor.

    Frequencies are in Hz and strictly increasing with ``freq[0] > 0``
    (the static sample is excluded); slowness values are in s/m.  The
    depth vector holds the free mesh node depths.  ``mu`` is the optional
    real shear-modulus sweep.  The source is fixed at (x_s, z_s).
    """

    freq: np.ndarray
    slowness: np.ndarray
    depth: np.ndarray
    x: np.ndarray
    source: tuple[float, float] = (0.0, 0.0)
    mu: np.ndarray | None = None
    log_slowness: bool = True
    cs_ref: float | None = None

    def __post_init__(self):
        freq = np.asarray(self.freq, dtype=float)
        slow = np.asarray(self.slowness, dtype=float)
        object.__setattr__(self, "freq", freq)
        object.__setattr__(self, "slowness", slow)
        object.__setattr__(self, "depth", np.asarray(self.depth, dtype=float))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if self.mu is not None:
            object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        if freq.size == 0 or freq[0] <= 0.0:
            raise ValueError("frequency grid must start above zero")
        if np.any(np.diff(freq) <= 0.0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(slow < 0.0) or np.any(np.diff(slow) <= 0.0):
            raise ValueError("slowness samples must be non-negative and increasing")

    @property
    def omega(self) -> np.ndarray:
        return 2.0 * np.pi * self.freq

    @property
    def shape(self) -> tuple[int, ...]:
        base = (len(self.slowness), len(self.depth), len(self.freq))
        return base if self.mu is None else base + (len(self.mu),)

    @property
    def kbar(self) -> np.ndarray:
        """Dimensionless wavenumber p_x * Cs_ref (requires cs_ref)."""
        if self.cs_ref is None:
            raise ValueError("grid has no reference shear speed")
        return self.slowness * self.cs_ref


@dataclass(frozen=True)
class ForceTensor:
    """Rank-one separated load: unit nodal force, flat in all parameters.

    The wavenumber transform of the Dirac line load is unity, so the
    slowness, frequency and shear-modulus factors are all-ones; the depth
    factor is the unit vector at the source DOF.
    """

    direction: str
    factors: dict[str, np.ndarray]
    source_dof: int

    def factor(self, dim: str) -> np.ndarray:
        return self.factors[dim]


def build_force(grid: SamplingGrid, mesh: LayerMesh, direction: str) -> ForceTensor:
    """Separated force factors for a unit pulse load at the grid source."""
    node = mesh.node_at_depth(grid.source[1])
    dof = mesh.dof_index(node, direction)
    n_dof = mesh.n_dof
    fz = np.zeros(n_dof, dtype=complex)
    fz[dof] = 1.0
    factors = {
        "p_x": np.ones(len(grid.slowness), dtype=complex),
        "z": fz,
        "omega": np.ones(len(grid.freq), dtype=complex),
    }
    if grid.mu is not None:
        factors["mu"] = np.ones(len(grid.mu), dtype=complex)
    return ForceTensor(direction=direction, factors=factors, source_dof=dof)


@dataclass
class DenseGreensTensor:
    """Full-order Green's tensor on the sampling grid.

    ``values[i_dir, i_px, i_dof, i_freq(, i_mu)]`` is the displacement at
    a mesh DOF due to a unit load in ``directions[i_dir]``.  Use
    `component` to slice out a named displacement component.
    """

    values: np.ndarray
    grid: SamplingGrid
    problem: WaveProblem
    directions: tuple[str, ...]

    def component(self, name: str) -> np.ndarray:
        """Displacement component, e.g. 'zz' = vertical response to a
        vertical load, indexed (slowness, node, freq[, mu])."""
        try:
            direction, offset = _COMPONENTS[name]
        except KeyError:
            raise ValueError(f"unknown component {name!r}") from None
        if direction not in self.directions:
            raise ValueError(f"component {name!r} needs a {direction!r}-direction load")
        idir = self.directions.index(direction)
        step = self.problem.dofs_per_node
        return self.values[idir, :, offset::step]

    def direction_values(self, direction: str) -> np.ndarray:
        return self.values[self.directions.index(direction)]

    @property
    def nbytes_dense(self) -> int:
        return int(self.values.nbytes)


# Banded storage helpers: the thin-layer matrices couple only adjacent
# nodes, so K has bandwidth dofs_per_node*2 - 1.


def _to_banded(mat: np.ndarray, bw: int) -> np.ndarray:
    n = mat.shape[0]
    ab = np.zeros((2 * bw + 1, n), dtype=complex)
    for diag in range(-bw, bw + 1):
        sl = np.diagonal(mat, offset=diag)
        if diag >= 0:
            ab[bw - diag, diag:] = sl
        else:
            ab[bw - diag, : n + diag] = sl
    return ab


class _SampleSolver:
    """Factifies per-sample banded K assembly and solves K u = f."""

    def __init__(self, glob: GlobalMatrices, impedance: HalfspaceImpedance | None):
        self.glob = glob
        self.impedance = impedance
        d = glob.problem.dofs_per_node
        self.bw = 2 * d - 1
        self.ab_a = _to_banded(glob.a, self.bw)
        self.ab_b = _to_banded(glob.b, self.bw)
        self.ab_g = _to_banded(glob.g, self.bw)
        self.ab_m = _to_banded(glob.m, self.bw)
        self.n = glob.n_dof
        self._bdofs = glob.boundary_dofs

    def with_moduli(self, a, b, g) -> "_SampleSolver":
        out = object.__new__(_SampleSolver)
        out.glob = self.glob
        out.impedance = self.impedance
        out.bw = self.bw
        out.ab_a = _to_banded(a, self.bw)
        out.ab_b = _to_banded(b, self.bw)
        out.ab_g = _to_banded(g, self.bw)
        out.ab_m = self.ab_m
        out.n = self.n
        out._bdofs = self._bdofs
        return out

    def solve(self, px: float, omega: float, rhs: np.ndarray) -> np.ndarray:
        kx = px * omega
        ab = kx * kx * self.ab_a + kx * self.ab_b + self.ab_g - omega * omega * self.ab_m
        if self.impedance is not None:
            kp = self.impedance.kp(px)
            for ii, gi in enumerate(self._bdofs):
                for jj, gj in enumerate(self._bdofs):
                    ab[self.bw + gi - gj, gj] += omega * kp[ii, jj]
        try:
            return solve_banded((self.bw, self.bw), ab, rhs)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"singular dynamic stiffness at sample p_x={px}, f={omega / (2 * np.pi)} Hz"
            ) from exc


def _mu_sweep_matrices(glob: GlobalMatrices, profile: SoilProfile):
    """Unit-mu and fixed-lambda parts for a shear-modulus sweep.

    Requires a uniform material over the finite layers with equal shear
    and volumetric damping (so the fixed Lame constant lambda* does not
    depend on the swept mu) and a bedrock bottom.
    """
    if glob.bottom == HALFSPACE:
        raise ValueError("shear-modulus sweep supports bedrock profiles only")
    lay0 = profile.layers[0]
    for lay in profile.layers:
        if (lay.cs, lay.cp, lay.beta_s, lay.beta_p, lay.rho) != (
            lay0.cs, lay0.cp, lay0.beta_s, lay0.beta_p, lay0.rho,
        ):
            raise ValueError("shear-modulus sweep requires a uniform profile")
    if lay0.beta_s != lay0.beta_p:
        raise ValueError(
            "shear-modulus sweep requires beta_s == beta_p so the fixed Lame "
            "constant is independent of mu"
        )
    damp = 1.0 + 2.0j * lay0.beta_s
    mu_star0 = complex_lame(lay0).mu_star
    parts = {}
    for key in "abg":
        unit = getattr(glob, f"{key}_mu") * damp
        fixed = getattr(glob, key) - mu_star0 * getattr(glob, f"{key}_mu")
        parts[key] = (unit, fixed)
    return parts


def solve_fom(
    profile: SoilProfile,
    mesh: LayerMesh,
    grid: SamplingGrid,
    directions: tuple[str, ...] | None = None,
    workers: int = 1,
) -> DenseGreensTensor:
    """Solve the dynamic stiffness system at every grid sample.

    Results are deterministic and independent of ``workers``: threads
    write disjoint slowness slices of the output tensor.
    """
    if not np.array_equal(grid.depth, mesh.free_depths):
        raise ValueError("grid depth vector must match the mesh free nodes")
    if directions is None:
        directions = ("y",) if mesh.problem is WaveProblem.SH else ("x", "z")

    glob = assemble_global(profile, mesh)
    impedance = None
    if profile.bottom == HALFSPACE:
        impedance = HalfspaceImpedance(mesh.problem, profile.halfspace)
    base = _SampleSolver(glob, impedance)

    rhs = np.zeros((mesh.n_dof, len(directions)), dtype=complex)
    for j, direction in enumerate(directions):
        rhs[build_force(grid, mesh, direction).source_dof, j] = 1.0

    n_px, n_f = len(grid.slowness), len(grid.freq)
    mu_vals = (None,) if grid.mu is None else tuple(grid.mu)
    shape = (len(directions), n_px, mesh.n_dof, n_f) + (() if grid.mu is None else (len(mu_vals),))
    values = np.empty(shape, dtype=complex)
    omegas = grid.omega

    solvers = []
    if grid.mu is None:
        solvers.append(base)
    else:
        parts = _mu_sweep_matrices(glob, profile)
        damp = 1.0 + 2.0j * profile.layers[0].beta_s
        for mu in grid.mu:
            mu_star = mu * damp
            a = mu_star * glob.a_mu + parts["a"][1]
            b = mu_star * glob.b_mu + parts["b"][1]
            g = mu_star * glob.g_mu + parts["g"][1]
            solvers.append(base.with_moduli(a, b, g))

    def run_block(ipx: int) -> None:
        px = grid.slowness[ipx]
        for im, solver in enumerate(solvers):
            for jf in range(n_f):
                try:
                    sol = solver.solve(px, omegas[jf], rhs)
                except np.linalg.LinAlgError as exc:
                    extra = "" if grid.mu is None else f", mu={grid.mu[im]}"
                    raise np.linalg.LinAlgError(f"{exc}{extra}") from exc
                if grid.mu is None:
                    values[:, ipx, :, jf] = sol.T
                else:
                    values[:, ipx, :, jf, im] = sol.T

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_block, range(n_px)))
    else:
        for ipx in range(n_px):
            run_block(ipx)

    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite entries in the Green's tensor")
    return DenseGreensTensor(values=values, grid=grid, problem=mesh.problem,
                             directions=tuple(directions))


def clamped_layer_sh_surface(layer, omega: float) -> complex:
    """Analytic SH surface response of a clamped uniform layer at k_x = 0.

    Independent closed form ``u(0) = tan(k* h) / (mu* k*)`` with
    ``k* = omega / Cs*``; serves as the oracle for the thin-layer model.
    """
    moduli = complex_lame(layer)
    cs_star = np.sqrt(moduli.mu_star / layer.rho)
    k_star = omega / cs_star
    return np.tan(k_star * layer.thickness) / (moduli.mu_star * k_star)
