"""Thin-layer finite elements for layered soils.

Depth is discretized with linear two-node elements, yielding global
matrices ``A``, ``B``, ``G``, ``M`` that do not depend on wavenumber or
frequency.  The per-sample dynamic stiffness is

    K(p_x, omega) = (p_x w)^2 A + (p_x w) B + G - w^2 M  [+ w Kp(p_x)]

with the halfspace impedance ``Kp`` added on the bottom-node block when
the profile rests on a halfspace instead of rigid bedrock.

Sign conventions: the z-axis points down, nodes are ordered by
increasing depth, and P-SV DOFs are ordered (u_x, u_z) per node.
Vertical DOFs carry an implicit factor i (the classic symmetrization of
the thin-layer method), which makes ``B`` and the halfspace impedance
complex-symmetric and keeps all coefficients of K real in (p_x, omega).
Same-direction response components (yy, xx, zz) are unaffected by this
scaling; cross components (xz, zx) carry a known factor +/- i relative
to the unscaled convention.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .soil import BEDROCK, HALFSPACE, ComplexModuli, Layer, SoilProfile, complex_lame


class WaveProblem(enum.Enum):
    """Out-of-plane (SH) or in-plane (P-SV) wave motion."""

    SH = "sh"
    PSV = "psv"

    @property
    def dofs_per_node(self) -> int:
        return 1 if self is WaveProblem.SH else 2


def element_matrices_psv(moduli: ComplexModuli, rho: float, h: float):
    """Thin-layer element matrices for the P-SV problem.

    DOF order is (u_x, u_z) for the top node, then the bottom node.
    ``A``, ``B``, ``G`` are complex-symmetric in the scaled-vertical-DOF
    convention; ``M`` is the real consistent mass matrix.

    Returns
    -------
    (a, b, g, m) : tuple of (4, 4) ndarray
    """
    if not h > 0.0:
        raise ValueError(f"element thickness must be positive, got {h}")
    mu = moduli.mu_star
    la = moduli.lambda_star
    pm = la + 2.0 * mu

    a = (h / 6.0) * np.array(
        [
            [2.0 * pm, 0.0, pm, 0.0],
            [0.0, 2.0 * mu, 0.0, mu],
            [pm, 0.0, 2.0 * pm, 0.0],
            [0.0, mu, 0.0, 2.0 * mu],
        ],
        dtype=complex,
    )
    b = 0.5 * np.array(
        [
            [0.0, la - mu, 0.0, -(la + mu)],
            [la - mu, 0.0, la + mu, 0.0],
            [0.0, la + mu, 0.0, mu - la],
            [-(la + mu), 0.0, mu - la, 0.0],
        ],
        dtype=complex,
    )
    g = (1.0 / h) * np.array(
        [
            [mu, 0.0, -mu, 0.0],
            [0.0, pm, 0.0, -pm],
            [-mu, 0.0, mu, 0.0],
            [0.0, -pm, 0.0, pm],
        ],
        dtype=complex,
    )
    m = (rho * h / 6.0) * np.array(
        [
            [2.0, 0.0, 1.0, 0.0],
            [0.0, 2.0, 0.0, 1.0],
            [1.0, 0.0, 2.0, 0.0],
            [0.0, 1.0, 0.0, 2.0],
        ],
        dtype=complex,
    )
    return a, b, g, m


def element_matrices_sh(moduli: ComplexModuli, rho: float, h: float):
    """Thin-layer element matrices for the SH problem (one DOF per node).

    The x/z coupling operator vanishes for SH motion, so ``B`` is zero.
    """
    if not h > 0.0:
        raise ValueError(f"element thickness must be positive, got {h}")
    mu = moduli.mu_star
    pair = np.array([[2.0, 1.0], [1.0, 2.0]], dtype=complex)
    a = (mu * h / 6.0) * pair
    b = np.zeros((2, 2), dtype=complex)
    g = (mu / h) * np.array([[1.0, -1.0], [-1.0, 1.0]], dtype=complex)
    m = (rho * h / 6.0) * pair
    return a, b, g, m


@dataclass(frozen=True)
class LayerMesh:
    """Depth discretization with element-to-layer material mapping.

    Element boundaries coincide with layer interfaces and the element
    thickness satisfies ``h_e <= lambda_s,min / elements_per_wavelength``
    at the maximum analysis frequency.
    """

    node_depths: np.ndarray
    elem_layer: np.ndarray
    problem: WaveProblem
    bottom: str
    max_frequency: float

    @property
    def n_nodes(self) -> int:
        return len(self.node_depths)

    @property
    def n_elements(self) -> int:
        return len(self.elem_layer)

    @property
    def n_free_nodes(self) -> int:
        """Nodes carrying DOFs after the bottom boundary condition."""
        return self.n_nodes - 1 if self.bottom == BEDROCK else self.n_nodes

    @property
    def n_dof(self) -> int:
        return self.n_free_nodes * self.problem.dofs_per_node

    @property
    def free_depths(self) -> np.ndarray:
        return self.node_depths[: self.n_free_nodes]

    def element_thickness(self, e: int) -> float:
        return float(self.node_depths[e + 1] - self.node_depths[e])

    def node_at_depth(self, z: float, tol: float = 1e-9) -> int:
        """Index of the mesh node at depth ``z``; the depth must coincide
        with a node (sources are never interpolated)."""
        idx = int(np.argmin(np.abs(self.node_depths - z)))
        if abs(self.node_depths[idx] - z) > tol * max(1.0, abs(z)):
            raise ValueError(f"depth {z} m is not a mesh node")
        return idx

    def dof_index(self, node: int, direction: str) -> int:
        """Global free-DOF index of (node, direction).

        ``direction`` is 'y' for SH, 'x' or 'z' for P-SV.
        """
        if node >= self.n_free_nodes:
            raise ValueError(
                f"node {node} carries no DOF (fixed by the bedrock condition)"
            )
        d = self.problem.dofs_per_node
        if self.problem is WaveProblem.SH:
            if direction != "y":
                raise ValueError(f"SH supports direction 'y', got {direction!r}")
            return node
        offset = {"x": 0, "z": 1}.get(direction)
        if offset is None:
            raise ValueError(f"P-SV supports directions 'x'/'z', got {direction!r}")
        return node * d + offset


def build_mesh(
    profile: SoilProfile,
    problem: WaveProblem,
    f_max: float,
    elements_per_wavelength: float = 10.0,
    h_max: float | None = None,
) -> LayerMesh:
    """Discretize the finite layers of a profile into thin elements.

    The target element size is ``min(Cs) / f_max / elements_per_wavelength``
    (optionally capped by ``h_max``); each layer is split uniformly so
    that interfaces stay on element boundaries.
    """
    if f_max <= 0.0:
        raise ValueError("maximum analysis frequency must be positive")
    lam_min = profile.cs_min / f_max
    h_rule = lam_min / elements_per_wavelength
    h_target = h_rule if h_max is None else min(h_max, h_rule)

    depths = [0.0]
    elem_layer = []
    z0 = 0.0
    for li, lay in enumerate(profile.layers):
        n_e = max(1, math.ceil(lay.thickness / h_target - 1e-12))
        edges = z0 + lay.thickness * np.arange(1, n_e + 1) / n_e
        depths.extend(edges.tolist())
        elem_layer.extend([li] * n_e)
        z0 += lay.thickness

    return LayerMesh(
        node_depths=np.asarray(depths),
        elem_layer=np.asarray(elem_layer, dtype=int),
        problem=problem,
        bottom=profile.bottom,
        max_frequency=f_max,
    )


@dataclass(frozen=True)
class GlobalMatrices:
    """Assembled wavenumber/frequency-independent system matrices.

    ``a``, ``b``, ``g`` carry the actual complex moduli; ``m`` is real.
    The unit-parameter parts (``a_mu`` at (mu, lambda) = (1, 0), ``a_la``
    at (0, 1), and likewise for b and g) expose the linear dependence on
    the Lame constants, so ``a = mu*a_mu + la*a_la`` whenever all layers
    share the moduli (mu, la).
    """

    a: np.ndarray
    b: np.ndarray
    g: np.ndarray
    m: np.ndarray
    a_mu: np.ndarray
    a_la: np.ndarray
    b_mu: np.ndarray
    b_la: np.ndarray
    g_mu: np.ndarray
    g_la: np.ndarray
    problem: WaveProblem
    bottom: str

    @property
    def n_dof(self) -> int:
        return self.a.shape[0]

    @property
    def boundary_dofs(self) -> np.ndarray:
        """Free-DOF indices of the bottom node (empty for bedrock)."""
        if self.bottom == BEDROCK:
            return np.array([], dtype=int)
        d = self.problem.dofs_per_node
        return np.arange(self.n_dof - d, self.n_dof)


def _element_matrices(problem: WaveProblem, moduli: ComplexModuli, rho: float, h: float):
    if problem is WaveProblem.SH:
        return element_matrices_sh(moduli, rho, h)
    return element_matrices_psv(moduli, rho, h)


def assemble_global(profile: SoilProfile, mesh: LayerMesh) -> GlobalMatrices:
    """Assemble global matrices with the bottom boundary condition applied.

    For a bedrock bottom the rows/columns of the DOFs at z = h are
    eliminated; for a halfspace bottom all DOFs are retained and the
    impedance is added per sample by `dynamic_stiffness`.
    """
    if mesh.bottom != profile.bottom:
        raise ValueError(
            f"mesh bottom {mesh.bottom!r} does not match profile {profile.bottom!r}"
        )
    if mesh.elem_layer.max() >= len(profile.layers):
        raise ValueError("mesh references a layer missing from the profile")

    d = mesh.problem.dofs_per_node
    n_full = mesh.n_nodes * d
    full = {key: np.zeros((n_full, n_full), dtype=complex) for key in "abgm"}
    unit = {key: np.zeros((n_full, n_full), dtype=complex) for key in
            ("a_mu", "a_la", "b_mu", "b_la", "g_mu", "g_la")}

    unit_mu = ComplexModuli(mu_star=1.0 + 0.0j, lambda_star=0.0j)
    unit_la = ComplexModuli(mu_star=0.0j, lambda_star=1.0 + 0.0j)

    for e in range(mesh.n_elements):
        lay = profile.layers[mesh.elem_layer[e]]
        h_e = mesh.element_thickness(e)
        sl = slice(e * d, (e + 2) * d)

        ae, be, ge, me = _element_matrices(mesh.problem, complex_lame(lay), lay.rho, h_e)
        full["a"][sl, sl] += ae
        full["b"][sl, sl] += be
        full["g"][sl, sl] += ge
        full["m"][sl, sl] += me

        am, bm, gm, _ = _element_matrices(mesh.problem, unit_mu, lay.rho, h_e)
        al, bl, gl, _ = _element_matrices(mesh.problem, unit_la, lay.rho, h_e)
        unit["a_mu"][sl, sl] += am
        unit["b_mu"][sl, sl] += bm
        unit["g_mu"][sl, sl] += gm
        unit["a_la"][sl, sl] += al
        unit["b_la"][sl, sl] += bl
        unit["g_la"][sl, sl] += gl

    n_free = mesh.n_free_nodes * d
    keep = slice(0, n_free)
    return GlobalMatrices(
        a=full["a"][keep, keep],
        b=full["b"][keep, keep],
        g=full["g"][keep, keep],
        m=full["m"][keep, keep],
        a_mu=unit["a_mu"][keep, keep],
        a_la=unit["a_la"][keep, keep],
        b_mu=unit["b_mu"][keep, keep],
        b_la=unit["b_la"][keep, keep],
        g_mu=unit["g_mu"][keep, keep],
        g_la=unit["g_la"][keep, keep],
        problem=mesh.problem,
        bottom=mesh.bottom,
    )


class HalfspaceImpedance:
    """Frequency-scaled stiffness of the homogeneous halfspace below z = h.

    ``kp(p_x)`` returns the slowness-dependent matrix; the full surface
    stiffness is ``K_s = omega * kp(p_x)``.  Square roots are taken on
    the principal branch; with hysteretic damping the radicands stay off
    the negative real axis, which selects decaying/radiating waves.
    """

    def __init__(self, problem: WaveProblem, layer: Layer):
        if not layer.is_halfspace:
            raise ValueError("impedance requires the unbounded bottom layer")
        self.problem = problem
        self.layer = layer
        moduli = complex_lame(layer)
        self._mu = moduli.mu_star
        self._cs2 = moduli.mu_star / layer.rho
        self._cp2 = moduli.p_modulus / layer.rho

    @property
    def size(self) -> int:
        return self.problem.dofs_per_node

    def kp(self, px: float) -> np.ndarray:
        return self.kp_many(np.asarray([px]))[0]

    def kp_many(self, px: np.ndarray) -> np.ndarray:
        """Vectorized impedance, shape (len(px), d, d)."""
        px = np.asarray(px, dtype=float)
        if np.any(px < 0.0):
            raise ValueError("slowness must be non-negative")
        qs = np.sqrt(px.astype(complex) ** 2 - 1.0 / self._cs2)
        if self.problem is WaveProblem.SH:
            return (self._mu * qs)[:, None, None]

        qp = np.sqrt(px.astype(complex) ** 2 - 1.0 / self._cp2)
        xi = 2.0 * self._cs2 * (px**2 - qp * qs)
        if np.any(xi == 0.0):
            bad = px[np.nonzero(xi == 0.0)[0][0]]
            raise ValueError(
                f"halfspace impedance singular at p_x={bad}: Rayleigh pole on the "
                "real axis; use nonzero material damping"
            )
        off = px * (1.0 - xi)
        out = np.empty((len(px), 2, 2), dtype=complex)
        out[:, 0, 0] = qp
        out[:, 0, 1] = off
        out[:, 1, 0] = off
        out[:, 1, 1] = qs
        out *= (2.0 * self._mu / xi)[:, None, None]
        return out


def halfspace_impedance(problem: WaveProblem, halfspace: Layer, px: float) -> np.ndarray:
    """Halfspace stiffness matrix ``Kp`` at one slowness sample.

    SH gives the 1x1 matrix ``mu* sqrt(p_x^2 - 1/Cs*^2)``; P-SV gives the
    symmetric 2x2 matrix with diagonal ``sqrt(p_x^2 - 1/Cp*^2)``,
    ``sqrt(p_x^2 - 1/Cs*^2)`` and off-diagonal ``p_x (1 - xi)``, all
    scaled by ``2 mu* / xi``.
    """
    return HalfspaceImpedance(problem, halfspace).kp(px)


def dynamic_stiffness(
    glob: GlobalMatrices,
    impedance: HalfspaceImpedance | None,
    px: float,
    omega: float,
) -> np.ndarray:
    """Per-sample dynamic stiffness K(p_x, omega).

    ``K = (p_x w)^2 A + (p_x w) B + G - w^2 M`` plus ``w Kp(p_x)`` on the
    bottom-node block when the profile rests on a halfspace.
    """
    if omega <= 0.0:
        raise ValueError(f"omega must be positive, got {omega}")
    kx = px * omega
    k = kx * kx * glob.a + kx * glob.b + glob.g - omega * omega * glob.m
    if glob.bottom == HALFSPACE:
        if impedance is None:
            raise ValueError("halfspace bottom requires an impedance")
        bd = glob.boundary_dofs
        k[np.ix_(bd, bd)] += omega * impedance.kp(px)
    return k
