"""Box grids, staggered (MAC) fields and finite-difference operators.

Array layout: axis ``k`` of every array is the ``k``-th spatial direction
(index ``[i, j]`` means x-index ``i``, y-index ``j``). Scalars live at cell
centres (shape ``grid.shape``); velocity component ``a`` lives on the faces
normal to axis ``a`` (shape ``grid.shape`` with ``n_a + 1`` along ``a``).
Shear strains live on "edges" (in 2D: cell corners), with ``n + 1`` points
along both axes of the pair.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property, reduce

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    shape: tuple
    lengths: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        lengths = tuple(float(L) for L in self.lengths)
        if len(shape) not in (2, 3) or len(lengths) != len(shape):
            raise ValueError("grid must be 2D or 3D with one length per axis")
        if min(shape) < 4:
            raise ValueError(f"need at least 4 cells per axis, got {shape}")
        if not all(L > 0 and np.isfinite(L) for L in lengths):
            raise ValueError(f"domain lengths must be positive, got {lengths}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def box(cls, nx, ny, lx=1.0, ly=1.0, nz=None, lz=1.0):
        if nz is None:
            return cls((nx, ny), (lx, ly))
        return cls((nx, ny, nz), (lx, ly, lz))

    @property
    def dim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def face_shape(self, axis):
        s = list(self.shape)
        s[axis] += 1
        return tuple(s)

    def edge_shape(self, a, b):
        s = list(self.shape)
        s[a] += 1
        s[b] += 1
        return tuple(s)

    def _axis_coords(self, axis, staggered):
        h = self.spacing[axis]
        n = self.shape[axis]
        return np.arange(n + 1) * h if staggered else (np.arange(n) + 0.5) * h

    def cell_centers(self):
        return np.meshgrid(*[self._axis_coords(k, False) for k in range(self.dim)], indexing="ij")

    def face_centers(self, axis):
        axes = [self._axis_coords(k, k == axis) for k in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij")

    def edge_centers(self, a, b):
        axes = [self._axis_coords(k, k in (a, b)) for k in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij")

    def nodes(self):
        return np.meshgrid(*[self._axis_coords(k, True) for k in range(self.dim)], indexing="ij")


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {self.values.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite values")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def sample(cls, grid, fn):
        return cls(grid, np.broadcast_to(fn(*grid.cell_centers()), grid.shape).copy())

    def copy(self):
        return ScalarField(self.grid, self.values.copy())

    def l2_norm(self):
        return float(np.sqrt(np.sum(self.values**2) * self.grid.cell_volume))


@dataclass
class VectorField:
    """Face-staggered vector field.

    With ``constrained=True`` the normal components on the domain boundary
    must vanish identically (impermeable walls).
    """

    grid: Grid
    components: tuple
    constrained: bool = True

    def __post_init__(self):
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        if len(comps) != self.grid.dim:
            raise ValueError("need one component per axis")
        for a, c in enumerate(comps):
            if c.shape != self.grid.face_shape(a):
                raise ValueError(f"component {a} has shape {c.shape}, expected {self.grid.face_shape(a)}")
            if not np.all(np.isfinite(c)):
                raise ValueError("vector field contains non-finite values")
        self.components = comps
        if self.constrained and self.max_boundary_normal() != 0.0:
            raise ValueError("constrained vector field has non-zero normal flux on the boundary")

    @classmethod
    def zeros(cls, grid, constrained=True):
        return cls(grid, tuple(np.zeros(grid.face_shape(a)) for a in range(grid.dim)), constrained)

    @classmethod
    def sample(cls, grid, fn, constrained=True):
        """Sample ``fn(*coords) -> tuple of components`` at face centres.

        With ``constrained`` the boundary normal faces are set to zero.
        """
        comps = []
        for a in range(grid.dim):
            c = np.broadcast_to(fn(*grid.face_centers(a))[a], grid.face_shape(a)).copy()
            if constrained:
                _zero_boundary(c, a)
            comps.append(c)
        return cls(grid, tuple(comps), constrained)

    @classmethod
    def from_streamfunction(cls, grid, psi):
        """Discretely solenoidal 2D field ``(d psi/dy, -d psi/dx)`` from node values of ``psi``.

        ``psi`` is either a callable of node coordinates or an array of node
        values; it must vanish on the boundary for ``v.n = 0``.
        """
        if grid.dim != 2:
            raise ValueError("streamfunction construction is 2D only")
        values = psi(*grid.nodes()) if callable(psi) else np.asarray(psi, dtype=float)
        hx, hy = grid.spacing
        u = np.diff(values, axis=1) / hy
        v = -np.diff(values, axis=0) / hx
        _zero_boundary(u, 0)
        _zero_boundary(v, 1)
        return cls(grid, (u, v), True)

    def copy(self):
        return VectorField(self.grid, tuple(c.copy() for c in self.components), self.constrained)

    def max_boundary_normal(self):
        m = 0.0
        for a, c in enumerate(self.components):
            lo = np.take(c, 0, axis=a)
            hi = np.take(c, -1, axis=a)
            m = max(m, float(np.max(np.abs(lo))), float(np.max(np.abs(hi))))
        return m

    def interior_vector(self):
        """Concatenated interior-face values (the unknowns of the momentum solve)."""
        return np.concatenate([_interior(c, a).ravel() for a, c in enumerate(self.components)])

    @classmethod
    def from_interior(cls, grid, x):
        comps = []
        offset = 0
        for a in range(grid.dim):
            shape = list(grid.shape)
            shape[a] -= 1
            size = int(np.prod(shape))
            c = np.zeros(grid.face_shape(a))
            idx = [slice(None)] * grid.dim
            idx[a] = slice(1, -1)
            c[tuple(idx)] = np.asarray(x[offset:offset + size]).reshape(shape)
            offset += size
            comps.append(c)
        return cls(grid, tuple(comps), True)

    def cell_average(self):
        """Cell-centred vectors, shape ``(d, *grid.shape)``."""
        return np.stack([0.5 * (np.take(c, range(c.shape[a] - 1), axis=a) + np.take(c, range(1, c.shape[a]), axis=a))
                         for a, c in enumerate(self.components)])

    def l2_norm(self):
        """Face-quadrature L2 norm (every face carries one cell volume)."""
        vol = self.grid.cell_volume
        return float(np.sqrt(sum(np.sum(c**2) for c in self.components) * vol))

    def max_abs(self):
        return max(float(np.max(np.abs(c))) for c in self.components)

    def __add__(self, other):
        return VectorField(self.grid, tuple(a + b for a, b in zip(self.components, other.components)),
                           self.constrained and other.constrained)

    def __sub__(self, other):
        return VectorField(self.grid, tuple(a - b for a, b in zip(self.components, other.components)),
                           self.constrained and other.constrained)

    def scaled(self, factor):
        return VectorField(self.grid, tuple(factor * c for c in self.components), self.constrained)


def _sym_pairs(dim):
    return [(a, b) for a in range(dim) for b in range(a, dim)]


@dataclass
class SymTensorField:
    """Cell-centred symmetric tensors; only the upper triangle is stored.

    ``entries[k]`` is component ``pairs[k]`` with pairs ordered
    (0,0), (0,1), (1,1) in 2D and (0,0), (0,1), (0,2), (1,1), (1,2), (2,2) in 3D.
    """

    grid: Grid
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        expected = (len(_sym_pairs(self.grid.dim)),) + self.grid.shape
        if self.entries.shape != expected:
            raise ValueError(f"tensor entries shape {self.entries.shape} != {expected}")

    @property
    def pairs(self):
        return _sym_pairs(self.grid.dim)

    def component(self, a, b):
        a, b = min(a, b), max(a, b)
        return self.entries[self.pairs.index((a, b))]

    def matrix(self):
        d = self.grid.dim
        M = np.empty(self.grid.shape + (d, d))
        for k, (a, b) in enumerate(self.pairs):
            M[..., a, b] = self.entries[k]
            M[..., b, a] = self.entries[k]
        return M

    @classmethod
    def from_matrix(cls, grid, M):
        M = np.asarray(M, dtype=float)
        return cls(grid, np.stack([0.5 * (M[..., a, b] + M[..., b, a]) for a, b in _sym_pairs(grid.dim)]))

    def norm(self):
        total = np.zeros(self.grid.shape)
        for k, (a, b) in enumerate(self.pairs):
            total += (1.0 if a == b else 2.0) * self.entries[k] ** 2
        return np.sqrt(total)


def _zero_boundary(c, axis):
    idx = [slice(None)] * c.ndim
    idx[axis] = 0
    c[tuple(idx)] = 0.0
    idx[axis] = -1
    c[tuple(idx)] = 0.0


def _interior(c, axis):
    idx = [slice(None)] * c.ndim
    idx[axis] = slice(1, -1)
    return c[tuple(idx)]


def _faces_to_cells(c, axis):
    n = c.shape[axis]
    return 0.5 * (np.take(c, range(n - 1), axis=axis) + np.take(c, range(1, n), axis=axis))


def _cells_to_faces(c, axis):
    """Linear interpolation to faces; boundary faces copy the adjacent cell."""
    pad = [(0, 0)] * c.ndim
    pad[axis] = (1, 1)
    ext = np.pad(c, pad, mode="edge")
    return _faces_to_cells(ext, axis)


# ---------------------------------------------------------------------------
# Array operators
# ---------------------------------------------------------------------------

def sym_gradient(v: VectorField) -> SymTensorField:
    """Cell-centred ``Dv = (grad v + grad v^T)/2``.

    Diagonal entries are exact face differences. Off-diagonal entries use
    cell-averaged velocities with centred differences in the interior and
    second-order one-sided stencils in boundary cells.
    """
    grid = v.grid
    h = grid.spacing
    centred = v.cell_average()
    entries = []
    for a, b in _sym_pairs(grid.dim):
        if a == b:
            entries.append(np.diff(v.components[a], axis=a) / h[a])
        else:
            dua_db = np.gradient(centred[a], h[b], axis=b, edge_order=2)
            dub_da = np.gradient(centred[b], h[a], axis=a, edge_order=2)
            entries.append(0.5 * (dua_db + dub_da))
    return SymTensorField(grid, np.stack(entries))


def divergence(v: VectorField) -> ScalarField:
    h = v.grid.spacing
    return ScalarField(v.grid, sum(np.diff(c, axis=a) / h[a] for a, c in enumerate(v.components)))


def gradient(s: ScalarField) -> VectorField:
    """Face gradient of a cell field with zero normal gradient on the boundary."""
    h = s.grid.spacing
    comps = []
    for a in range(s.grid.dim):
        g = np.zeros(s.grid.face_shape(a))
        idx = [slice(None)] * s.grid.dim
        idx[a] = slice(1, -1)
        g[tuple(idx)] = np.diff(s.values, axis=a) / h[a]
        comps.append(g)
    return VectorField(s.grid, tuple(comps), True)


def laplacian_neumann(s: ScalarField) -> ScalarField:
    """Conservative 5/7-point Laplacian with mirrored ghost cells (zero normal derivative)."""
    return divergence(gradient(s))


def advect_scalar(s: ScalarField, v: VectorField, scheme="upwind") -> ScalarField:
    """``v . grad s`` at cell centres using cell-averaged velocity.

    Ghost cells mirror the boundary cell, consistent with the Neumann condition.
    """
    if scheme not in ("upwind", "central"):
        raise ValueError(f"unknown advection scheme {scheme!r}")
    grid = s.grid
    h = grid.spacing
    vel = v.cell_average()
    out = np.zeros(grid.shape)
    ext = np.pad(s.values, 1, mode="edge")
    core = tuple(slice(1, -1) for _ in range(grid.dim))
    for a in range(grid.dim):
        fwd = list(core)
        bwd = list(core)
        fwd[a] = slice(2, None)
        bwd[a] = slice(0, -2)
        up = ext[tuple(fwd)]
        dn = ext[tuple(bwd)]
        if scheme == "central":
            deriv = (up - dn) / (2.0 * h[a])
        else:
            back = (s.values - dn) / h[a]
            ahead = (up - s.values) / h[a]
            deriv = np.where(vel[a] > 0.0, back, ahead)
        out += vel[a] * deriv
    return ScalarField(grid, out)


def g_cutoff(u, n):
    """Smooth cutoff: 1 on ``[0, n]``, 0 on ``[2n, inf)``, cubic Hermite blend between.

    ``max |G'| = 1.5/n``.
    """
    t = np.clip((np.abs(np.asarray(u, dtype=float)) - n) / n, 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


def speed_squared_on_faces(v: VectorField, axis):
    """``|v|^2`` at the faces of component ``axis`` (other components 4-point averaged)."""
    total = v.components[axis] ** 2
    for c, comp in enumerate(v.components):
        if c == axis:
            continue
        at_cells = _faces_to_cells(comp, c)
        total = total + _cells_to_faces(at_cells, axis) ** 2
    return total


def convective_term(v: VectorField):
    """Conservative ``div(v (x) v)`` per face component; boundary faces are zero."""
    grid = v.grid
    h = grid.spacing
    out = []
    for a in range(grid.dim):
        ua = v.components[a]
        acc = np.zeros(grid.face_shape(a))
        inner = [slice(None)] * grid.dim
        inner[a] = slice(1, -1)
        inner = tuple(inner)
        # d/dx_a (u_a u_a): flux at cell centres
        flux = _faces_to_cells(ua, a) ** 2
        acc[inner] += np.diff(flux, axis=a) / h[a]
        for b in range(grid.dim):
            if b == a:
                continue
            ub = v.components[b]
            # fluxes u_a u_b at edges (a, b); zero on walls normal to b via u_b = 0
            ua_e = _cells_to_nodes_interior(ua, b)
            ub_e = _cells_to_nodes_interior(ub, a)
            acc += np.diff(ua_e * ub_e, axis=b) / h[b]
        _zero_boundary(acc, a)
        out.append(acc)
    return out


def _cells_to_nodes_interior(c, axis):
    """Average along ``axis`` from n cells to n+1 nodes, boundary nodes set to zero."""
    shape = list(c.shape)
    shape[axis] += 1
    out = np.zeros(shape)
    idx = [slice(None)] * c.ndim
    idx[axis] = slice(1, -1)
    out[tuple(idx)] = _faces_to_cells(c, axis)
    return out


def convective_term_truncated(v: VectorField, reg_n) -> VectorField:
    """``div(v (x) v) G_n(|v|^2)`` evaluated on faces."""
    conv = convective_term(v)
    comps = [c * g_cutoff(speed_squared_on_faces(v, a), reg_n) for a, c in enumerate(conv)]
    return VectorField(v.grid, tuple(comps), True)


# ---------------------------------------------------------------------------
# Sparse MAC operators on interior unknowns
# ---------------------------------------------------------------------------

def _d1(m, h):
    """cells (m) <- faces (m+1) difference."""
    return sp.diags([-np.ones(m), np.ones(m)], [0, 1], shape=(m, m + 1), format="csr") / h


def _g1(m, h):
    """nodes/faces (m+1) <- cells (m) difference; boundary rows are zero."""
    g = (-_d1(m, h).T).tolil()
    g[0, :] = 0.0
    g[m, :] = 0.0
    return g.tocsr()


def _p1(m):
    """faces (m+1) <- interior faces (m-1) embedding."""
    return sp.eye(m + 1, m - 1, k=-1, format="csr")


def _avg_n2c(m):
    """cells (m) <- nodes (m+1) average."""
    return sp.diags([0.5 * np.ones(m), 0.5 * np.ones(m)], [0, 1], shape=(m, m + 1), format="csr")


def _avg_c2n(m):
    """nodes (m+1) <- cells (m) average; boundary nodes copy the adjacent cell."""
    a = sp.lil_matrix((m + 1, m))
    a[0, 0] = 1.0
    a[m, m - 1] = 1.0
    for i in range(1, m):
        a[i, i - 1] = 0.5
        a[i, i] = 0.5
    return a.tocsr()


def _kron(mats):
    return reduce(lambda x, y: sp.kron(x, y, format="csr"), mats)


@dataclass(frozen=True)
class WallBlock:
    """Tangential unknowns adjacent to one wall.

    ``unknowns`` index the stacked interior velocity vector, ``edges`` index
    the shear-edge array of ``pair`` lying on the wall, ``h`` is the spacing
    normal to the wall.
    """

    normal_axis: int
    side: int
    tangent_axis: int
    pair: tuple
    unknowns: np.ndarray
    edges: np.ndarray
    h: float


@dataclass
class MacOperators:
    """Sparse difference operators acting on interior face unknowns."""

    grid: Grid
    _cache: dict = field(default_factory=dict, repr=False)

    @cached_property
    def component_sizes(self):
        sizes = []
        for a in range(self.grid.dim):
            s = list(self.grid.shape)
            s[a] -= 1
            sizes.append(int(np.prod(s)))
        return sizes

    @cached_property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.component_sizes)])

    @property
    def n_unknowns(self):
        return int(self.offsets[-1])

    def _axis_mats(self, axis, special, default=None):
        mats = []
        for k, n in enumerate(self.grid.shape):
            if k == axis:
                mats.append(special)
            else:
                mats.append(sp.identity(n if default is None else default(k), format="csr"))
        return mats

    def _embed(self, a):
        return _kron(self._axis_mats(a, _p1(self.grid.shape[a])))

    def _block_row(self, blocks, n_rows):
        """Stack per-component blocks horizontally (missing blocks are zero)."""
        row = []
        for a in range(self.grid.dim):
            blk = blocks.get(a)
            row.append(blk if blk is not None else sp.csr_matrix((n_rows, self.component_sizes[a])))
        return sp.hstack(row, format="csr")

    @cached_property
    def cell_strain(self):
        """``D_aa`` at cells for each axis, as matrices on the unknown vector."""
        h = self.grid.spacing
        out = []
        for a in range(self.grid.dim):
            d = _kron(self._axis_mats(a, _d1(self.grid.shape[a], h[a]))) @ self._embed(a)
            out.append(self._block_row({a: d}, self.grid.n_cells))
        return out

    @cached_property
    def pairs(self):
        return list(itertools.combinations(range(self.grid.dim), 2))

    @cached_property
    def edge_strain(self):
        """``D_ab`` at interior edges (rows on boundary edges are zero)."""
        g = self.grid
        h = g.spacing
        out = {}
        for a, b in self.pairs:
            n_edges = int(np.prod(g.edge_shape(a, b)))
            # d u_a / d x_b : faces along a kept (n_a + 1), difference along b
            mats_a = []
            mats_b = []
            for k, n in enumerate(g.shape):
                if k == a:
                    mats_a.append(sp.identity(n + 1, format="csr"))
                    mats_b.append(_g1(n, h[a]))
                elif k == b:
                    mats_a.append(_g1(n, h[b]))
                    mats_b.append(sp.identity(n + 1, format="csr"))
                else:
                    mats_a.append(sp.identity(n, format="csr"))
                    mats_b.append(sp.identity(n, format="csr"))
            da = _kron(mats_a) @ self._embed(a)
            db = _kron(mats_b) @ self._embed(b)
            out[(a, b)] = 0.5 * self._block_row({a: da, b: db}, n_edges)
        return out

    @cached_property
    def divergence_matrix(self):
        return sp.hstack([self.cell_strain[a][:, self.offsets[a]:self.offsets[a + 1]]
                          for a in range(self.grid.dim)], format="csr")

    @cached_property
    def gradient_matrix(self):
        return (-self.divergence_matrix.T).tocsr()

    @cached_property
    def laplacian_matrix(self):
        return (self.divergence_matrix @ self.gradient_matrix).tocsr()

    @cached_property
    def cell_to_face(self):
        """Average cells onto the interior faces of every component (stacked)."""
        blocks = []
        for a, n in enumerate(self.grid.shape):
            avg = sp.diags([0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")
            blocks.append(_kron(self._axis_mats(a, avg)))
        return sp.vstack(blocks, format="csr")

    def cell_to_face_average(self, values):
        return self.cell_to_face @ np.asarray(values, dtype=float).ravel()

    @cached_property
    def cell_to_edge(self):
        """Average cell values onto edges of each pair (boundary edges use adjacent cells)."""
        g = self.grid
        out = {}
        for a, b in self.pairs:
            mats = [(_avg_c2n(n) if k in (a, b) else sp.identity(n, format="csr")) for k, n in enumerate(g.shape)]
            out[(a, b)] = _kron(mats)
        return out

    @cached_property
    def edge_to_cell(self):
        g = self.grid
        out = {}
        for a, b in self.pairs:
            mats = [(_avg_n2c(n) if k in (a, b) else sp.identity(n, format="csr")) for k, n in enumerate(g.shape)]
            out[(a, b)] = _kron(mats)
        return out

    def edge_mask(self, pair, kind):
        """Boolean mask over edges of ``pair``: ``interior``, ``wall`` or ``corner``."""
        a, b = pair
        shape = self.grid.edge_shape(a, b)
        idx = np.indices(shape)
        on_a = (idx[a] == 0) | (idx[a] == shape[a] - 1)
        on_b = (idx[b] == 0) | (idx[b] == shape[b] - 1)
        if kind == "interior":
            m = ~on_a & ~on_b
        elif kind == "wall":
            m = on_a ^ on_b
        else:
            m = on_a & on_b
        return m.ravel()

    @cached_property
    def wall_blocks(self):
        g = self.grid
        blocks = []
        for b in range(g.dim):
            for side in (0, 1):
                for a in range(g.dim):
                    if a == b:
                        continue
                    # unknowns of component a next to wall (normal b, side)
                    ishape = list(g.shape)
                    ishape[a] -= 1
                    uidx = np.indices(ishape)
                    sel = uidx[b] == (0 if side == 0 else g.shape[b] - 1)
                    unknowns = self.offsets[a] + np.ravel_multi_index(tuple(u[sel] for u in uidx), ishape)
                    pair = (min(a, b), max(a, b))
                    eshape = g.edge_shape(*pair)
                    coords = [u[sel].copy() for u in uidx]
                    coords[a] = coords[a] + 1  # interior face index -> face index
                    coords[b] = np.full_like(coords[b], 0 if side == 0 else g.shape[b])
                    edges = np.ravel_multi_index(tuple(coords), eshape)
                    blocks.append(WallBlock(b, side, a, pair, unknowns, edges, g.spacing[b]))
        return blocks


_OPERATOR_CACHE: dict = {}


def mac_operators(grid: Grid) -> MacOperators:
    ops = _OPERATOR_CACHE.get(grid)
    if ops is None:
        ops = MacOperators(grid)
        _OPERATOR_CACHE[grid] = ops
    return ops
