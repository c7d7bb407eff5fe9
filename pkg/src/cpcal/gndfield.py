"""Voxel-grid GND analysis: curl of an F^p field, SVD projection onto
per-system edge/screw densities, and the forest sum.

Component convention (fixed, documented): (curl A)_ij = eps_jkl dA_il/dx_k.
Nye tensors are in 1/um, densities in 1/um^2, spacing in um. Derivatives
use central differences inside and second-order one-sided stencils at the
boundaries (numpy.gradient with edge_order=2).
"""

import dataclasses

import numpy as np

from . import slipcrystal

_EPS = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _EPS[_i, _j, _k] = 1.0
    _EPS[_i, _k, _j] = -1.0


@dataclasses.dataclass
class VoxelField:
    """fp: (nx, ny, nz, 3, 3) plastic deformation gradient per voxel."""
    fp: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        self.fp = np.asarray(self.fp, float)
        if self.fp.ndim != 5 or self.fp.shape[3:] != (3, 3):
            raise ValueError("fp must have shape (nx, ny, nz, 3, 3)")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def dims(self):
        return self.fp.shape[:3]


@dataclasses.dataclass
class GndResult:
    nye: np.ndarray        # (..., 3, 3)
    rho_edge: np.ndarray   # (..., 12)
    rho_screw: np.ndarray  # (..., 12)
    residual: np.ndarray   # (...,)


def curl_fp(field):
    """Per-voxel curl of the plastic deformation gradient."""
    fp = field.fp
    dims = field.dims
    if sum(d >= 2 for d in dims) < 1 or any(d < 1 for d in dims):
        raise ValueError("need at least 2 voxels in a differentiated axis")
    grads = []
    for k in range(3):
        if dims[k] >= 2:
            order = 2 if dims[k] >= 3 else 1
            grads.append(np.gradient(fp, field.spacing, axis=k,
                                     edge_order=order))
        else:
            grads.append(np.zeros_like(fp))
    curl = np.zeros_like(fp)
    for j in range(3):
        for k in range(3):
            for l in range(3):
                e = _EPS[j, k, l]
                if e != 0.0:
                    curl[..., :, j] += e * grads[k][..., :, l]
    return curl


def dyad_matrix(systems=None, burgers=slipcrystal.BURGERS_DEFAULT):
    """(9, 24) design matrix: columns are b * vec(s x t) then b * vec(s x s).

    Column a (a < 12) is the edge dyad s_a (x) t_a, column 12 + a the screw
    dyad s_a (x) s_a, both flattened row-major and scaled by the Burgers
    vector magnitude.
    """
    smat, _, tmat = slipcrystal.system_arrays(systems)
    cols = []
    for a in range(12):
        cols.append(burgers * np.outer(smat[a], tmat[a]).ravel())
    for a in range(12):
        cols.append(burgers * np.outer(smat[a], smat[a]).ravel())
    return np.column_stack(cols)


def project_gnd(nye, systems=None, burgers=slipcrystal.BURGERS_DEFAULT):
    """Least-squares (SVD pseudo-inverse, minimal-norm) split of a Nye
    tensor into per-system edge/screw density magnitudes.

    The system is underdetermined (9 equations, 24 unknowns) so the
    minimal-norm solution is returned; densities are reported as absolute
    values and the residual is the Frobenius norm of the unexplained part.
    """
    a_mat = dyad_matrix(systems, burgers)
    x, *_ = np.linalg.lstsq(a_mat, np.asarray(nye, float).ravel(), rcond=None)
    resid = float(np.linalg.norm(a_mat @ x - np.asarray(nye, float).ravel()))
    return np.abs(x[:12]), np.abs(x[12:]), resid


def synthesize_nye(rho_edge, rho_screw, systems=None,
                   burgers=slipcrystal.BURGERS_DEFAULT):
    """Forward construction: Nye tensor of the given density vector."""
    a_mat = dyad_matrix(systems, burgers)
    x = np.concatenate([np.asarray(rho_edge, float),
                        np.asarray(rho_screw, float)])
    return (a_mat @ x).reshape(3, 3)


def analyze_field(field, systems=None, burgers=slipcrystal.BURGERS_DEFAULT):
    """curl + per-voxel projection over the whole grid."""
    nye = curl_fp(field)
    dims = field.dims
    rho_e = np.zeros(dims + (12,))
    rho_s = np.zeros(dims + (12,))
    resid = np.zeros(dims)
    a_mat = dyad_matrix(systems, burgers)
    pinv = np.linalg.pinv(a_mat)
    flat = nye.reshape(-1, 9)
    sol = flat @ pinv.T
    recon = sol @ a_mat.T
    res = np.linalg.norm(flat - recon, axis=1)
    rho_e[...] = np.abs(sol[:, :12]).reshape(dims + (12,))
    rho_s[...] = np.abs(sol[:, 12:]).reshape(dims + (12,))
    resid[...] = res.reshape(dims)
    return GndResult(nye=nye, rho_edge=rho_e, rho_screw=rho_s, residual=resid)


def forest_sum(rho_tot, systems=None, projection_mode="mean"):
    """rho_for_a = sum_b xi[a, b] rho_tot_b with the chosen line-direction
    closure (see slipcrystal.projection_matrix)."""
    rho_tot = np.asarray(rho_tot, float)
    if np.any(rho_tot < 0):
        raise ValueError("rho_tot components must be nonnegative")
    xi = slipcrystal.projection_matrix(systems, projection_mode)
    return xi @ rho_tot


def write_field_csv(field, path, seed=None, config_digest=None):
    """Export `i,j,k,fp11..fp33` rows."""
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        names = ",".join(f"fp{r + 1}{c + 1}" for r in range(3)
                         for c in range(3))
        f.write(f"i,j,k,{names}\n")
        nx, ny, nz = field.dims
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    vals = ",".join(repr(float(v))
                                    for v in field.fp[i, j, k].ravel())
                    f.write(f"{i},{j},{k},{vals}\n")


def read_field_csv(path, spacing=1.0):
    rows = []
    with open(path) as f:
        header = None
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line
                continue
            parts = line.split(",")
            rows.append(([int(x) for x in parts[:3]],
                         [float(x) for x in parts[3:12]]))
    if not rows:
        raise ValueError(f"no voxel rows in {path}")
    dims = tuple(max(r[0][d] for r in rows) + 1 for d in range(3))
    fp = np.zeros(dims + (3, 3))
    for (i, j, k), vals in rows:
        fp[i, j, k] = np.array(vals).reshape(3, 3)
    return VoxelField(fp=fp, spacing=spacing)


def write_result_csv(result, path, seed=None, config_digest=None):
    """Export `i,j,k,rho_e1..rho_e12,rho_s1..rho_s12,residual` rows."""
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        cols = [f"rho_e{a + 1}" for a in range(12)] \
            + [f"rho_s{a + 1}" for a in range(12)]
        f.write("i,j,k," + ",".join(cols) + ",residual\n")
        nx, ny, nz = result.residual.shape
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    vals = [repr(float(v)) for v in result.rho_edge[i, j, k]]
                    vals += [repr(float(v)) for v in result.rho_screw[i, j, k]]
                    vals.append(repr(float(result.residual[i, j, k])))
                    f.write(f"{i},{j},{k}," + ",".join(vals) + "\n")
