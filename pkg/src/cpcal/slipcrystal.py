"""Single-crystal FCC material point: slip systems, parameters, state and
the explicit substepped step() update.

Conventions: stresses in MPa, lengths in micrometers, dislocation densities
in 1/um^2, times in seconds. The 12 {111}<110> systems are fixed in the
crystal frame; a grain orientation (crystal-to-sample rotation matrix) maps
macroscopic quantities into that frame.
"""

import dataclasses
import math

import numpy as np

from . import kernels

# default fixed constants (MPa / um); the cubic constants follow the
# adjusted values used for Hastelloy X at 500F, with the second constant
# read as C12 (cubic symmetry pins C22 = C11).
C11_DEFAULT = 250_000.0
C12_DEFAULT = 139_000.0
C44_DEFAULT = 70_200.0
G_SHEAR_DEFAULT = 70_200.0
BURGERS_DEFAULT = 2.54e-4
GAMMA_DOT0_DEFAULT = 1.0e-3

MAX_DGAMMA_DEFAULT = 1.0e-4
MAX_SUBSTEPS_DEFAULT = 20_000

CALIBRATED_FIELDS = ("n_rate", "tau_c0", "c_geom", "rho_ssd", "h0",
                     "tau_s", "m_exp", "h_kin", "h_dyn")


@dataclasses.dataclass(frozen=True)
class SlipSystem:
    """One slip system: direction s, plane normal n, edge line t = n x s."""
    s: np.ndarray
    n: np.ndarray
    t: np.ndarray


def build_fcc_slip_systems():
    """Return the 12 {111}<110> systems in a fixed canonical order.

    Planes are ordered (111), (-111), (1-11), (11-1); within each plane the
    three <110> directions are sorted lexicographically with the first
    nonzero component made positive (s and -s are the same system).
    """
    planes = [(1, 1, 1), (-1, 1, 1), (1, -1, 1), (1, 1, -1)]
    dirs = []
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            for k in (-1, 0, 1):
                v = (i, j, k)
                if sorted(abs(c) for c in v) == [0, 1, 1]:
                    nz = next(c for c in v if c != 0)
                    if nz > 0:
                        dirs.append(v)
    systems = []
    for p in planes:
        nvec = np.array(p, dtype=float) / math.sqrt(3.0)
        in_plane = sorted(d for d in dirs if sum(a * b for a, b in zip(d, p)) == 0)
        assert len(in_plane) == 3
        for d in in_plane:
            svec = np.array(d, dtype=float) / math.sqrt(2.0)
            tvec = np.cross(nvec, svec)
            systems.append(SlipSystem(s=svec, n=nvec, t=tvec))
    assert len(systems) == 12
    return systems


_DEFAULT_SYSTEMS = None


def default_systems():
    global _DEFAULT_SYSTEMS
    if _DEFAULT_SYSTEMS is None:
        _DEFAULT_SYSTEMS = build_fcc_slip_systems()
    return _DEFAULT_SYSTEMS


def system_arrays(systems=None):
    """(smat, nmat, tmat) as contiguous (12,3) float arrays."""
    systems = systems or default_systems()
    smat = np.ascontiguousarray([ss.s for ss in systems], dtype=float)
    nmat = np.ascontiguousarray([ss.n for ss in systems], dtype=float)
    tmat = np.ascontiguousarray([ss.t for ss in systems], dtype=float)
    return smat, nmat, tmat


def plane_ids(systems=None):
    """Coplanarity classes (plane-normal equality up to sign) as int array."""
    systems = systems or default_systems()
    reps = []
    out = np.empty(len(systems), dtype=np.int64)
    for i, ss in enumerate(systems):
        for j, rep in enumerate(reps):
            if abs(abs(float(np.dot(ss.n, rep))) - 1.0) < 1e-12:
                out[i] = j
                break
        else:
            reps.append(ss.n)
            out[i] = len(reps) - 1
    return out


def latent_matrix(systems=None, q_coplanar=1.0, q_noncoplanar=1.2):
    """Latent hardening matrix q_ab: q_coplanar on shared planes, else 1.2."""
    pid = plane_ids(systems)
    q = np.where(pid[:, None] == pid[None, :], q_coplanar, q_noncoplanar)
    return q.astype(float)


def projection_matrix(systems=None, mode="mean"):
    """Forest projection weights xi[a, b] = |n_a . l_b| for the SSD closure.

    mode: "mean" averages the edge (l=t) and screw (l=s) projections,
    "edge" uses l=t only, "ones" sets xi to 1 (no projection).
    """
    smat, nmat, tmat = system_arrays(systems)
    xi_screw = np.abs(nmat @ smat.T)
    xi_edge = np.abs(nmat @ tmat.T)
    if mode == "mean":
        return 0.5 * (xi_edge + xi_screw)
    if mode == "edge":
        return xi_edge
    if mode == "screw":
        return xi_screw
    if mode == "ones":
        return np.ones((len(smat), len(smat)))
    raise ValueError(f"unknown forest projection mode: {mode!r}")


@dataclasses.dataclass
class MaterialParams:
    """The 9 calibrated constitutive parameters plus fixed constants."""
    n_rate: float
    tau_c0: float
    c_geom: float
    rho_ssd: float
    h0: float
    tau_s: float
    m_exp: float
    h_kin: float
    h_dyn: float
    gamma_dot0: float = GAMMA_DOT0_DEFAULT
    q_coplanar: float = 1.0
    q_noncoplanar: float = 1.2
    c11: float = C11_DEFAULT
    c12: float = C12_DEFAULT
    c44: float = C44_DEFAULT
    g_shear: float = G_SHEAR_DEFAULT
    burgers: float = BURGERS_DEFAULT
    forest_mode: str = "mean"

    def validate(self):
        """Raise ValueError on invalid user-supplied parameters.

        LHS draws from the search domain are not passed through here: the
        domain allows tau_s <= tau_c0 and those sets still simulate.
        """
        for name in ("n_rate", "tau_c0", "c_geom", "rho_ssd", "h0",
                     "tau_s", "m_exp", "h_kin", "gamma_dot0",
                     "c11", "c12", "c44", "g_shear", "burgers"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.h_dyn < 0.0:
            raise ValueError("h_dyn must be >= 0")
        if not self.tau_s > self.tau_c0:
            raise ValueError("tau_s must exceed tau_c0")

    def calibrated_array(self):
        return np.array([getattr(self, f) for f in CALIBRATED_FIELDS])

    def replace_calibrated(self, values):
        kw = {f: float(v) for f, v in zip(CALIBRATED_FIELDS, values)}
        return dataclasses.replace(self, **kw)

    def packed(self):
        """Flat parameter vector consumed by the kernels."""
        p = np.empty(kernels.NPARAMS)
        p[kernels.P_N_RATE] = self.n_rate
        p[kernels.P_TAU_C0] = self.tau_c0
        p[kernels.P_C_GEOM] = self.c_geom
        p[kernels.P_RHO_SSD] = self.rho_ssd
        p[kernels.P_H0] = self.h0
        p[kernels.P_TAU_S] = self.tau_s
        p[kernels.P_M_EXP] = self.m_exp
        p[kernels.P_H_KIN] = self.h_kin
        p[kernels.P_H_DYN] = self.h_dyn
        p[kernels.P_GAMMA_DOT0] = self.gamma_dot0
        p[kernels.P_Q_COP] = self.q_coplanar
        p[kernels.P_Q_NONCOP] = self.q_noncoplanar
        p[kernels.P_C11] = self.c11
        p[kernels.P_C12] = self.c12
        p[kernels.P_C44] = self.c44
        return p


def table_params():
    """The optimized parameter set used as the reference fixture."""
    return MaterialParams(n_rate=21.9, tau_c0=22.2, c_geom=0.1, rho_ssd=83.7,
                          h0=87.1, tau_s=437.4, m_exp=9.0, h_kin=32694.6,
                          h_dyn=711.0)


@dataclasses.dataclass
class MaterialPointState:
    """Per-point evolving state (fresh state: identity fp, zeros elsewhere)."""
    fp: np.ndarray
    tau_c_stat: np.ndarray
    chi: np.ndarray
    gamma_acc: np.ndarray
    rho_gnd_edge: np.ndarray
    rho_gnd_screw: np.ndarray
    w_fip: float = 0.0
    p_acc: float = 0.0
    f_prev: np.ndarray = None  # macro F at the last committed step (sample frame)

    @classmethod
    def fresh(cls):
        return cls(fp=np.eye(3), tau_c_stat=np.zeros(12), chi=np.zeros(12),
                   gamma_acc=np.zeros(12), rho_gnd_edge=np.zeros(12),
                   rho_gnd_screw=np.zeros(12), w_fip=0.0, p_acc=0.0,
                   f_prev=np.eye(3))

    def copy(self):
        return MaterialPointState(
            fp=self.fp.copy(), tau_c_stat=self.tau_c_stat.copy(),
            chi=self.chi.copy(), gamma_acc=self.gamma_acc.copy(),
            rho_gnd_edge=self.rho_gnd_edge.copy(),
            rho_gnd_screw=self.rho_gnd_screw.copy(),
            w_fip=self.w_fip, p_acc=self.p_acc, f_prev=self.f_prev.copy())


@dataclasses.dataclass
class StepResult:
    cauchy_stress: np.ndarray
    new_state: MaterialPointState
    substeps_used: int
    converged: bool


def resolved_shear(stress, sys):
    """tau = s . (sigma n) for a symmetric stress tensor."""
    return float(sys.s @ stress @ sys.n)


def flow_rate(tau, chi, tau_c_eff, params):
    """Power-law shear rate, odd in (tau - chi)."""
    x = tau - chi
    if x == 0.0 or tau_c_eff <= 0.0:
        return 0.0
    ex = params.n_rate * math.log(abs(x) / tau_c_eff)
    ex = min(ex, 400.0)
    return math.copysign(params.gamma_dot0 * math.exp(ex), x)


def forest_density(state, params, systems=None):
    """rho_for per system: projected GND edge/screw plus the SSD closure."""
    smat, nmat, tmat = system_arrays(systems)
    xi_screw = np.abs(nmat @ smat.T)
    xi_edge = np.abs(nmat @ tmat.T)
    xi_ssd = projection_matrix(systems, params.forest_mode)
    return (xi_edge @ np.abs(state.rho_gnd_edge)
            + xi_screw @ np.abs(state.rho_gnd_screw)
            + xi_ssd @ np.full(12, params.rho_ssd))


def taylor_strengthening(state, params, systems=None):
    """C G b sqrt(rho_for) per system (MPa)."""
    rho_for = forest_density(state, params, systems)
    return params.c_geom * params.g_shear * params.burgers * np.sqrt(rho_for)


def effective_crss(state, params, systems=None):
    """(tau_c)_eff = tau_c0 + C G b sqrt(rho_for) + tau_c_stat, per system."""
    return params.tau_c0 + taylor_strengthening(state, params, systems) \
        + state.tau_c_stat


def hardening_rates(state, gamma_dots, params, systems=None):
    """Statistical strength rates: sum_b q_ab h0 (1 - stat_b/tau_s)^m |gd_b|.

    The (1 - stat/tau_s) base is clamped at zero so components that have
    reached saturation stop hardening instead of going negative.
    """
    q = latent_matrix(systems, params.q_coplanar, params.q_noncoplanar)
    base = np.maximum(1.0 - state.tau_c_stat / params.tau_s, 0.0)
    hb = params.h0 * base ** params.m_exp * np.abs(np.asarray(gamma_dots))
    return q @ hb


def backstress_rate(chi, gamma_dot, params):
    """Armstrong-Frederick: chi_dot = h gd - h_d chi |gd|."""
    return params.h_kin * gamma_dot - params.h_dyn * chi * abs(gamma_dot)


def step(state, f_macro_new, dt, params, systems=None, orientation=None,
         max_dgamma=MAX_DGAMMA_DEFAULT, max_substeps=MAX_SUBSTEPS_DEFAULT):
    """Advance the material point to the new macroscopic gradient.

    ``orientation`` is the crystal-to-sample rotation matrix (identity for a
    crystal-frame test). Pure function: the input state is not modified.
    Returns a StepResult; converged=False marks the penalty path (substep
    floor or stress blow-up) and leaves new_state at the input state.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    f_new = np.asarray(f_macro_new, dtype=float)
    if abs(np.linalg.det(f_new)) < 1e-12:
        raise ValueError("f_macro_new must be invertible")
    smat, nmat, _ = system_arrays(systems)
    pid = plane_ids(systems)
    rot = np.eye(3) if orientation is None else np.asarray(orientation, float)

    f0c = np.ascontiguousarray(rot.T @ state.f_prev @ rot)
    f1c = np.ascontiguousarray(rot.T @ f_new @ rot)

    new = state.copy()
    acc = np.array([state.w_fip, state.p_acc])
    taylor = np.ascontiguousarray(taylor_strengthening(state, params, systems))
    sig = np.empty((3, 3))
    ns = kernels.grain_step(f0c, f1c, float(dt), new.fp, new.tau_c_stat,
                            new.chi, new.gamma_acc, acc, taylor, smat, nmat,
                            pid, params.packed(), max_dgamma, max_substeps,
                            sig)
    if ns < 0:
        return StepResult(cauchy_stress=np.full((3, 3), np.nan),
                          new_state=state.copy(), substeps_used=max_substeps,
                          converged=False)
    new.w_fip = float(acc[0])
    new.p_acc = float(acc[1])
    new.f_prev = f_new.copy()
    stress = rot @ sig @ rot.T
    stress = 0.5 * (stress + stress.T)
    return StepResult(cauchy_stress=stress, new_state=new,
                      substeps_used=int(ns), converged=True)
