"""Taylor-homogenized polycrystal driver for triangular uniaxial cycling.

Every grain sees the same macroscopic deformation gradient
F = diag(lam, lam, 1 + eps(t)); the lateral stretch lam is iterated each
step so the volume-weighted mean lateral Cauchy stress vanishes (secant
with warm start), and the reported stress is the volume-weighted mean
axial Cauchy stress. Volume-weighted sums use math.fsum, which is exactly
rounded and therefore independent of grain order.
"""

import dataclasses
import math

import numpy as np

from . import kernels, slipcrystal

LATERAL_TOL_MPA = 0.1
LATERAL_MAX_ITER = 40
LATERAL_MAX_DLAM = 0.005


@dataclasses.dataclass
class LoadingProgram:
    """Triangular strain waveform: fully reversed when r_ratio = -1."""
    amplitude: float
    r_ratio: float = -1.0
    rate: float = 0.02
    cycles: int = 3
    steps_per_quarter: int = 50

    def validate(self):
        if not self.amplitude > 0.0:
            raise ValueError("amplitude must be positive")
        if not (0.005 <= self.rate <= 0.1):
            raise ValueError("strain rate outside accepted range [0.005, 0.1]")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")
        if self.steps_per_quarter < 1:
            raise ValueError("steps_per_quarter must be >= 1")
        if not (-1.0 <= self.r_ratio < 1.0):
            raise ValueError("r_ratio must lie in [-1, 1)")


@dataclasses.dataclass
class StressStrainCurve:
    time: np.ndarray
    strain: np.ndarray
    stress: np.ndarray
    cycle_index: np.ndarray

    def n_cycles(self):
        return int(self.cycle_index.max()) if self.cycle_index.size else 0

    def cycle_slice(self, k):
        """Index range [i0, i1] (inclusive) of cycle k, 1-based."""
        idx = np.flatnonzero(self.cycle_index == k)
        if idx.size == 0:
            raise ValueError(f"cycle {k} not present in curve")
        return int(idx[0]), int(idx[-1])


@dataclasses.dataclass
class PolycrystalRun:
    curve: StressStrainCurve
    per_grain_final: list
    failed: bool
    lateral_residual: np.ndarray = None  # |mean lateral stress| per step


def triangular_waveform(program):
    """Sample times, strains and 1-based cycle indices of the waveform.

    Each cycle traces 0 -> +A -> R*A -> 0 at constant |strain rate|; the
    returned arrays include the t=0 sample (assigned to cycle 1).
    """
    program.validate()
    amp = program.amplitude
    rate = program.rate
    spq = program.steps_per_quarter
    nodes = [0.0, amp, program.r_ratio * amp, 0.0]
    times = [0.0]
    strains = [0.0]
    cycles = [1]
    t = 0.0
    for c in range(1, program.cycles + 1):
        for seg in range(3):
            e0, e1 = nodes[seg], nodes[seg + 1]
            span = abs(e1 - e0)
            if span == 0.0:
                continue
            nstep = max(1, round(spq * span / amp))
            dt_seg = span / rate / nstep
            for i in range(1, nstep + 1):
                t += dt_seg
                times.append(t)
                strains.append(e0 + (e1 - e0) * i / nstep)
                cycles.append(c)
    return (np.array(times), np.array(strains),
            np.array(cycles, dtype=np.int64))


def _fsum_weighted(weights, values):
    return math.fsum(float(w) * float(v) for w, v in zip(weights, values))


def run_uniaxial(ensemble, params, program,
                 max_dgamma=slipcrystal.MAX_DGAMMA_DEFAULT,
                 max_substeps=slipcrystal.MAX_SUBSTEPS_DEFAULT,
                 keep_states=True):
    """Cycle the ensemble through the program and homogenize the response.

    Returns a PolycrystalRun; ``failed`` is set when any grain step fails
    to converge or the lateral-stress iteration stalls, and the curve is
    truncated at the last committed step.
    """
    vf = np.array([g.volume_fraction for g in ensemble.grains])
    if abs(vf.sum() - 1.0) > 1e-9:
        raise ValueError("ensemble volume fractions must sum to 1")
    n = len(ensemble.grains)
    rot = np.ascontiguousarray(
        [g.orientation.matrix() for g in ensemble.grains])

    smat, nmat, _ = slipcrystal.system_arrays()
    pid = slipcrystal.plane_ids()
    packed = params.packed()

    # committed + trial state buffers
    fp = np.tile(np.eye(3), (n, 1, 1))
    stat = np.zeros((n, 12))
    chi = np.zeros((n, 12))
    gacc = np.zeros((n, 12))
    acc = np.zeros((n, 2))
    tfp = np.empty_like(fp)
    tstat = np.empty_like(stat)
    tchi = np.empty_like(chi)
    tgacc = np.empty_like(gacc)
    tacc = np.empty_like(acc)

    # forest strengthening is static during a run (GND feedback disabled)
    fresh = slipcrystal.MaterialPointState.fresh()
    taylor_row = slipcrystal.taylor_strengthening(fresh, params)
    taylor = np.ascontiguousarray(np.tile(taylor_row, (n, 1)))

    ax_out = np.empty(n)
    lat_out = np.empty(n)
    sub_out = np.empty(n, dtype=np.int64)
    ok_out = np.empty(n, dtype=np.int64)

    times, strains, cyc = triangular_waveform(program)
    nt = len(times)
    stress = np.zeros(nt)
    lat_resid = np.zeros(nt)
    failed = False

    lam = 1.0
    dlam_prev = 0.0
    slope = float(params.c11 + params.c12)  # elastic-scale starting slope
    eps_prev = 0.0

    def evaluate(lam_try, eps, dt):
        f0s = np.diag([lam, lam, 1.0 + eps_prev])
        f1s = np.diag([lam_try, lam_try, 1.0 + eps])
        kernels.eval_batch(rot, f0s, f1s, dt,
                           fp, stat, chi, gacc, acc,
                           tfp, tstat, tchi, tgacc, tacc,
                           taylor, smat, nmat, pid, packed,
                           max_dgamma, max_substeps,
                           ax_out, lat_out, sub_out, ok_out)
        if not ok_out.all():
            return None, None
        return (_fsum_weighted(vf, ax_out), _fsum_weighted(vf, lat_out))

    last_step = 0
    for i in range(1, nt):
        eps = float(strains[i])
        dt = float(times[i] - times[i - 1])
        lam_try = lam + dlam_prev
        sig_ax, g = evaluate(lam_try, eps, dt)
        converged = False
        if sig_ax is not None:
            it = 0
            lam_prev_eval, g_prev_eval = lam_try, g
            while it < LATERAL_MAX_ITER:
                if abs(g) < LATERAL_TOL_MPA:
                    converged = True
                    break
                dl = -g / slope
                dl = max(-LATERAL_MAX_DLAM, min(LATERAL_MAX_DLAM, dl))
                lam_new = lam_try + dl
                sig_ax, g_new = evaluate(lam_new, eps, dt)
                if sig_ax is None:
                    break
                if abs(lam_new - lam_prev_eval) > 1e-14 and g_new != g_prev_eval:
                    slope = (g_new - g_prev_eval) / (lam_new - lam_prev_eval)
                    if not math.isfinite(slope) or abs(slope) < 1.0:
                        slope = float(params.c11 + params.c12)
                lam_prev_eval, g_prev_eval = lam_new, g_new
                lam_try, g = lam_new, g_new
                it += 1
            else:
                converged = abs(g) < LATERAL_TOL_MPA
        if not converged:
            failed = True
            break
        # commit: swap trial buffers in
        fp, tfp = tfp, fp
        stat, tstat = tstat, stat
        chi, tchi = tchi, chi
        gacc, tgacc = tgacc, gacc
        acc, tacc = tacc, acc
        stress[i] = sig_ax
        lat_resid[i] = abs(g)
        dlam_prev = lam_try - lam
        lam = lam_try
        eps_prev = eps
        last_step = i

    end = last_step + 1
    curve = StressStrainCurve(time=times[:end], strain=strains[:end],
                              stress=stress[:end], cycle_index=cyc[:end])

    per_grain = []
    if keep_states:
        for g in range(n):
            st = slipcrystal.MaterialPointState(
                fp=fp[g].copy(), tau_c_stat=stat[g].copy(), chi=chi[g].copy(),
                gamma_acc=gacc[g].copy(), rho_gnd_edge=np.zeros(12),
                rho_gnd_screw=np.zeros(12), w_fip=float(acc[g, 0]),
                p_acc=float(acc[g, 1]),
                f_prev=np.diag([lam, lam, 1.0 + eps_prev]))
            per_grain.append(st)
    return PolycrystalRun(curve=curve, per_grain_final=per_grain,
                          failed=failed, lateral_residual=lat_resid[:end])


def _cycle_peak_valley_idx(curve, k):
    i0, i1 = curve.cycle_slice(k)
    seg = curve.strain[i0:i1 + 1]
    return i0 + int(np.argmax(seg)), i0 + int(np.argmin(seg))


def extract_cycle_endpoints(curve, cycle_a, cycle_b):
    """(dsig_max, |dsig_min|): stress gaps at the peak/valley strain
    between cycles b and a, located by the waveform phase (grid nodes)."""
    if cycle_b <= cycle_a:
        raise ValueError("cycle_b must follow cycle_a")
    if curve.n_cycles() < cycle_b:
        raise ValueError(
            f"curve holds {curve.n_cycles()} cycles, need {cycle_b}")
    pa, va = _cycle_peak_valley_idx(curve, cycle_a)
    pb, vb = _cycle_peak_valley_idx(curve, cycle_b)
    for idx_pair in ((pa, pb), (va, vb)):
        if not np.isclose(curve.strain[idx_pair[0]], curve.strain[idx_pair[1]],
                          rtol=0, atol=1e-12):
            raise ValueError("cycles have mismatched peak/valley strains")
    dmax = float(curve.stress[pb] - curve.stress[pa])
    dmin = float(abs(curve.stress[vb] - curve.stress[va]))
    return dmax, dmin


def _fmt(x):
    return repr(float(x))


def write_curve_csv(curve, path, seed=None, config_digest=None):
    """CSV export `time_s,strain,stress_mpa,cycle` (shortest round-trip)."""
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        f.write("time_s,strain,stress_mpa,cycle\n")
        for t, e, s, c in zip(curve.time, curve.strain, curve.stress,
                              curve.cycle_index):
            f.write(f"{_fmt(t)},{_fmt(e)},{_fmt(s)},{int(c)}\n")


def read_curve_csv(path):
    times, strains, stresses, cycles = [], [], [], []
    with open(path) as f:
        header = None
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line
                if header != "time_s,strain,stress_mpa,cycle":
                    raise ValueError(f"unexpected curve header: {header!r}")
                continue
            t, e, s, c = line.split(",")
            times.append(float(t))
            strains.append(float(e))
            stresses.append(float(s))
            cycles.append(int(c))
    return StressStrainCurve(time=np.array(times), strain=np.array(strains),
                             stress=np.array(stresses),
                             cycle_index=np.array(cycles, dtype=np.int64))
