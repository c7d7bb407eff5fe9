"""Hot numerical kernels for the rate-dependent slip model.

Everything here is written as plain numpy/scalar Python that numba can
compile in nopython mode. On import the module decides which path to use:

* default: each kernel is wrapped with ``numba.njit`` (``cache=True``,
  no fastmath so results stay IEEE-reproducible);
* ``CPCAL_DISABLE_NUMBA=1`` in the environment (or numba missing): the
  plain definitions are used unchanged. Slow, but bit-compatible - the
  benchmark in benchmarks/bench_kernels.py compares the two.

The 3x3 tensor algebra is unrolled to scalars on purpose: the grain
substep runs O(1e8) times during a calibration and array temporaries
dominate the cost otherwise.
"""

import math
import os

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and os.environ.get(
    "CPCAL_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")

# Layout of the packed parameter vector handed to the kernels.
P_N_RATE = 0
P_TAU_C0 = 1
P_C_GEOM = 2
P_RHO_SSD = 3
P_H0 = 4
P_TAU_S = 5
P_M_EXP = 6
P_H_KIN = 7
P_H_DYN = 8
P_GAMMA_DOT0 = 9
P_Q_COP = 10
P_Q_NONCOP = 11
P_C11 = 12
P_C12 = 13
P_C44 = 14
NPARAMS = 15

# Exponent clamp: keeps gamma_dot finite for absurd stress ratios so the
# substep controller (not a NaN) decides the step has failed.
_MAX_POW_EXP = 400.0

# |Cauchy| above this (MPa) marks the simulation failed (10 GPa).
STRESS_BLOWUP_MPA = 1.0e4


def _grain_step(f0, f1, dt, fp, stat, chi, gacc, acc, taylor,
                smat, nmat, plane_id, params, max_dgamma, max_substeps,
                sig_out):
    """Advance one material point from macro gradient f0 to f1 over dt.

    All tensors are expressed in the crystal frame. ``fp`` (3x3), ``stat``,
    ``chi``, ``gacc`` (12,) and ``acc`` ([w_fip, p_acc]) are updated in
    place; ``sig_out`` receives the crystal-frame Cauchy stress at the step
    end. ``taylor`` holds the (static within a step) forest-strengthening
    term of each system. Returns the number of substeps used, or -1 when
    the substep floor or the stress blow-up guard is hit.
    """
    n_rate = params[P_N_RATE]
    tau_c0 = params[P_TAU_C0]
    h0 = params[P_H0]
    tau_s = params[P_TAU_S]
    m_exp = params[P_M_EXP]
    h_kin = params[P_H_KIN]
    h_dyn = params[P_H_DYN]
    gd0 = params[P_GAMMA_DOT0]
    q_cop = params[P_Q_COP]
    q_ncop = params[P_Q_NONCOP]
    c11 = params[P_C11]
    c12 = params[P_C12]
    c44 = params[P_C44]

    # plastic deformation gradient in scalar registers
    p00 = fp[0, 0]; p01 = fp[0, 1]; p02 = fp[0, 2]
    p10 = fp[1, 0]; p11 = fp[1, 1]; p12 = fp[1, 2]
    p20 = fp[2, 0]; p21 = fp[2, 1]; p22 = fp[2, 2]

    d00 = f1[0, 0] - f0[0, 0]; d01 = f1[0, 1] - f0[0, 1]; d02 = f1[0, 2] - f0[0, 2]
    d10 = f1[1, 0] - f0[1, 0]; d11 = f1[1, 1] - f0[1, 1]; d12 = f1[1, 2] - f0[1, 2]
    d20 = f1[2, 0] - f0[2, 0]; d21 = f1[2, 1] - f0[2, 1]; d22 = f1[2, 2] - f0[2, 2]

    gdot = np.empty(12)
    tau = np.empty(12)
    splane = np.empty(4)

    w_fip = acc[0]
    p_acc = acc[1]

    theta = 0.0
    substeps = 0
    # one extra pass (theta >= 1.0) evaluates the final stress
    while True:
        at_end = theta >= 1.0 - 1.0e-12
        # macroscopic gradient at current substep position
        th = 1.0 if at_end else theta
        g00 = f0[0, 0] + th * d00; g01 = f0[0, 1] + th * d01; g02 = f0[0, 2] + th * d02
        g10 = f0[1, 0] + th * d10; g11 = f0[1, 1] + th * d11; g12 = f0[1, 2] + th * d12
        g20 = f0[2, 0] + th * d20; g21 = f0[2, 1] + th * d21; g22 = f0[2, 2] + th * d22

        # inverse of fp (adjugate / det)
        a00 = p11 * p22 - p12 * p21
        a01 = p02 * p21 - p01 * p22
        a02 = p01 * p12 - p02 * p11
        a10 = p12 * p20 - p10 * p22
        a11 = p00 * p22 - p02 * p20
        a12 = p02 * p10 - p00 * p12
        a20 = p10 * p21 - p11 * p20
        a21 = p01 * p20 - p00 * p21
        a22 = p00 * p11 - p01 * p10
        detp = p00 * a00 + p01 * a10 + p02 * a20
        if detp <= 0.0 or not math.isfinite(detp):
            return -1
        i00 = a00 / detp; i01 = a01 / detp; i02 = a02 / detp
        i10 = a10 / detp; i11 = a11 / detp; i12 = a12 / detp
        i20 = a20 / detp; i21 = a21 / detp; i22 = a22 / detp

        # elastic gradient Fe = F fp^-1
        e00 = g00 * i00 + g01 * i10 + g02 * i20
        e01 = g00 * i01 + g01 * i11 + g02 * i21
        e02 = g00 * i02 + g01 * i12 + g02 * i22
        e10 = g10 * i00 + g11 * i10 + g12 * i20
        e11 = g10 * i01 + g11 * i11 + g12 * i21
        e12 = g10 * i02 + g11 * i12 + g12 * i22
        e20 = g20 * i00 + g21 * i10 + g22 * i20
        e21 = g20 * i01 + g21 * i11 + g22 * i21
        e22 = g20 * i02 + g21 * i12 + g22 * i22

        # Green-Lagrange strain, Voigt (11,22,33,2*23,2*13,2*12)
        c00 = e00 * e00 + e10 * e10 + e20 * e20
        c11_ = e01 * e01 + e11 * e11 + e21 * e21
        c22_ = e02 * e02 + e12 * e12 + e22 * e22
        c01 = e00 * e01 + e10 * e11 + e20 * e21
        c02 = e00 * e02 + e10 * e12 + e20 * e22
        c12_ = e01 * e02 + e11 * e12 + e21 * e22
        ev1 = 0.5 * (c00 - 1.0)
        ev2 = 0.5 * (c11_ - 1.0)
        ev3 = 0.5 * (c22_ - 1.0)
        gv4 = c12_  # 2*E23
        gv5 = c02   # 2*E13
        gv6 = c01   # 2*E12

        # cubic stiffness, 2nd Piola-Kirchhoff
        s1 = c11 * ev1 + c12 * (ev2 + ev3)
        s2 = c11 * ev2 + c12 * (ev1 + ev3)
        s3 = c11 * ev3 + c12 * (ev1 + ev2)
        s4 = c44 * gv4
        s5 = c44 * gv5
        s6 = c44 * gv6

        dete = (e00 * (e11 * e22 - e12 * e21)
                - e01 * (e10 * e22 - e12 * e20)
                + e02 * (e10 * e21 - e11 * e20))
        if dete <= 0.0 or not math.isfinite(dete):
            return -1

        # Cauchy = Fe S Fe^T / det(Fe), S symmetric
        t00 = e00 * s1 + e01 * s6 + e02 * s5
        t01 = e00 * s6 + e01 * s2 + e02 * s4
        t02 = e00 * s5 + e01 * s4 + e02 * s3
        t10 = e10 * s1 + e11 * s6 + e12 * s5
        t11 = e10 * s6 + e11 * s2 + e12 * s4
        t12 = e10 * s5 + e11 * s4 + e12 * s3
        t20 = e20 * s1 + e21 * s6 + e22 * s5
        t21 = e20 * s6 + e21 * s2 + e22 * s4
        t22 = e20 * s5 + e21 * s4 + e22 * s3
        sg00 = (t00 * e00 + t01 * e01 + t02 * e02) / dete
        sg11 = (t10 * e10 + t11 * e11 + t12 * e12) / dete
        sg22 = (t20 * e20 + t21 * e21 + t22 * e22) / dete
        sg01 = (t00 * e10 + t01 * e11 + t02 * e12) / dete
        sg02 = (t00 * e20 + t01 * e21 + t02 * e22) / dete
        sg12 = (t10 * e20 + t11 * e21 + t12 * e22) / dete

        smax = max(abs(sg00), abs(sg11), abs(sg22),
                   abs(sg01), abs(sg02), abs(sg12))
        if smax > STRESS_BLOWUP_MPA or not math.isfinite(smax):
            return -1

        if at_end:
            sig_out[0, 0] = sg00
            sig_out[0, 1] = sg01
            sig_out[0, 2] = sg02
            sig_out[1, 0] = sg01
            sig_out[1, 1] = sg11
            sig_out[1, 2] = sg12
            sig_out[2, 0] = sg02
            sig_out[2, 1] = sg12
            sig_out[2, 2] = sg22
            break

        substeps += 1
        if substeps > max_substeps:
            return -1

        # resolved shear and flow rates
        gmax = 0.0
        for a in range(12):
            sa0 = smat[a, 0]; sa1 = smat[a, 1]; sa2 = smat[a, 2]
            na0 = nmat[a, 0]; na1 = nmat[a, 1]; na2 = nmat[a, 2]
            ta = (sa0 * (sg00 * na0 + sg01 * na1 + sg02 * na2)
                  + sa1 * (sg01 * na0 + sg11 * na1 + sg12 * na2)
                  + sa2 * (sg02 * na0 + sg12 * na1 + sg22 * na2))
            tau[a] = ta
            tce = tau_c0 + taylor[a] + stat[a]
            x = ta - chi[a]
            ax = abs(x)
            if ax > 0.0 and tce > 0.0:
                ex = n_rate * math.log(ax / tce)
                if ex > _MAX_POW_EXP:
                    ex = _MAX_POW_EXP
                gd = gd0 * math.exp(ex)
                if x < 0.0:
                    gd = -gd
            else:
                gd = 0.0
            gdot[a] = gd
            ag = abs(gd)
            if ag > gmax:
                gmax = ag

        # adaptive substep: cap max |dgamma|
        dth_rem = 1.0 - theta
        if gmax * dt * dth_rem <= max_dgamma:
            dth = dth_rem
        else:
            dth = max_dgamma / (gmax * dt)
        dts = dth * dt

        # plastic velocity gradient
        l00 = 0.0; l01 = 0.0; l02 = 0.0
        l10 = 0.0; l11 = 0.0; l12 = 0.0
        l20 = 0.0; l21 = 0.0; l22 = 0.0
        for a in range(12):
            gd = gdot[a]
            if gd == 0.0:
                continue
            sa0 = gd * smat[a, 0]; sa1 = gd * smat[a, 1]; sa2 = gd * smat[a, 2]
            na0 = nmat[a, 0]; na1 = nmat[a, 1]; na2 = nmat[a, 2]
            l00 += sa0 * na0; l01 += sa0 * na1; l02 += sa0 * na2
            l10 += sa1 * na0; l11 += sa1 * na1; l12 += sa1 * na2
            l20 += sa2 * na0; l21 += sa2 * na1; l22 += sa2 * na2

        # fp <- expm(Lp dts) fp, third-order series (|Lp dts| <= max_dgamma)
        x00 = l00 * dts; x01 = l01 * dts; x02 = l02 * dts
        x10 = l10 * dts; x11 = l11 * dts; x12 = l12 * dts
        x20 = l20 * dts; x21 = l21 * dts; x22 = l22 * dts
        y00 = x00 * x00 + x01 * x10 + x02 * x20
        y01 = x00 * x01 + x01 * x11 + x02 * x21
        y02 = x00 * x02 + x01 * x12 + x02 * x22
        y10 = x10 * x00 + x11 * x10 + x12 * x20
        y11 = x10 * x01 + x11 * x11 + x12 * x21
        y12 = x10 * x02 + x11 * x12 + x12 * x22
        y20 = x20 * x00 + x21 * x10 + x22 * x20
        y21 = x20 * x01 + x21 * x11 + x22 * x21
        y22 = x20 * x02 + x21 * x12 + x22 * x22
        z00 = x00 * y00 + x01 * y10 + x02 * y20
        z01 = x00 * y01 + x01 * y11 + x02 * y21
        z02 = x00 * y02 + x01 * y12 + x02 * y22
        z10 = x10 * y00 + x11 * y10 + x12 * y20
        z11 = x10 * y01 + x11 * y11 + x12 * y21
        z12 = x10 * y02 + x11 * y12 + x12 * y22
        z20 = x20 * y00 + x21 * y10 + x22 * y20
        z21 = x20 * y01 + x21 * y11 + x22 * y21
        z22 = x20 * y02 + x21 * y12 + x22 * y22
        b00 = 1.0 + x00 + 0.5 * y00 + z00 / 6.0
        b01 = x01 + 0.5 * y01 + z01 / 6.0
        b02 = x02 + 0.5 * y02 + z02 / 6.0
        b10 = x10 + 0.5 * y10 + z10 / 6.0
        b11 = 1.0 + x11 + 0.5 * y11 + z11 / 6.0
        b12 = x12 + 0.5 * y12 + z12 / 6.0
        b20 = x20 + 0.5 * y20 + z20 / 6.0
        b21 = x21 + 0.5 * y21 + z21 / 6.0
        b22 = 1.0 + x22 + 0.5 * y22 + z22 / 6.0
        q00 = b00 * p00 + b01 * p10 + b02 * p20
        q01 = b00 * p01 + b01 * p11 + b02 * p21
        q02 = b00 * p02 + b01 * p12 + b02 * p22
        q10 = b10 * p00 + b11 * p10 + b12 * p20
        q11 = b10 * p01 + b11 * p11 + b12 * p21
        q12 = b10 * p02 + b11 * p12 + b12 * p22
        q20 = b20 * p00 + b21 * p10 + b22 * p20
        q21 = b20 * p01 + b21 * p11 + b22 * p21
        q22 = b20 * p02 + b21 * p12 + b22 * p22
        p00 = q00; p01 = q01; p02 = q02
        p10 = q10; p11 = q11; p12 = q12
        p20 = q20; p21 = q21; p22 = q22

        # statistical hardening: q_ab has the two-level coplanar structure,
        # so sum(q_ab h_b) = q_ncop*S_tot + (q_cop-q_ncop)*S_plane(a)
        s_tot = 0.0
        splane[0] = 0.0; splane[1] = 0.0; splane[2] = 0.0; splane[3] = 0.0
        for b in range(12):
            ag = abs(gdot[b])
            if ag == 0.0:
                continue
            base = 1.0 - stat[b] / tau_s
            if base <= 0.0:
                continue
            hb = h0 * base ** m_exp * ag
            s_tot += hb
            splane[plane_id[b]] += hb
        for a in range(12):
            rate = q_ncop * s_tot + (q_cop - q_ncop) * splane[plane_id[a]]
            stat[a] += rate * dts
            gd = gdot[a]
            chi[a] += (h_kin * gd - h_dyn * chi[a] * abs(gd)) * dts
            gacc[a] += abs(gd) * dts
            w_fip += tau[a] * gd * dts

        lpn = (l00 * l00 + l01 * l01 + l02 * l02
               + l10 * l10 + l11 * l11 + l12 * l12
               + l20 * l20 + l21 * l21 + l22 * l22)
        p_acc += math.sqrt(2.0 / 3.0 * lpn) * dts

        theta += dth

    fp[0, 0] = p00; fp[0, 1] = p01; fp[0, 2] = p02
    fp[1, 0] = p10; fp[1, 1] = p11; fp[1, 2] = p12
    fp[2, 0] = p20; fp[2, 1] = p21; fp[2, 2] = p22
    acc[0] = w_fip
    acc[1] = p_acc
    return substeps


def _eval_batch_body(g, rot, f0s, f1s, dt,
                     fp, stat, chi, gacc, acc,
                     tfp, tstat, tchi, tgacc, tacc,
                     taylor, smat, nmat, plane_id, params,
                     max_dgamma, max_substeps,
                     ax_out, lat_out, sub_out, ok_out):
    """Trial-step grain g from the committed state (read-only) into the
    trial buffers, for sample-frame macroscopic gradients f0s -> f1s.

    Writes the grain's sample-frame axial stress (zz), mean lateral stress
    ((xx+yy)/2), substep count and success flag into its own slots, which
    keeps the result independent of the parallel schedule.
    """
    # rotate macro gradients to this grain's crystal frame: Fc = R^T F R
    r = rot[g]
    f0c = np.empty((3, 3))
    f1c = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            a0 = 0.0
            a1 = 0.0
            for k in range(3):
                rk = r[k, i]
                b0 = 0.0
                b1 = 0.0
                for l in range(3):
                    b0 += f0s[k, l] * r[l, j]
                    b1 += f1s[k, l] * r[l, j]
                a0 += rk * b0
                a1 += rk * b1
            f0c[i, j] = a0
            f1c[i, j] = a1

    for i in range(3):
        for j in range(3):
            tfp[g, i, j] = fp[g, i, j]
    for a in range(12):
        tstat[g, a] = stat[g, a]
        tchi[g, a] = chi[g, a]
        tgacc[g, a] = gacc[g, a]
    tacc[g, 0] = acc[g, 0]
    tacc[g, 1] = acc[g, 1]

    sig = np.empty((3, 3))
    ns = _grain_step(f0c, f1c, dt, tfp[g], tstat[g], tchi[g], tgacc[g],
                     tacc[g], taylor[g], smat, nmat, plane_id, params,
                     max_dgamma, max_substeps, sig)
    if ns < 0:
        ok_out[g] = 0
        ax_out[g] = 0.0
        lat_out[g] = 0.0
        sub_out[g] = 0
        return
    ok_out[g] = 1
    sub_out[g] = ns
    # sample-frame stress sigma_s = R sigma_c R^T; need zz, xx, yy
    sxx = 0.0
    syy = 0.0
    szz = 0.0
    for k in range(3):
        for l in range(3):
            skl = sig[k, l]
            sxx += r[0, k] * skl * r[0, l]
            syy += r[1, k] * skl * r[1, l]
            szz += r[2, k] * skl * r[2, l]
    ax_out[g] = szz
    lat_out[g] = 0.5 * (sxx + syy)


def _make_eval_batch(body):
    def eval_batch(rot, f0s, f1s, dt,
                   fp, stat, chi, gacc, acc,
                   tfp, tstat, tchi, tgacc, tacc,
                   taylor, smat, nmat, plane_id, params,
                   max_dgamma, max_substeps,
                   ax_out, lat_out, sub_out, ok_out):
        for g in range(rot.shape[0]):
            body(g, rot, f0s, f1s, dt,
                 fp, stat, chi, gacc, acc,
                 tfp, tstat, tchi, tgacc, tacc,
                 taylor, smat, nmat, plane_id, params,
                 max_dgamma, max_substeps,
                 ax_out, lat_out, sub_out, ok_out)
    return eval_batch


def _make_eval_batch_parallel(body):  # pragma: no cover - numba path
    import numba as nb

    @nb.njit(parallel=True, cache=True)
    def eval_batch(rot, f0s, f1s, dt,
                   fp, stat, chi, gacc, acc,
                   tfp, tstat, tchi, tgacc, tacc,
                   taylor, smat, nmat, plane_id, params,
                   max_dgamma, max_substeps,
                   ax_out, lat_out, sub_out, ok_out):
        for g in nb.prange(rot.shape[0]):
            body(g, rot, f0s, f1s, dt,
                 fp, stat, chi, gacc, acc,
                 tfp, tstat, tchi, tgacc, tacc,
                 taylor, smat, nmat, plane_id, params,
                 max_dgamma, max_substeps,
                 ax_out, lat_out, sub_out, ok_out)
    return eval_batch


if NUMBA_ENABLED:
    grain_step = numba.njit(cache=True)(_grain_step)
    # _eval_batch_body resolves the _grain_step global at compile time, so
    # point it at the compiled version before compiling the body.
    _grain_step = grain_step
    _body = numba.njit(cache=True)(_eval_batch_body)
    eval_batch = _make_eval_batch_parallel(_body)
else:
    grain_step = _grain_step
    eval_batch = _make_eval_batch(_eval_batch_body)


def set_threads(n):
    """Cap kernel parallelism (numba threads); no-op on the numpy path."""
    if NUMBA_ENABLED and n and n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
