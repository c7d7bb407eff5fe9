"""Post-run fatigue analytics: per-grain plastic strain energy density,
twin vs no-twin comparison with lognormal fits of the top grains, and the
failure-site report (critical grain, CDF positions, misorientation,
Schmid factor).
"""

import dataclasses
import math

import numpy as np

from . import microstructure, polycrystal

LOADING_AXIS = np.array([0.0, 0.0, 1.0])
TOP_K_DEFAULT = 150


@dataclasses.dataclass
class GrainFipRecord:
    grain_id: int
    w_max: float
    is_twin_adjacent: bool
    diameter_3d: float
    schmid: float
    avg_misorientation: float
    gnd_proxy: float = None


@dataclasses.dataclass
class FailureReport:
    critical: GrainFipRecord
    cdf_gnd: float
    cdf_diameter: float
    ensemble_id: int


def collect_fip(run, ensemble, gnd_by_grain=None):
    """One record per grain; gnd_by_grain (id -> density) is attached only
    when a voxel-field analysis supplied it."""
    if run.failed:
        raise ValueError("cannot collect FIP records from a failed run")
    if len(run.per_grain_final) != len(ensemble.grains):
        raise ValueError("run and ensemble grain counts differ")
    twin_ids = {g.id for g in ensemble.grains if g.is_twin}
    records = []
    for g, state in zip(ensemble.grains, run.per_grain_final):
        adjacent = g.is_twin or any(n in twin_ids for n in g.neighbors)
        avg_mis = microstructure.average_misorientation(ensemble, g.id) \
            if g.neighbors else float("nan")
        records.append(GrainFipRecord(
            grain_id=g.id,
            w_max=float(state.w_fip),
            is_twin_adjacent=bool(adjacent),
            diameter_3d=g.diameter_3d,
            schmid=microstructure.schmid_factor(g.orientation, LOADING_AXIS),
            avg_misorientation=avg_mis,
            gnd_proxy=None if gnd_by_grain is None
            else gnd_by_grain.get(g.id)))
    return records


def failure_report(records, ensemble, ensemble_id=0):
    """Critical grain = argmax w_max (ties: lowest grain id); CDF values
    are evaluated against the same ensemble's distributions. The GND CDF
    is only populated when every record carries a gnd_proxy."""
    if not records:
        raise ValueError("no FIP records")
    critical = min(records, key=lambda r: (-r.w_max, r.grain_id))
    diam_cdf = microstructure.empirical_cdf(
        [g.diameter_3d for g in ensemble.grains])
    cdf_d = diam_cdf(critical.diameter_3d)
    cdf_g = None
    if all(r.gnd_proxy is not None for r in records):
        gnd_cdf = microstructure.empirical_cdf(
            [r.gnd_proxy for r in records])
        cdf_g = gnd_cdf(critical.gnd_proxy)
    return FailureReport(critical=critical, cdf_gnd=cdf_g,
                         cdf_diameter=cdf_d, ensemble_id=ensemble_id)


def lognormal_fit(values):
    """(mu_log, sigma_log) by moments of the logs; requires positives."""
    v = np.asarray(values, float)
    v = v[v > 0]
    if v.size < 2:
        raise ValueError("lognormal fit needs >= 2 positive values")
    logs = np.log(v)
    return float(logs.mean()), float(logs.std())


@dataclasses.dataclass
class TwinComparison:
    base_fit: tuple
    twin_fit: tuple
    base_curve: polycrystal.StressStrainCurve
    twin_curve: polycrystal.StressStrainCurve
    max_curve_diff: float
    peak_stress: float
    base_records: list
    twin_records: list
    twinned_ensemble: microstructure.Ensemble


def compare_twinned(ensemble_base, params, program, top_k=TOP_K_DEFAULT,
                    seed=0, twin_target=0.45):
    """Run the same loading on the base ensemble and on a twinned copy;
    fit lognormals to the top-k per-grain energies of each and report the
    macroscopic difference."""
    if any(g.is_twin for g in ensemble_base.grains):
        raise ValueError("base ensemble must be twin-free")
    twinned = ensemble_base
    rng = np.random.default_rng(seed)
    inserted = 0
    while twinned.twin_volume_fraction < twin_target:
        hosts = [g.id for g in twinned.grains if not g.is_twin]
        if not hosts or inserted > 10 * len(ensemble_base.grains):
            raise ValueError("twin target unreachable")
        gid = int(rng.choice(np.array(hosts)))
        frac = float(rng.uniform(0.2, 0.5))
        twinned = microstructure.insert_twins(
            twinned, gid, frac, seed=int(rng.integers(2 ** 31)))
        inserted += 1

    run_base = polycrystal.run_uniaxial(ensemble_base, params, program)
    run_twin = polycrystal.run_uniaxial(twinned, params, program)
    if run_base.failed or run_twin.failed:
        raise RuntimeError("twin-comparison simulation failed")

    rec_base = collect_fip(run_base, ensemble_base)
    rec_twin = collect_fip(run_twin, twinned)
    top_base = sorted((r.w_max for r in rec_base), reverse=True)[:top_k]
    top_twin = sorted((r.w_max for r in rec_twin), reverse=True)[:top_k]

    nshared = min(len(run_base.curve.stress), len(run_twin.curve.stress))
    diff = float(np.max(np.abs(run_base.curve.stress[:nshared]
                               - run_twin.curve.stress[:nshared])))
    peak = float(np.max(np.abs(run_base.curve.stress)))
    return TwinComparison(
        base_fit=lognormal_fit(top_base), twin_fit=lognormal_fit(top_twin),
        base_curve=run_base.curve, twin_curve=run_twin.curve,
        max_curve_diff=diff, peak_stress=peak,
        base_records=rec_base, twin_records=rec_twin,
        twinned_ensemble=twinned)


def write_failure_csv(reports, path, seed=None, config_digest=None):
    """`ensemble,twin_boundary,gnd_cdf,diameter_cdf,avg_misorientation_deg,
    schmid` rows; the GND column stays empty when no field was analyzed."""
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        f.write("ensemble,twin_boundary,gnd_cdf,diameter_cdf,"
                "avg_misorientation_deg,schmid\n")
        for rep in reports:
            gnd = "" if rep.cdf_gnd is None else repr(float(rep.cdf_gnd))
            twin = "Yes" if rep.critical.is_twin_adjacent else "No"
            f.write(f"{rep.ensemble_id},{twin},{gnd},"
                    f"{float(rep.cdf_diameter)!r},"
                    f"{float(rep.critical.avg_misorientation)!r},"
                    f"{float(rep.critical.schmid)!r}\n")
