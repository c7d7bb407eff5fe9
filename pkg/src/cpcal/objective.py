"""Calibration objective: experiment ingestion, phase-uniform comparison
stations over a two-cycle window, RMSE and the weighted cycle-gap term.

The comparison window runs valley-to-valley around the two target cycles
(valley preceding the first peak to the second cycle's valley) so it splits
into exactly four equal monotone branches; the n stations sit at global
phases (i + 0.5)/n, giving n/4 stations per branch and keeping loading and
unloading branches separate. Stresses are interpolated linearly in time,
which equals phase interpolation for a triangular waveform.
"""

import dataclasses
import math

import numpy as np

from .polycrystal import StressStrainCurve, extract_cycle_endpoints

PENALTY_MPA = 500.0


@dataclasses.dataclass
class ExperimentalCycles:
    """Two consecutive stabilized cycles, stored as the valley-to-valley
    window containing both peaks."""
    amplitude: float
    curve: StressStrainCurve
    cycle_pair: tuple = (2, 3)


@dataclasses.dataclass
class ObjectiveConfig:
    lam: float = 0.5
    n_points: int = 44
    penalty: float = PENALTY_MPA
    sim_cycles: int = 3

    def validate(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.n_points < 4 or self.n_points % 4:
            raise ValueError("n_points must be >= 4 and divisible by 4")
        if self.sim_cycles < 3:
            raise ValueError("need >= 3 simulated cycles (window needs the "
                             "valley before the first compared peak)")


@dataclasses.dataclass
class CalibrationCase:
    cases: list  # of ExperimentalCycles
    bounds: "object" = None

    def validate(self):
        if not self.cases:
            raise ValueError("at least one experimental case is required")


class ExperimentFormatError(ValueError):
    pass


def _find_extrema(strain):
    """Indices of interior strain-rate sign changes (peaks/valleys)."""
    ds = np.diff(strain)
    sign = np.sign(ds)
    # carry the previous sign across flat segments
    for i in range(1, len(sign)):
        if sign[i] == 0:
            sign[i] = sign[i - 1]
    flips = np.flatnonzero(sign[1:] * sign[:-1] < 0) + 1
    return flips


def _window_curve(curve, first_cycle_peak, n_cycles=2):
    """Valley-to-valley two-cycle window around peaks k, k+1 of the record.

    Peaks/valleys are located from strain-rate zero crossings; the window
    starts at the valley preceding peak k and ends at the valley after
    peak k+1.
    """
    ext = _find_extrema(curve.strain)
    if ext.size < 2:
        raise ExperimentFormatError("fewer than 2 complete cycles in record")
    peaks = [i for i in ext if curve.strain[i] > curve.strain[i - 1]]
    valleys = [i for i in ext if curve.strain[i] < curve.strain[i - 1]]
    if len(peaks) < first_cycle_peak + 1:
        raise ExperimentFormatError(
            f"record holds {len(peaks)} peaks, need cycle pair starting at "
            f"cycle {first_cycle_peak}")
    p_a = peaks[first_cycle_peak - 1]
    p_b = peaks[first_cycle_peak]
    before = [v for v in valleys if v < p_a]
    after = [v for v in valleys if v > p_b]
    if not before:
        raise ExperimentFormatError(
            "no valley precedes the first compared cycle (compare from "
            "cycle 2 onward)")
    if not after:
        raise ExperimentFormatError(
            "record ends before the second compared cycle's valley")
    i0, i1 = before[-1], after[0]
    return StressStrainCurve(
        time=curve.time[i0:i1 + 1] - curve.time[i0],
        strain=curve.strain[i0:i1 + 1],
        stress=curve.stress[i0:i1 + 1],
        cycle_index=curve.cycle_index[i0:i1 + 1]
        if curve.cycle_index.size else np.zeros(i1 - i0 + 1, dtype=np.int64))


def experiment_from_curve(curve, cycle_pair=None):
    """Build an ExperimentalCycles window from a full cyclic record.

    cycle_pair names the (first, second) compared cycles by peak count;
    default is the middle two of the record.
    """
    ext = _find_extrema(curve.strain)
    peaks = [i for i in ext if curve.strain[i] > curve.strain[i - 1]]
    n_cyc = len(peaks)
    if cycle_pair is None:
        a = max(2, (n_cyc + 1) // 2)
        cycle_pair = (a, a + 1)
    if cycle_pair[1] != cycle_pair[0] + 1:
        raise ValueError("cycle pair must be consecutive")
    win = _window_curve(curve, cycle_pair[0])
    amp = 0.5 * (win.strain.max() - win.strain.min())
    hi, lo = win.strain.max(), -win.strain.min()
    if abs(hi - amp) > 0.01 * amp or abs(lo - amp) > 0.01 * amp:
        raise ExperimentFormatError(
            "strain extrema deviate more than 1% from +-amplitude")
    return ExperimentalCycles(amplitude=float(amp), curve=win,
                              cycle_pair=tuple(cycle_pair))


def load_experiment(path, cycle_pair=None):
    """Read a `time_s,strain,stress_mpa` CSV and keep two stable cycles."""
    times, strains, stresses = [], [], []
    with open(path) as f:
        header = None
        for row_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line
                if header.split(",")[:3] != ["time_s", "strain", "stress_mpa"]:
                    raise ExperimentFormatError(
                        f"row {row_no}: expected header time_s,strain,"
                        f"stress_mpa, got {header!r}")
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise ExperimentFormatError(f"row {row_no}: malformed row")
            try:
                t, e, s = (float(x) for x in parts[:3])
            except ValueError as exc:
                raise ExperimentFormatError(
                    f"row {row_no}: non-numeric value") from exc
            if times and t <= times[-1]:
                raise ExperimentFormatError(
                    f"row {row_no}: time is not strictly increasing")
            times.append(t)
            strains.append(e)
            stresses.append(s)
    if len(times) < 8:
        raise ExperimentFormatError("too few samples for cycle detection")
    curve = StressStrainCurve(time=np.array(times), strain=np.array(strains),
                              stress=np.array(stresses),
                              cycle_index=np.zeros(len(times), np.int64))
    return experiment_from_curve(curve, cycle_pair)


def station_phases(n_points):
    """Global window phases of the comparison stations: (i + 0.5)/n."""
    return (np.arange(n_points) + 0.5) / n_points


def _interp_window(curve_window, phases):
    t0, t1 = curve_window.time[0], curve_window.time[-1]
    ts = t0 + phases * (t1 - t0)
    return np.interp(ts, curve_window.time, curve_window.stress)


def sim_window(sim_curve, sim_cycles=None):
    """The simulation's last-two-cycles window (valley-to-valley)."""
    n_cyc = int(sim_curve.cycle_index.max()) if sim_curve.cycle_index.size \
        else 0
    if sim_cycles is not None and n_cyc < sim_cycles:
        raise ValueError(f"simulation holds {n_cyc} cycles, "
                         f"need {sim_cycles}")
    if n_cyc < 3:
        raise ValueError("need >= 3 simulated cycles for the comparison "
                         "window")
    return _window_curve(sim_curve, n_cyc - 1)


def sample_comparison_points(exp, sim_curve, n_points=44, sim_cycles=3):
    """Paired (sigma_exp, sigma_sim) stresses at the n phase stations."""
    if n_points < 4 or n_points % 4:
        raise ValueError("n_points must be >= 4 and divisible by 4")
    win_sim = sim_window(sim_curve, sim_cycles)
    phases = station_phases(n_points)
    sig_exp = _interp_window(exp.curve, phases)
    sig_sim = _interp_window(win_sim, phases)
    return list(zip(sig_exp.tolist(), sig_sim.tolist()))


def rmse(pairs):
    if not pairs:
        raise ValueError("rmse of empty pair list")
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in pairs) / len(pairs))


def combine_objective(rmse_value, dmax32, dmin32_abs, lam):
    """RMSE plus the weighted mean cycle-gap term."""
    return rmse_value + lam * (dmax32 + dmin32_abs) / 2.0


def objective_value(exp, sim_run, cfg):
    """RMSE at the comparison stations plus the weighted gap between the
    endpoints of simulation cycles 2 and 3; the penalty for a failed run."""
    cfg.validate()
    if sim_run.failed:
        return cfg.penalty
    pairs = sample_comparison_points(exp, sim_run.curve, cfg.n_points,
                                     cfg.sim_cycles)
    base = rmse(pairs)
    if cfg.lam == 0.0:
        return base
    dmax, dmin = extract_cycle_endpoints(sim_run.curve, 2, 3)
    return combine_objective(base, dmax, dmin, cfg.lam)


def multi_case_objective(case, runs, cfg):
    """Mean objective over the case's experiments; runs maps each case
    index to its PolycrystalRun (failed runs contribute the penalty)."""
    case.validate()
    vals = [objective_value(exp, runs[i], cfg)
            for i, exp in enumerate(case.cases)]
    return math.fsum(vals) / len(vals)


def write_breakdown_csv(rows, path, seed=None, config_digest=None):
    """`case,rmse_mpa,dmax32_mpa,dmin32_mpa,lambda,objective_mpa,failed`."""
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        f.write("case,rmse_mpa,dmax32_mpa,dmin32_mpa,lambda,objective_mpa,"
                "failed\n")
        for r in rows:
            f.write(",".join([
                str(r["case"]), repr(float(r["rmse_mpa"])),
                repr(float(r["dmax32_mpa"])), repr(float(r["dmin32_mpa"])),
                repr(float(r["lambda"])), repr(float(r["objective_mpa"])),
                str(int(r["failed"])),
            ]) + "\n")
