"""Shapley-value sensitivity of GP surrogates trained on six probe targets:
stress at four fixed phases of the final cycle plus the two cycle-gap
terms. Attributions use exact enumeration of all feature coalitions with
the interventional (marginal) value function against a background sample.
"""

import dataclasses
import itertools
import math

import numpy as np

from . import gpsurrogate
from .bayesopt import PARAM_NAMES
from .polycrystal import extract_cycle_endpoints

PROBE_KINDS = ("stress_at_peak_tension", "stress_mid_unloading",
               "stress_at_peak_compression", "stress_mid_loading",
               "gap_max32", "gap_min32_abs")

BACKGROUND_CAP = 100


@dataclasses.dataclass(frozen=True)
class ProbeTarget:
    kind: str

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"unknown probe kind {self.kind!r}")


def default_targets():
    return [ProbeTarget(k) for k in PROBE_KINDS]


def _final_cycle_arrays(curve):
    k = int(curve.cycle_index.max())
    i0, i1 = curve.cycle_slice(k)
    return (curve.time[i0:i1 + 1], curve.strain[i0:i1 + 1],
            curve.stress[i0:i1 + 1])


def _stress_at_crossing(t, e, s, level, rising, lo, hi):
    """Stress where strain crosses `level` on the monotone branch between
    sample indices lo..hi (inclusive), interpolated linearly."""
    for i in range(lo, hi):
        e0, e1 = e[i], e[i + 1]
        if rising and e0 <= level <= e1 and e1 > e0:
            w = (level - e0) / (e1 - e0)
            return float(s[i] + w * (s[i + 1] - s[i]))
        if not rising and e1 <= level <= e0 and e0 > e1:
            w = (e0 - level) / (e0 - e1)
            return float(s[i] + w * (s[i + 1] - s[i]))
    raise ValueError("crossing level not found on branch")


def extract_probe(run, target):
    """Probe stress (MPa) from a successful run's final cycle; the mid
    points sit at half the peak strain on the rising/falling branch."""
    if run.failed:
        raise ValueError("cannot extract probes from a failed run")
    if target.kind == "gap_max32":
        return extract_cycle_endpoints(run.curve, 2, 3)[0]
    if target.kind == "gap_min32_abs":
        return extract_cycle_endpoints(run.curve, 2, 3)[1]
    t, e, s = _final_cycle_arrays(run.curve)
    ipk = int(np.argmax(e))
    ivl = int(np.argmin(e))
    if target.kind == "stress_at_peak_tension":
        return float(s[ipk])
    if target.kind == "stress_at_peak_compression":
        return float(s[ivl])
    half = 0.5 * float(e[ipk])
    if target.kind == "stress_mid_loading":
        return _stress_at_crossing(t, e, s, half, True, 0, ipk)
    # mid-unloading: falling branch from the peak
    end = ivl if ivl > ipk else len(e) - 1
    return _stress_at_crossing(t, e, s, half, False, ipk, end)


def _coalition_weights(d):
    """w[s] = s! (d - s - 1)! / d! for coalition size s (excluding i)."""
    return np.array([math.factorial(s) * math.factorial(d - s - 1)
                     / math.factorial(d) for s in range(d)])


def _predict_mean(model, queries):
    if callable(model):
        return np.asarray(model(queries), float)
    mean, _ = gpsurrogate.predict(model, queries)
    return np.asarray(mean, float)


def shapley_values(model, x, background):
    """Exact Shapley attribution of the model prediction at x.

    ``model`` is a fitted GPModel or any callable mapping (n, d) inputs to
    n predictions. Coalition value: mean prediction with coalition features
    fixed at x and the rest replaced by background rows (interventional
    expectation), over all 2^d coalitions. Background is capped at
    BACKGROUND_CAP rows.
    """
    x = np.asarray(x, float)
    background = np.atleast_2d(np.asarray(background, float))
    if background.shape[0] == 0:
        raise ValueError("background must be nonempty")
    if background.shape[0] > BACKGROUND_CAP:
        background = background[:BACKGROUND_CAP]
    d = x.size
    k = background.shape[0]
    masks = list(itertools.product((0, 1), repeat=d))
    # batch all coalition evaluations into one prediction call
    queries = np.empty((len(masks) * k, d))
    for mi, mask in enumerate(masks):
        block = background.copy()
        for j in range(d):
            if mask[j]:
                block[:, j] = x[j]
        queries[mi * k:(mi + 1) * k] = block
    mean = _predict_mean(model, queries)
    v = mean.reshape(len(masks), k).mean(axis=1)

    value = {mask: v[mi] for mi, mask in enumerate(masks)}
    w = _coalition_weights(d)
    phi = np.zeros(d)
    for mask in masks:
        for j in range(d):
            if mask[j]:
                continue
            with_j = tuple(m | (1 if idx == j else 0)
                           for idx, m in enumerate(mask))
            phi[j] += w[sum(mask)] * (value[with_j] - value[mask])
    return phi


@dataclasses.dataclass
class ShapReport:
    target: ProbeTarget
    feature_values: np.ndarray   # (n, d) raw parameter values
    attributions: np.ndarray     # (n, d)
    baseline: float              # mean background prediction
    r2_holdout: float
    model: gpsurrogate.GPModel

    def mean_abs(self):
        return np.abs(self.attributions).mean(axis=0)

    def ranking(self):
        """Parameter names sorted by decreasing mean |phi|."""
        order = np.argsort(self.mean_abs())[::-1]
        return [PARAM_NAMES[i] for i in order]


def sensitivity_study(params_matrix, runs, bounds, targets=None, seed=0,
                      holdout_fraction=0.3, min_successful=30):
    """One GP + per-row exact Shapley attributions per probe target.

    ``runs[i]`` pairs with ``params_matrix[i]``; failed runs are excluded.
    Returns {kind: ShapReport}; degenerate targets are skipped with a
    diagnostic entry of None.
    """
    targets = targets or default_targets()
    ok = [i for i, r in enumerate(runs) if not r.failed]
    if len(ok) < min_successful:
        raise ValueError(f"need >= {min_successful} successful simulations, "
                         f"got {len(ok)}")
    x = np.asarray(params_matrix, float)[ok]
    arr = bounds.as_array() if hasattr(bounds, "as_array") \
        else np.asarray(bounds, float)
    rng = np.random.default_rng(seed)
    reports = {}
    for target in targets:
        y = np.array([extract_probe(runs[i], target) for i in ok])
        if float(y.std()) == 0.0:
            reports[target.kind] = None
            continue
        n = len(y)
        perm = rng.permutation(n)
        n_hold = max(1, int(round(holdout_fraction * n)))
        test_idx, train_idx = perm[:n_hold], perm[n_hold:]
        model_holdout = gpsurrogate.fit(x[train_idx], y[train_idx], arr,
                                        seed=seed)
        pred, _ = gpsurrogate.predict(model_holdout, x[test_idx])
        r2 = gpsurrogate.r2_score(y[test_idx], np.atleast_1d(pred))
        model = gpsurrogate.fit(x, y, arr, seed=seed)
        background = x
        base_mean, _ = gpsurrogate.predict(model, background[:BACKGROUND_CAP])
        baseline = float(np.atleast_1d(base_mean).mean())
        phis = np.array([shapley_values(model, xi, background) for xi in x])
        reports[target.kind] = ShapReport(
            target=target, feature_values=x, attributions=phis,
            baseline=baseline, r2_holdout=float(r2), model=model)
    return reports


def write_report_csv(reports, path, seed=None, config_digest=None):
    """`target,row,param,feature_value,shap_value` long-format export."""
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        f.write("target,row,param,feature_value,shap_value\n")
        for kind, rep in reports.items():
            if rep is None:
                continue
            n, d = rep.attributions.shape
            for i in range(n):
                for j in range(d):
                    f.write(f"{kind},{i},{PARAM_NAMES[j]},"
                            f"{float(rep.feature_values[i, j])!r},"
                            f"{float(rep.attributions[i, j])!r}\n")
