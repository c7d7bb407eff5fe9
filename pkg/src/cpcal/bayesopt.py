"""Gaussian-process Bayesian optimization of the 9 constitutive parameters:
LHS seeding over the search domain, expected-improvement proposals from
seeded Sobol candidates with local polish, penalty handling for failed
simulations, and history/trajectory exports.
"""

import dataclasses
import math

import numpy as np
import scipy.optimize
import scipy.stats

from . import gpsurrogate, objective
from .slipcrystal import CALIBRATED_FIELDS, MaterialParams

PARAM_NAMES = CALIBRATED_FIELDS

# Search domain for the 9 calibrated parameters.
DEFAULT_BOUNDS_TABLE = {
    "n_rate": (5.0, 25.0),
    "tau_c0": (20.0, 150.0),
    "c_geom": (0.1, 0.5),
    "rho_ssd": (1.0, 100.0),
    "h0": (10.0, 1000.0),
    "tau_s": (50.0, 1000.0),
    "m_exp": (1.0, 15.0),
    "h_kin": (1000.0, 80000.0),
    "h_dyn": (0.0, 3000.0),
}

N_CANDIDATES = 4096
N_POLISH = 8
DUPLICATE_TOL = 1.0e-9


@dataclasses.dataclass
class Bounds:
    table: dict = dataclasses.field(
        default_factory=lambda: dict(DEFAULT_BOUNDS_TABLE))

    def __post_init__(self):
        for name in PARAM_NAMES:
            lo, hi = self.table[name]
            if not lo < hi:
                raise ValueError(f"bounds for {name}: need lower < upper")

    def as_array(self):
        return np.array([self.table[n] for n in PARAM_NAMES], float)

    def normalize(self, x):
        arr = self.as_array()
        return (np.asarray(x, float) - arr[:, 0]) / (arr[:, 1] - arr[:, 0])

    def denormalize(self, u):
        arr = self.as_array()
        return arr[:, 0] + np.asarray(u, float) * (arr[:, 1] - arr[:, 0])


@dataclasses.dataclass
class BOConfig:
    n_initial: int = 50
    budget: int = 75
    seed: int = 0
    lam: float = 0.5
    n_points: int = 44
    penalty: float = objective.PENALTY_MPA
    sim_cycles: int = 3
    acquisition_candidates: int = N_CANDIDATES
    gp_restarts: int = 8

    def validate(self):
        if self.n_initial < 0:
            raise ValueError("n_initial must be >= 0")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")

    def objective_config(self):
        return objective.ObjectiveConfig(lam=self.lam, n_points=self.n_points,
                                         penalty=self.penalty,
                                         sim_cycles=self.sim_cycles)


@dataclasses.dataclass
class HistoryRow:
    iteration: int
    phase: str  # "initial" | "bo"
    params: np.ndarray
    objective: float
    failed: bool


@dataclasses.dataclass
class BOHistory:
    rows: list = dataclasses.field(default_factory=list)

    def append(self, row):
        self.rows.append(row)

    def objectives(self):
        return np.array([r.objective for r in self.rows])

    def params_matrix(self):
        return np.array([r.params for r in self.rows])

    def best_so_far(self):
        return np.minimum.accumulate(self.objectives())

    def best(self):
        objs = self.objectives()
        i = int(np.argmin(objs))
        return self.rows[i]


def lhs_sample(bounds, n, seed):
    """Latin hypercube over the bounds: one point per stratum per dimension,
    uniform within strata, deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    arr = bounds.as_array()
    d = arr.shape[0]
    rng = np.random.default_rng(seed)
    u = np.empty((n, d))
    for j in range(d):
        strata = (rng.permutation(n) + rng.random(n)) / n
        u[:, j] = strata
    return arr[:, 0] + u * (arr[:, 1] - arr[:, 0])


def _predict(model, x):
    if callable(model) and not isinstance(model, gpsurrogate.GPModel):
        return model(x)
    return gpsurrogate.predict(model, x)


def expected_improvement(model, x, f_best):
    """EI for minimization: (f_best - mu) Phi(z) + sigma phi(z); reduces to
    max(f_best - mu, 0) at sigma = 0. ``model`` is a GPModel or a callable
    returning (mean, variance)."""
    mu, var = _predict(model, x)
    mu = np.atleast_1d(np.asarray(mu, float))
    sigma = np.sqrt(np.atleast_1d(np.asarray(var, float)))
    improve = f_best - mu
    ei = np.maximum(improve, 0.0)
    mask = sigma > 0.0
    if np.any(mask):
        z = improve[mask] / sigma[mask]
        ei[mask] = improve[mask] * scipy.stats.norm.cdf(z) \
            + sigma[mask] * scipy.stats.norm.pdf(z)
    ei = np.maximum(ei, 0.0)
    return float(ei[0]) if np.asarray(x).ndim == 1 else ei


def propose_next(model, bounds, f_best, seed, n_candidates=N_CANDIDATES,
                 existing=None):
    """argmax EI via seeded Sobol candidates plus local polish of the top
    candidates; falls back to the highest-variance candidate when EI is
    flat or every optimum duplicates a previous evaluation."""
    arr = bounds.as_array()
    d = arr.shape[0]
    sob = scipy.stats.qmc.Sobol(d=d, scramble=True, seed=seed)
    cand_u = sob.random(n_candidates)
    cand = arr[:, 0] + cand_u * (arr[:, 1] - arr[:, 0])
    ei = expected_improvement(model, cand, f_best)

    pool = []
    order = np.argsort(ei)[::-1]
    for idx in order[:N_POLISH]:
        res = scipy.optimize.minimize(
            lambda u: -expected_improvement(model, bounds.denormalize(u),
                                            f_best),
            cand_u[idx], method="L-BFGS-B", bounds=[(0.0, 1.0)] * d,
            options={"maxiter": 50})
        pool.append((-res.fun, np.clip(res.x, 1e-12, 1.0 - 1e-12)))
    pool.sort(key=lambda t: t[0], reverse=True)

    existing_u = None
    if existing is not None and len(existing):
        existing_u = bounds.normalize(np.atleast_2d(existing))

    def is_duplicate(u):
        if existing_u is None:
            return False
        return bool(np.min(np.linalg.norm(existing_u - u, axis=1))
                    < DUPLICATE_TOL)

    best_ei = pool[0][0] if pool else 0.0
    if best_ei > 0.0:
        for ei_val, u in pool:
            if ei_val <= 0.0:
                break
            if not is_duplicate(u):
                return bounds.denormalize(u)
    # fully-explored fallback: highest predictive variance candidate
    _, var = _predict(model, cand)
    for idx in np.argsort(np.atleast_1d(var))[::-1]:
        u = np.clip(cand_u[idx], 1e-12, 1.0 - 1e-12)
        if not is_duplicate(u):
            return bounds.denormalize(u)
    return bounds.denormalize(np.clip(cand_u[0], 1e-12, 1.0 - 1e-12))


def make_evaluator(case, cfg, simulator, base_params=None):
    """Wrap the simulator into params-vector -> (objective, failed).

    ``simulator(params: MaterialParams, amplitude) -> PolycrystalRun``;
    exceptions are treated as failed evaluations (penalty).
    """
    base = base_params or MaterialParams(*[1.0] * 9)
    ocfg = cfg.objective_config()

    def evaluate(vec):
        params = base.replace_calibrated(vec)
        runs = {}
        failed = False
        for i, exp in enumerate(case.cases):
            try:
                runs[i] = simulator(params, exp.amplitude)
            except Exception:
                failed = True
                break
            failed = failed or runs[i].failed
        if failed or len(runs) < len(case.cases):
            return float(cfg.penalty), True
        val = objective.multi_case_objective(case, runs, ocfg)
        return float(val), False

    return evaluate


def calibrate(case, cfg, simulator, base_params=None):
    """Run LHS seeding plus the EI loop; returns (BOHistory, best_params).

    Failed evaluations are recorded at the penalty and kept in the GP
    training set. With n_initial = 0 the first two budget iterations fall
    back to seeded uniform draws (the GP needs two observations).
    """
    cfg.validate()
    case.validate()
    bounds = case.bounds or Bounds()
    evaluate = make_evaluator(case, cfg, simulator, base_params)
    history = BOHistory()
    it = 0

    if cfg.n_initial > 0:
        design = lhs_sample(bounds, cfg.n_initial, cfg.seed)
        for vec in design:
            val, failed = evaluate(vec)
            history.append(HistoryRow(it, "initial", np.asarray(vec, float),
                                      val, failed))
            it += 1

    rng = np.random.default_rng(cfg.seed + 777)
    arr = bounds.as_array()
    for b in range(cfg.budget):
        if len(history.rows) < 2:
            vec = arr[:, 0] + rng.random(arr.shape[0]) \
                * (arr[:, 1] - arr[:, 0])
        else:
            x = history.params_matrix()
            y = history.objectives()
            model = gpsurrogate.fit(x, y, arr, n_restarts=cfg.gp_restarts,
                                    seed=cfg.seed + 1000 + b)
            vec = propose_next(model, bounds, float(y.min()),
                               seed=cfg.seed + 2000 + b, existing=x,
                               n_candidates=cfg.acquisition_candidates)
        val, failed = evaluate(vec)
        history.append(HistoryRow(it, "bo", np.asarray(vec, float), val,
                                  failed))
        it += 1

    best_row = history.best()
    base = base_params or MaterialParams(*[1.0] * 9)
    return history, base.replace_calibrated(best_row.params)


def drop_best_initial(design, objectives, n_keep):
    """Reduced-initial-data study helper: remove the best-performing rows
    of an evaluated design, keeping the n_keep worst."""
    objectives = np.asarray(objectives, float)
    if n_keep > len(objectives):
        raise ValueError("n_keep exceeds the design size")
    order = np.argsort(objectives)[::-1]  # worst first
    keep = np.sort(order[:n_keep])
    return np.asarray(design)[keep], objectives[keep]


HISTORY_HEADER = ("iter,phase,n_rate,tau_c0,c_geom,rho_ssd,h0,tau_s,m_exp,"
                  "h_kin,h_dyn,objective_mpa,failed")


def write_history_csv(history, path, seed=None, config_digest=None):
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        f.write(HISTORY_HEADER + "\n")
        for r in history.rows:
            vals = ",".join(repr(float(v)) for v in r.params)
            f.write(f"{r.iteration},{r.phase},{vals},"
                    f"{float(r.objective)!r},{int(r.failed)}\n")


def read_history_csv(path):
    history = BOHistory()
    with open(path) as f:
        header = None
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line
                if header != HISTORY_HEADER:
                    raise ValueError(f"unexpected history header: {header!r}")
                continue
            parts = line.split(",")
            history.append(HistoryRow(
                iteration=int(parts[0]), phase=parts[1],
                params=np.array([float(x) for x in parts[2:11]]),
                objective=float(parts[11]), failed=bool(int(parts[12]))))
    return history


def write_trajectories_csv(history, path, seed=None, config_digest=None):
    """Long-format per-parameter trajectories plus the derived
    c_geom*sqrt(rho_ssd) series (the two parameters act through their
    product with sqrt of the density)."""
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        f.write("iter,param,value\n")
        for r in history.rows:
            for name, v in zip(PARAM_NAMES, r.params):
                f.write(f"{r.iteration},{name},{float(v)!r}\n")
            derived = float(r.params[2]) * math.sqrt(float(r.params[3]))
            f.write(f"{r.iteration},c_geom_sqrt_rho_ssd,{derived!r}\n")


def write_best_params(params, path, objective_value=None, seed=None,
                      config_digest=None):
    """Optimized-parameter table (name, description, value per row)."""
    desc = {
        "n_rate": "Strain rate sensitivity",
        "tau_c0": "Initial CRSS (MPa)",
        "c_geom": "Geometric factor",
        "rho_ssd": "SSD density (1/um^2)",
        "h0": "Hardening rate (MPa)",
        "tau_s": "Saturation slip strength (MPa)",
        "m_exp": "Hardening exponent",
        "h_kin": "Kinematic hardening modulus (MPa)",
        "h_dyn": "Recovery modulus",
    }
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        if objective_value is not None:
            f.write(f"# objective_mpa={float(objective_value)!r}\n")
        f.write("parameter,description,value\n")
        for name in PARAM_NAMES:
            f.write(f"{name},{desc[name]},{float(getattr(params, name))!r}\n")
