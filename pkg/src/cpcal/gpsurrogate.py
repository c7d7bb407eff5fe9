"""Gaussian-process regression with a Matern 5/2 ARD kernel.

Inputs are normalized to the unit cube by the search-domain bounds and
targets are standardized before fitting; hyperparameters (signal variance,
one lengthscale per input dimension, noise variance) maximize the log
marginal likelihood by multi-start L-BFGS-B on log-parameters with
analytic gradients. The fitted model caches the Cholesky factor of
K + sigma_n^2 I. Predictive variance is for a new observation, i.e. it
includes the noise term.
"""

import dataclasses
import json
import math

import numpy as np
import scipy.linalg
import scipy.optimize

SQRT5 = math.sqrt(5.0)
JITTER_FLOOR = 1.0e-8

_LOG_BOUNDS_SIG = (math.log(1e-3), math.log(1e3))
_LOG_BOUNDS_LEN = (math.log(1e-2), math.log(1e2))
_LOG_BOUNDS_NOISE = (math.log(JITTER_FLOOR), math.log(10.0))


@dataclasses.dataclass
class KernelParams:
    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float

    def validate(self):
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if np.any(np.asarray(self.lengthscales) <= 0):
            raise ValueError("lengthscales must be positive")
        if self.noise_variance < JITTER_FLOOR:
            raise ValueError(f"noise_variance must be >= {JITTER_FLOOR}")


def matern52(x, x2, kernel):
    """Matern 5/2 covariance between two points (ARD lengthscales)."""
    d = (np.asarray(x, float) - np.asarray(x2, float)) / kernel.lengthscales
    r = math.sqrt(float(d @ d))
    return kernel.signal_variance * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) \
        * math.exp(-SQRT5 * r)


def _sq_dists_per_dim(xa, xb):
    return (xa[:, None, :] - xb[None, :, :]) ** 2


def _kernel_matrix(xn, kernel, diag_noise=True):
    w = _sq_dists_per_dim(xn, xn) / kernel.lengthscales ** 2
    r2 = w.sum(axis=2)
    r = np.sqrt(r2)
    e = np.exp(-SQRT5 * r)
    k = kernel.signal_variance * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * e
    if diag_noise:
        k = k + kernel.noise_variance * np.eye(len(xn))
    return k, w, r, e


def _cross_kernel(xq, xn, kernel):
    w = _sq_dists_per_dim(xq, xn) / kernel.lengthscales ** 2
    r2 = w.sum(axis=2)
    r = np.sqrt(r2)
    return kernel.signal_variance * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) \
        * np.exp(-SQRT5 * r)


@dataclasses.dataclass
class GPModel:
    x_train: np.ndarray      # raw inputs, (n, d)
    y_train: np.ndarray      # raw targets, (n,)
    bounds: np.ndarray       # (d, 2) normalization bounds
    kernel: KernelParams
    y_mean: float
    y_std: float
    constant: bool = False
    _chol: np.ndarray = None
    _alpha: np.ndarray = None
    log_marginal_likelihood: float = float("nan")

    def normalize(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (x - lo) / (hi - lo)

    def factorize(self):
        xn = self.normalize(self.x_train)
        ys = (self.y_train - self.y_mean) / self.y_std
        k, *_ = _kernel_matrix(xn, self.kernel)
        jitter = 0.0
        for _ in range(6):
            try:
                self._chol = scipy.linalg.cholesky(
                    k + jitter * np.eye(len(k)), lower=True)
                break
            except scipy.linalg.LinAlgError:
                jitter = max(2.0 * jitter, JITTER_FLOOR)
        else:  # pragma: no cover - jitter always rescues in practice
            raise scipy.linalg.LinAlgError("kernel matrix not PD")
        self._alpha = scipy.linalg.cho_solve((self._chol, True), ys)
        return self


def r2_score(y_true, y_pred):
    """Coefficient of determination 1 - SS_res/SS_tot."""
    y_true = np.asarray(y_true, float)
    y_pred = np.asarray(y_pred, float)
    if y_true.size < 2:
        raise ValueError("r2_score needs at least 2 points")
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("r2_score undefined for constant y_true")
    ss_res = float(((y_true - y_pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def _neg_lml_and_grad(log_theta, xn, ys):
    n, d = xn.shape
    sig = math.exp(log_theta[0])
    ls = np.exp(log_theta[1:1 + d])
    noise = math.exp(log_theta[1 + d])
    kernel = KernelParams(sig, ls, noise)
    k, w, r, e = _kernel_matrix(xn, kernel)
    try:
        chol = scipy.linalg.cholesky(k, lower=True)
    except scipy.linalg.LinAlgError:
        return 1e12, np.zeros_like(log_theta)
    alpha = scipy.linalg.cho_solve((chol, True), ys)
    lml = (-0.5 * float(ys @ alpha)
           - float(np.log(np.diag(chol)).sum())
           - 0.5 * n * math.log(2.0 * math.pi))
    kinv = scipy.linalg.cho_solve((chol, True), np.eye(n))
    p = np.outer(alpha, alpha) - kinv

    grad = np.empty_like(log_theta)
    k_nl = k - noise * np.eye(n)  # noiseless part
    grad[0] = 0.5 * float((p * k_nl).sum())
    common = sig * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e
    for j in range(d):
        grad[1 + j] = 0.5 * float((p * (common * w[:, :, j])).sum())
    grad[1 + d] = 0.5 * noise * float(np.trace(p))
    return -lml, -grad


def fit(x, y, bounds, n_restarts=8, seed=0):
    """Fit a GP to raw inputs/targets with the given (d, 2) bounds."""
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float)
    bounds = np.asarray(bounds, float)
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least 2 observations")
    if bounds.shape != (d, 2):
        raise ValueError(f"bounds must be ({d}, 2)")
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(x < lo - 1e-9) or np.any(x > hi + 1e-9):
        raise ValueError("inputs fall outside the normalization bounds")

    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std == 0.0:
        model = GPModel(x_train=x.copy(), y_train=y.copy(), bounds=bounds,
                        kernel=KernelParams(1.0, np.ones(d), JITTER_FLOOR),
                        y_mean=y_mean, y_std=1.0, constant=True)
        return model

    xn = (x - lo) / (hi - lo)
    ys = (y - y_mean) / y_std

    rng = np.random.default_rng(seed)
    starts = [np.concatenate(([0.0], np.zeros(d), [math.log(1e-2)]))]
    for _ in range(n_restarts - 1):
        starts.append(np.concatenate((
            [rng.uniform(math.log(0.1), math.log(10.0))],
            rng.uniform(math.log(0.1), math.log(10.0), size=d),
            [rng.uniform(math.log(1e-6), math.log(1e-1))])))
    opt_bounds = ([_LOG_BOUNDS_SIG] + [_LOG_BOUNDS_LEN] * d
                  + [_LOG_BOUNDS_NOISE])

    best = None
    for x0 in starts:
        res = scipy.optimize.minimize(
            _neg_lml_and_grad, x0, args=(xn, ys), jac=True,
            method="L-BFGS-B", bounds=opt_bounds,
            options={"maxiter": 200})
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    kernel = KernelParams(signal_variance=math.exp(theta[0]),
                          lengthscales=np.exp(theta[1:1 + d]),
                          noise_variance=math.exp(theta[1 + d]))
    model = GPModel(x_train=x.copy(), y_train=y.copy(), bounds=bounds,
                    kernel=kernel, y_mean=y_mean, y_std=y_std,
                    log_marginal_likelihood=-float(best.fun))
    return model.factorize()


_PREDICT_CHUNK = 4096


def predict(model, x):
    """Posterior mean and (observation) variance at raw input(s) x.

    Returns scalars for a single point, arrays for a batch; large batches
    are processed in chunks to bound the pairwise-distance workspace.
    """
    single = np.asarray(x).ndim == 1
    xq = np.atleast_2d(np.asarray(x, float))
    if model.constant:
        mean = np.full(len(xq), model.y_mean)
        var = np.full(len(xq), JITTER_FLOOR * model.y_std ** 2)
        return (float(mean[0]), float(var[0])) if single else (mean, var)
    if model._chol is None:
        model.factorize()
    xn = model.normalize(model.x_train)
    kss = model.kernel.signal_variance + model.kernel.noise_variance
    mean = np.empty(len(xq))
    var = np.empty(len(xq))
    for i0 in range(0, len(xq), _PREDICT_CHUNK):
        chunk = xq[i0:i0 + _PREDICT_CHUNK]
        ks = _cross_kernel(model.normalize(chunk), xn, model.kernel)
        mean_s = ks @ model._alpha
        v = scipy.linalg.solve_triangular(model._chol, ks.T, lower=True)
        var_s = np.maximum(kss - (v ** 2).sum(axis=0), 0.0)
        mean[i0:i0 + len(chunk)] = mean_s * model.y_std + model.y_mean
        var[i0:i0 + len(chunk)] = var_s * model.y_std ** 2
    return (float(mean[0]), float(var[0])) if single else (mean, var)


def dump_model(model, path):
    """Self-describing JSON: hyperparameters, data and normalizers."""
    payload = {
        "format": "cpcal-gp-1",
        "x_train": model.x_train.tolist(),
        "y_train": model.y_train.tolist(),
        "bounds": model.bounds.tolist(),
        "signal_variance": model.kernel.signal_variance,
        "lengthscales": np.asarray(model.kernel.lengthscales).tolist(),
        "noise_variance": model.kernel.noise_variance,
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "constant": model.constant,
        "log_marginal_likelihood": model.log_marginal_likelihood,
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)


def load_model(path):
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != "cpcal-gp-1":
        raise ValueError("not a cpcal GP model file")
    model = GPModel(
        x_train=np.array(payload["x_train"], float),
        y_train=np.array(payload["y_train"], float),
        bounds=np.array(payload["bounds"], float),
        kernel=KernelParams(payload["signal_variance"],
                            np.array(payload["lengthscales"], float),
                            payload["noise_variance"]),
        y_mean=payload["y_mean"], y_std=payload["y_std"],
        constant=payload["constant"],
        log_marginal_likelihood=payload["log_marginal_likelihood"])
    if not model.constant:
        model.factorize()
    return model
