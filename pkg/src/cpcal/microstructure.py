"""Synthetic grain ensembles: lognormal sizes, Haar-uniform orientations,
coherent-twin insertion, k-NN adjacency and orientation analytics.

Orientations are unit quaternions (w, x, y, z) storing the crystal-to-
sample rotation; Bunge Euler angles follow the ZXZ convention with
g = Rz(phi2) Rx(Phi) Rz(phi1) mapping sample to crystal (q represents g^T).
"""

import dataclasses
import itertools
import math

import numpy as np

TWO_TO_THREE_FACTOR = 4.0 / math.pi
SIGMA3_ANGLE_DEG = 60.0
BRANDON_WINDOW_DEG = 8.66
KNN_NEIGHBORS = 6
DIAMETER_CAP_QUANTILE = 0.999


def _qmul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def _qconj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _q_from_axis_angle(axis, angle_rad):
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle_rad
    return np.concatenate(([math.cos(h)], math.sin(h) * axis))


def _q_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _q_from_matrix(m):
    t = np.trace(m)
    if t > 0:
        s = 0.5 / math.sqrt(t + 1.0)
        q = np.array([0.25 / s, (m[2, 1] - m[1, 2]) * s,
                      (m[0, 2] - m[2, 0]) * s, (m[1, 0] - m[0, 1]) * s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * math.sqrt(max(1.0 + m[i, i] - m[j, j] - m[k, k], 0.0))
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return q / np.linalg.norm(q)


def _cubic_symmetry_quats():
    """The 24 proper cubic rotations as quaternions (deterministic order)."""
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = np.zeros((3, 3))
            for r, (c, s) in enumerate(zip(perm, signs)):
                m[r, c] = s
            if np.isclose(np.linalg.det(m), 1.0):
                mats.append(m)
    assert len(mats) == 24
    return [_q_from_matrix(m) for m in mats]


_SYM_QUATS = None


def cubic_symmetry_quats():
    global _SYM_QUATS
    if _SYM_QUATS is None:
        _SYM_QUATS = _cubic_symmetry_quats()
    return _SYM_QUATS


@dataclasses.dataclass(frozen=True)
class Orientation:
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, float)
        nrm = np.linalg.norm(q)
        if abs(nrm - 1.0) > 1e-9:
            q = q / nrm
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls):
        return cls(q=np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_euler_bunge(cls, phi1_deg, Phi_deg, phi2_deg):
        p1, P, p2 = (math.radians(a) for a in (phi1_deg, Phi_deg, phi2_deg))
        c1, s1 = math.cos(p1), math.sin(p1)
        cP, sP = math.cos(P), math.sin(P)
        c2, s2 = math.cos(p2), math.sin(p2)
        # Bunge g (sample -> crystal); orientation stores g^T
        g = np.array([
            [c1 * c2 - s1 * s2 * cP, s1 * c2 + c1 * s2 * cP, s2 * sP],
            [-c1 * s2 - s1 * c2 * cP, -s1 * s2 + c1 * c2 * cP, c2 * sP],
            [s1 * sP, -c1 * sP, cP],
        ])
        return cls(q=_q_from_matrix(g.T))

    def to_euler_bunge(self):
        g = self.matrix().T
        cP = min(1.0, max(-1.0, g[2, 2]))
        Phi = math.acos(cP)
        if abs(abs(cP) - 1.0) < 1e-12:
            phi1 = math.atan2(g[0, 1], g[0, 0])
            phi2 = 0.0
        else:
            phi1 = math.atan2(g[2, 0], -g[2, 1])
            phi2 = math.atan2(g[0, 2], g[1, 2])
        return tuple(math.degrees(a) % 360.0 for a in (phi1, Phi, phi2))

    def matrix(self):
        """Crystal-to-sample rotation matrix."""
        return _q_to_matrix(self.q)

    def compose_crystal(self, q_rot):
        """Orientation after rotating the lattice by q_rot in its own frame."""
        return Orientation(q=_qmul(self.q, q_rot))


def random_orientation(rng):
    """Haar-uniform orientation (normalized 4-D Gaussian)."""
    v = rng.normal(size=4)
    return Orientation(q=v)


def misorientation(a, b):
    """Minimum rotation angle (degrees) between two cubic lattices."""
    d = _qmul(_qconj(a.q), b.q)
    best = 0.0
    for s in cubic_symmetry_quats():
        w = abs(float(_qmul(d, s)[0]))
        if w > best:
            best = w
    return math.degrees(2.0 * math.acos(min(1.0, best)))


def is_sigma3(a, b, window_deg=BRANDON_WINDOW_DEG):
    """Brandon-style classification: within +-window of the ideal 60 deg."""
    return abs(misorientation(a, b) - SIGMA3_ANGLE_DEG) <= window_deg


def schmid_factor(orientation, loading_axis):
    """max_a |cos phi cos lambda| over the 12 FCC systems; <= 0.5."""
    from . import slipcrystal
    axis = np.asarray(loading_axis, float)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise ValueError("loading_axis must be a unit vector")
    a_c = orientation.matrix().T @ axis
    smat, nmat, _ = slipcrystal.system_arrays()
    return float(np.max(np.abs((smat @ a_c) * (nmat @ a_c))))


@dataclasses.dataclass
class GrainRecord:
    id: int
    orientation: Orientation
    diameter_3d: float
    volume_fraction: float
    parent_id: int = None
    neighbors: list = dataclasses.field(default_factory=list)

    @property
    def is_twin(self):
        return self.parent_id is not None


@dataclasses.dataclass
class Ensemble:
    grains: list
    twin_volume_fraction: float = 0.0
    seed: int = 0

    def grain(self, gid):
        return self._index()[gid]

    def _index(self):
        if not hasattr(self, "_byid") or len(self._byid) != len(self.grains):
            self._byid = {g.id: g for g in self.grains}
        return self._byid

    def volume_check(self):
        total = math.fsum(g.volume_fraction for g in self.grains)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"volume fractions sum to {total}, expected 1")


def diameter_2d_to_3d(d2):
    """Equivalent-circle to equivalent-sphere diameter (factor 4/pi)."""
    if not d2 > 0.0:
        raise ValueError("diameter must be positive")
    return d2 * TWO_TO_THREE_FACTOR


def _lognormal_params(mean, sd):
    sigma2 = math.log(1.0 + (sd / mean) ** 2)
    mu = math.log(mean) - 0.5 * sigma2
    return mu, math.sqrt(sigma2)


def sample_ensemble(stats, n_grains, twin_target, seed):
    """Draw an ensemble matching 2-D size statistics after 4/pi conversion.

    ``stats`` maps {"mean": .., "sd": ..} of the 2-D equivalent-circle
    diameter (um). Volume fractions go as diameter^3; orientations are
    Haar-uniform; twins are inserted until the volume target is reached;
    adjacency is 6-NN on random unit-cube centers, symmetrized.
    """
    if n_grains < 1:
        raise ValueError("n_grains must be >= 1")
    if not 0.0 <= twin_target <= 0.6:
        raise ValueError("twin_target must lie in [0, 0.6]")
    rng = np.random.default_rng(seed)
    mean3 = diameter_2d_to_3d(stats["mean"])
    sd3 = stats["sd"] * TWO_TO_THREE_FACTOR
    mu, sigma = _lognormal_params(mean3, sd3)
    diam = rng.lognormal(mean=mu, sigma=sigma, size=n_grains)
    cap = math.exp(mu + sigma * _norm_ppf(DIAMETER_CAP_QUANTILE))
    diam = np.minimum(diam, cap)
    vol = diam ** 3
    vol = vol / vol.sum()
    grains = [GrainRecord(id=i, orientation=random_orientation(rng),
                          diameter_3d=float(diam[i]),
                          volume_fraction=float(vol[i]))
              for i in range(n_grains)]
    ens = Ensemble(grains=grains, twin_volume_fraction=0.0, seed=seed)
    centers = rng.random((n_grains, 3))
    _knn_adjacency(ens, centers)

    max_insertions = 10 * n_grains
    inserted = 0
    while ens.twin_volume_fraction < twin_target:
        hosts = [g.id for g in ens.grains if not g.is_twin]
        if not hosts or inserted >= max_insertions:
            raise ValueError(
                f"twin target {twin_target} unreachable with {n_grains} grains")
        gid = int(rng.choice(np.array(hosts)))
        frac = float(rng.uniform(0.2, 0.5))
        ens = insert_twins(ens, gid, frac, seed=int(rng.integers(2 ** 31)))
        inserted += 1
    return ens


def _norm_ppf(p):
    from scipy.stats import norm
    return float(norm.ppf(p))


def _knn_adjacency(ensemble, centers):
    n = len(ensemble.grains)
    k = min(KNN_NEIGHBORS, n - 1)
    if k <= 0:
        for g in ensemble.grains:
            g.neighbors = []
        return
    d2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nbrs = [set() for _ in range(n)]
    for i in range(n):
        for j in np.argsort(d2[i])[:k]:
            nbrs[i].add(int(j))
            nbrs[int(j)].add(i)
    for i, g in enumerate(ensemble.grains):
        g.neighbors = sorted(ensemble.grains[j].id for j in nbrs[i])


TWIN_AXES = [np.array(v, float) / math.sqrt(3.0)
             for v in [(1, 1, 1), (-1, 1, 1), (1, -1, 1), (1, 1, -1)]]


def insert_twins(ensemble, grain_id, lamella_fraction, seed):
    """Split a lamella off the grain with the ideal 60deg <111> relation.

    Returns a new Ensemble; the parent keeps (1 - f) of its volume, the twin
    becomes its neighbor and inherits the parent's neighborhood.
    """
    if not 0.0 < lamella_fraction < 1.0:
        raise ValueError("lamella_fraction must lie in (0, 1)")
    parent = ensemble.grain(grain_id)
    if parent.is_twin:
        raise ValueError(f"grain {grain_id} is itself a twin lamella")
    rng = np.random.default_rng(seed)
    axis = TWIN_AXES[int(rng.integers(len(TWIN_AXES)))]
    q_rot = _q_from_axis_angle(axis, math.radians(SIGMA3_ANGLE_DEG))

    new_grains = [dataclasses.replace(g, neighbors=list(g.neighbors))
                  for g in ensemble.grains]
    ens = Ensemble(grains=new_grains,
                   twin_volume_fraction=ensemble.twin_volume_fraction,
                   seed=ensemble.seed)
    parent = ens.grain(grain_id)
    twin_id = max(g.id for g in ens.grains) + 1
    f = lamella_fraction
    twin = GrainRecord(
        id=twin_id,
        orientation=parent.orientation.compose_crystal(q_rot),
        diameter_3d=parent.diameter_3d * f ** (1.0 / 3.0),
        volume_fraction=parent.volume_fraction * f,
        parent_id=parent.id,
        neighbors=sorted(set(parent.neighbors) | {parent.id}),
    )
    parent.volume_fraction *= (1.0 - f)
    parent.diameter_3d *= (1.0 - f) ** (1.0 / 3.0)
    for nid in twin.neighbors:
        g = ens.grain(nid)
        if twin_id not in g.neighbors:
            g.neighbors = sorted(g.neighbors + [twin_id])
    ens.grains.append(twin)
    ens.twin_volume_fraction = math.fsum(
        g.volume_fraction for g in ens.grains if g.is_twin)
    return ens


def average_misorientation(ensemble, grain_id):
    """Number-weighted mean misorientation with the grain's neighbors."""
    g = ensemble.grain(grain_id)
    if not g.neighbors:
        raise ValueError(f"grain {grain_id} has no neighbors")
    return float(np.mean([misorientation(g.orientation,
                                         ensemble.grain(n).orientation)
                          for n in g.neighbors]))


def empirical_cdf(values):
    """Right-continuous ECDF; returns a callable value_at(x) -> [0, 1]."""
    v = np.sort(np.asarray(values, float))
    if v.size == 0:
        raise ValueError("empirical_cdf needs at least one value")

    def value_at(x):
        return float(np.searchsorted(v, x, side="right")) / v.size

    return value_at


def write_ensemble_csv(ensemble, path, seed=None, config_digest=None):
    with open(path, "w") as f:
        if seed is not None or config_digest is not None:
            f.write(f"# seed={seed} config={config_digest}\n")
        f.write("id,phi1_deg,Phi_deg,phi2_deg,diameter_um,volume_fraction,"
                "parent_id,neighbors\n")
        for g in ensemble.grains:
            p1, P, p2 = g.orientation.to_euler_bunge()
            parent = "" if g.parent_id is None else str(g.parent_id)
            nbr = ";".join(str(n) for n in g.neighbors)
            f.write(f"{g.id},{p1!r},{P!r},{p2!r},{g.diameter_3d!r},"
                    f"{g.volume_fraction!r},{parent},{nbr}\n")


def read_ensemble_csv(path):
    grains = []
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
            gid = int(parts[0])
            ori = Orientation.from_euler_bunge(*(float(x) for x in parts[1:4]))
            parent = int(parts[6]) if parts[6] else None
            nbrs = [int(x) for x in parts[7].split(";")] if parts[7] else []
            grains.append(GrainRecord(
                id=gid, orientation=ori, diameter_3d=float(parts[4]),
                volume_fraction=float(parts[5]), parent_id=parent,
                neighbors=nbrs))
    ens = Ensemble(grains=grains,
                   twin_volume_fraction=math.fsum(
                       g.volume_fraction for g in grains if g.is_twin))
    return ens
