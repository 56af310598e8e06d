"""Synthetic message matrices from the benign/attack gradient models, the
closed-form rank-moment limits, and Monte Carlo checks of both.

Benign entries are ``M[i, j] ~ N(mu_j, sigma2_j / N_i)``. Mean signs are +1
with probability ``rho``; magnitudes are ``|N(0, 1)| + 0.1`` so no dimension
sits near zero.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from ._validation import ValidationError, as_seedseq, check_message_matrix
from .attacks import AttackKind, gaussian_attack, sign_flip_attack, zero_gradient_attack
from .rank import node_moments

MU_FLOOR = 0.1


@dataclass
class GradientModel:
    mu: np.ndarray
    sigma2: np.ndarray
    sample_sizes: np.ndarray
    malicious: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma2 = np.broadcast_to(np.asarray(self.sigma2, dtype=np.float64), self.mu.shape).copy()
        self.sample_sizes = np.asarray(self.sample_sizes, dtype=np.int64)
        self.malicious = np.asarray(self.malicious, dtype=np.int64)
        if np.any(self.sigma2 < 0) or not np.all(np.isfinite(self.sigma2)):
            raise ValidationError("sigma2 must be finite and non-negative")
        if np.any(self.sample_sizes < 1):
            raise ValidationError("sample sizes must be >= 1")

    @property
    def n(self):
        return len(self.sample_sizes)

    @property
    def p(self):
        return len(self.mu)

    @property
    def benign(self):
        return np.setdiff1d(np.arange(self.n), self.malicious)


def make_gradient_model(n, n0, p, rho=0.7, noise_var=1e-4, sample_size=100, seed=0):
    """Model with ``sigma2_j / N_i = noise_var`` for every node and dimension.

    The malicious set is a seeded random subset of size ``n0``.
    """
    if not 0 <= n0 < n:
        raise ValidationError("need 0 <= n0 < n")
    if not 0.0 <= rho <= 1.0:
        raise ValidationError("rho must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    signs = np.where(rng.random(p) < rho, 1.0, -1.0)
    mu = signs * (np.abs(rng.standard_normal(p)) + MU_FLOOR)
    malicious = np.sort(rng.choice(n, size=n0, replace=False))
    return GradientModel(mu, noise_var * sample_size, np.full(n, sample_size), malicious)


def synth_benign(model, seed=0):
    """Honest n x p message matrix: every row drawn from the benign model."""
    rng = np.random.default_rng(seed)
    sd = np.sqrt(model.sigma2[None, :] / model.sample_sizes[:, None])
    return model.mu[None, :] + sd * rng.standard_normal((model.n, model.p))


def synth_attacked(model, attack, seed=0, r=3.0, attack_variance=30.0):
    """Benign draws followed by a GA/SF/ZG attack on ``model.malicious``."""
    attack = AttackKind(attack)
    benign_seed, attack_seed = as_seedseq(seed).spawn(2)
    M = synth_benign(model, benign_seed)
    if attack == AttackKind.GAUSSIAN:
        return gaussian_attack(M, model.malicious, attack_variance, attack_seed)
    if attack == AttackKind.SIGN_FLIP:
        return sign_flip_attack(M, model.malicious, r)
    if attack == AttackKind.ZERO_GRADIENT:
        return zero_gradient_attack(M, model.malicious)
    if attack == AttackKind.NONE:
        return M
    raise ValidationError(f"attack {attack.value} has no message-level model")


def sq_mean(a, b):
    """``(1/(b-a+1)) * sum_{k=a}^{b} k^2`` for integers ``1 <= a <= b``."""
    if not 1 <= a <= b:
        raise ValidationError("need 1 <= a <= b")

    def cum(k):
        return k * (k + 1) * (2 * k + 1) // 6

    return (cum(b) - cum(a - 1)) / (b - a + 1)


@dataclass
class TheoremLimits:
    n: int
    n0: int
    rho: float
    mu_b: float
    mu_m: float
    s2_b: float
    s2_m: float
    tau_b: float = None
    tau_m: float = None
    #: malicious limit when the identical SF/ZG rows share one averaged rank
    s2_m_tied: float = None
    se_s2_b: float = 0.0
    se_s2_m: float = 0.0

    def to_dict(self):
        return asdict(self)


def limits_signflip(n, n0, rho):
    """Closed-form rank-moment limits under sign flipping (and zero gradient)."""
    if not 1 <= n0 < n:
        raise ValidationError("need 1 <= n0 < n")
    if not 0.0 <= rho <= 1.0:
        raise ValidationError("rho must lie in [0, 1]")
    n1 = n - n0
    mu_b = (n + n0 + 1) / 2 - n0 * rho
    mu_m = n1 * rho + (n0 + 1) / 2
    tau_b = rho * sq_mean(1, n1) + (1 - rho) * sq_mean(n0 + 1, n)
    tau_m = rho * sq_mean(n1 + 1, n) + (1 - rho) * sq_mean(1, n0)
    s2_b = tau_b - mu_b ** 2
    s2_m = tau_m - mu_m ** 2
    # within-block spread of the malicious ranks collapses to a single tie
    s2_m_tied = s2_m - (n0 ** 2 - 1) / 12
    return TheoremLimits(n, n0, rho, mu_b, mu_m, s2_b, s2_m, tau_b, tau_m, s2_m_tied)


def _group_rank_variance(n, n0, noise_var, attack_var, p, rng):
    mal = np.arange(n0)
    M = rng.standard_normal((n, p)) * np.sqrt(noise_var)
    M = gaussian_attack(M, mal, attack_var, rng.integers(2 ** 63))
    mom = node_moments(M)
    return mom.v[n0:].mean(), mom.v[:n0].mean()


def limits_gaussian(n, n0, noise_var=0.01, attack_var=30.0, p=20_000, replicates=10, seed=0):
    """Gaussian-attack limits: ``e`` tends to ``(n+1)/2`` for every node.

    The rank variances have no closed form; ``s2_b``/``s2_m`` are Monte Carlo
    estimates (group-mean ``v_i`` over ``replicates`` matrices of width ``p``)
    with standard errors ``se_s2_b``/``se_s2_m``. ``attack_var`` may be a
    length-``p`` vector of per-dimension variances.
    """
    if not 1 <= n0 < n:
        raise ValidationError("need 1 <= n0 < n")
    rng = np.random.default_rng(seed)
    vb, vm = np.array([_group_rank_variance(n, n0, noise_var, attack_var, p, rng)
                       for _ in range(replicates)]).T
    ddof = 1 if replicates > 1 else 0
    mid = (n + 1) / 2
    return TheoremLimits(n, n0, float("nan"), mid, mid, float(vb.mean()), float(vm.mean()),
                         se_s2_b=float(vb.std(ddof=ddof) / np.sqrt(replicates)),
                         se_s2_m=float(vm.std(ddof=ddof) / np.sqrt(replicates)))


@dataclass
class GroupCheck:
    e_mean: float
    e_se: float
    e_limit: float
    v_mean: float
    v_se: float
    v_limit: float
    v_limit_se: float
    e_deviation: float
    v_deviation: float
    e_pass: bool
    v_pass: bool


@dataclass
class VerificationReport:
    attack: str
    n: int
    n0: int
    p: int
    replicates: int
    tolerance_se: float
    benign: GroupCheck
    malicious: GroupCheck
    max_node_e_deviation: float
    passed: bool
    replicate_moments: list = field(default_factory=list, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("replicate_moments")
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _check(values_e, values_v, e_limit, v_limit, v_limit_se, tol):
    R = len(values_e)
    ddof = 1 if R > 1 else 0
    e_mean, v_mean = float(np.mean(values_e)), float(np.mean(values_v))
    e_se = float(np.std(values_e, ddof=ddof) / np.sqrt(R))
    v_se = float(np.std(values_v, ddof=ddof) / np.sqrt(R))
    e_dev, v_dev = e_mean - e_limit, v_mean - v_limit
    v_total_se = float(np.hypot(v_se, v_limit_se))
    return GroupCheck(e_mean, e_se, e_limit, v_mean, v_se, v_limit, v_limit_se, e_dev, v_dev,
                      bool(abs(e_dev) <= tol * e_se or abs(e_dev) < 1e-12),
                      bool(abs(v_dev) <= tol * v_total_se or abs(v_dev) < 1e-12))


def theoretical_limits(attack, n, n0, rho=0.7, noise_var=1e-4, attack_variance=30.0, seed=0):
    attack = AttackKind(attack)
    if attack == AttackKind.GAUSSIAN:
        return limits_gaussian(n, n0, noise_var, attack_variance, seed=seed)
    if attack in (AttackKind.SIGN_FLIP, AttackKind.ZERO_GRADIENT):
        return limits_signflip(n, n0, rho)
    raise ValidationError(f"no limit result covers attack {attack.value}")


def simulate_moments(attack, n, n0, p, rho=0.7, noise_var=1e-4, attack_variance=30.0,
                     r=3.0, seed=0):
    """One synthetic replicate: ``(moments, malicious index array)``."""
    model_seed, data_seed = as_seedseq(seed).spawn(2)
    model = make_gradient_model(n, n0, p, rho=rho, noise_var=noise_var, seed=model_seed)
    M = synth_attacked(model, attack, seed=data_seed, r=r, attack_variance=attack_variance)
    return node_moments(M), model.malicious


def verify_limits(attack, n=100, n0=30, p=100_000, replicates=20, tolerance=5.0, rho=0.7,
                  noise_var=1e-4, attack_variance=30.0, r=3.0, seed=0, limits=None):
    """Compare group-mean ``e_i``/``v_i`` against their limiting values.

    Each replicate draws a fresh model and matrix from an independent stream
    of ``seed``. A group passes when its deviation is within ``tolerance``
    standard errors (replicate SE, combined with the SE of a Monte Carlo limit).
    """
    attack = AttackKind(attack)
    if limits is None:
        limits = theoretical_limits(attack, n, n0, rho, noise_var, attack_variance,
                                    seed=np.random.SeedSequence([seed, 1]).generate_state(1)[0])
    seeds = as_seedseq(seed).spawn(replicates)
    eb, em, vb, vm, node_dev, kept = [], [], [], [], [], []
    for s in seeds:
        mom, mal = simulate_moments(attack, n, n0, p, rho, noise_var, attack_variance, r, s)
        is_mal = np.zeros(n, dtype=bool)
        is_mal[mal] = True
        eb.append(mom.e[~is_mal].mean())
        em.append(mom.e[is_mal].mean())
        vb.append(mom.v[~is_mal].mean())
        vm.append(mom.v[is_mal].mean())
        target = np.where(is_mal, limits.mu_m, limits.mu_b)
        node_dev.append(np.abs(mom.e - target).max())
        kept.append((mom, mal))
    v_m_limit = limits.s2_m_tied if (attack != AttackKind.GAUSSIAN and limits.s2_m_tied is not None) \
        else limits.s2_m
    benign = _check(eb, vb, limits.mu_b, limits.s2_b, limits.se_s2_b, tolerance)
    malicious = _check(em, vm, limits.mu_m, v_m_limit, limits.se_s2_m, tolerance)
    return VerificationReport(attack.value, n, n0, p, replicates, tolerance, benign, malicious,
                              float(np.mean(node_dev)),
                              benign.e_pass and benign.v_pass and malicious.e_pass and malicious.v_pass,
                              kept)


def max_node_deviation(attack, n, n0, p, limits, seed, **kw):
    mom, mal = simulate_moments(attack, n, n0, p, seed=seed, **kw)
    target = np.full(n, limits.mu_b)
    target[mal] = limits.mu_m
    return float(np.abs(mom.e - target).max())


def convergence_trend(attack, n=100, n0=30, p_values=(1_000, 10_000, 100_000), replicates=100,
                      seed=0, **kw):
    """Max per-node ``|e_i - limit|`` for each width in ``p_values`` and replicate.

    Returns ``(deviations, fraction)`` where ``deviations`` has shape
    (replicates, len(p_values)) and ``fraction`` is the share of replicates
    whose deviation at the largest width is below that at the smallest.
    """
    limits = theoretical_limits(attack, n, n0, kw.get("rho", 0.7),
                                kw.get("noise_var", 1e-4), kw.get("attack_variance", 30.0),
                                seed=seed)
    streams = as_seedseq(seed).spawn(replicates)
    dev = np.empty((replicates, len(p_values)))
    for k, ss in enumerate(streams):
        for c, child in enumerate(ss.spawn(len(p_values))):
            dev[k, c] = max_node_deviation(attack, n, n0, int(p_values[c]), limits, child, **kw)
    return dev, float(np.mean(dev[:, -1] < dev[:, 0]))


@dataclass
class IndependenceScan:
    pvalues: np.ndarray
    pairs: np.ndarray
    ks_distance: float
    ks_critical_1pct: float
    skipped: int

    @property
    def uniform_at_1pct(self):
        return self.ks_distance < self.ks_critical_1pct

    def to_dict(self):
        return {"n_pairs": int(len(self.pvalues)), "ks_distance": self.ks_distance,
                "ks_critical_1pct": self.ks_critical_1pct, "skipped": self.skipped,
                "uniform_at_1pct": bool(self.uniform_at_1pct)}


def _sample_pairs(p, count, rng):
    total = p * (p - 1) // 2
    if count > total:
        raise ValidationError(f"requested {count} pairs but only {total} exist")
    if total <= 4 * count or total <= 2_000_000:
        i, j = np.triu_indices(p, k=1)
        pick = np.sort(rng.choice(total, size=count, replace=False))
        return np.column_stack([i[pick], j[pick]])
    seen = set()
    out = []
    while len(out) < count:
        a, b = rng.integers(0, p, size=2)
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key not in seen:
            seen.add(key)
            out.append(key)
    return np.array(out, dtype=np.int64)


def independence_scan(M, pairs=10_000, seed=0):
    """Pearson-correlation t-tests on randomly sampled column pairs.

    Pairs involving a constant column are skipped and counted. Returns the
    two-sided p-values and their Kolmogorov-Smirnov distance from U(0, 1).
    """
    M = check_message_matrix(M, min_nodes=3)
    n, p = M.shape
    rng = np.random.default_rng(seed)
    idx = _sample_pairs(p, pairs, rng)
    centered = M - M.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    ok = (norms[idx[:, 0]] > 0) & (norms[idx[:, 1]] > 0)
    skipped = int((~ok).sum())
    idx = idx[ok]
    if idx.shape[0] == 0:
        raise ValidationError("every sampled pair involves a constant column")
    Z = centered / np.where(norms > 0, norms, 1.0)
    r = np.einsum("ij,ij->j", Z[:, idx[:, 0]], Z[:, idx[:, 1]])
    r = np.clip(r, -1.0, 1.0)
    df = n - 2
    with np.errstate(divide="ignore"):
        t = r * np.sqrt(df / np.maximum(1.0 - r * r, 0.0))
    pvals = 2.0 * stats.t.sf(np.abs(t), df)
    ks = float(stats.kstest(pvals, "uniform").statistic)
    crit = float(stats.kstwo.ppf(0.99, len(pvals)))
    return IndependenceScan(pvals, idx, ks, crit, skipped)
