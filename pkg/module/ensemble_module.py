import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, special, stats

from module.chain_module import ProfileSpec, build_variance_profile, dense_matrix
from module.defaults import ENTRY_LAWS, EXPERIMENT, REFERENCE_MOMENTS, REGIME_BAND
from module.diagram_module import SpikeOperator
from module.errors import NumericalError, ValidationError
from module.special_module import reference_cdf, standardized_reference_cdf

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ['trial', 'seed', 'lambda_max', 'rescaled', 'ipr']
SUPERCRITICAL = 'supercritical'
CRITICAL = 'critical'
SUBCRITICAL = 'subcritical'


def canonical_digest(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(',', ':'), ensure_ascii=True)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class EnsembleSpec:
    """矩阵模型 X = Σ∘W + A 的完整描述"""
    profile: ProfileSpec
    beta: int = 1
    law: str = 'gaussian'
    spike: Optional[SpikeOperator] = None
    seed: int = 0

    def __post_init__(self):
        if self.beta not in (1, 2):
            raise ValidationError(f"β 只能是 1 或 2: {self.beta}")
        if self.law not in ENTRY_LAWS:
            raise ValidationError(f"未知的矩阵元分布: {self.law}，可选 {', '.join(ENTRY_LAWS)}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"种子必须是非负整数: {self.seed}")

    @property
    def alpha(self) -> float:
        return float(self.profile.params.get('alpha', 2.0))

    def to_json(self) -> dict:
        return {
            'profile': self.profile.to_json(),
            'beta': int(self.beta),
            'law': self.law,
            'spike': None if self.spike is None else self.spike.to_json(),
            'seed': int(self.seed),
        }

    @classmethod
    def from_json(cls, data: dict) -> 'EnsembleSpec':
        unknown = set(data) - {'profile', 'beta', 'law', 'spike', 'seed'}
        if unknown:
            raise ValidationError(f"系综描述含未知字段: {sorted(unknown)}")
        if 'profile' not in data:
            raise ValidationError("系综描述缺少 profile")
        spike = data.get('spike')
        return cls(profile=ProfileSpec.from_json(data['profile']), beta=int(data.get('beta', 1)),
                   law=data.get('law', 'gaussian'),
                   spike=None if spike is None else SpikeOperator.from_json(spike),
                   seed=int(data.get('seed', 0)))

    @property
    def digest(self) -> str:
        return canonical_digest(self.to_json())


def run_digest(spec: EnsembleSpec, trials: int) -> str:
    """一次模拟产物的摘要：系综描述加试验次数"""
    return canonical_digest({'ensemble': spec.to_json(), 'trials': int(trials)})


def variance_matrix(spec: EnsembleSpec) -> np.ndarray:
    return dense_matrix(build_variance_profile(spec.profile))


def trial_seed_sequence(seed: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(trial,))


def _draw(law: str, rng: np.random.Generator, size) -> np.ndarray:
    # 均值0方差1的对称分布
    if law == 'gaussian':
        return rng.standard_normal(size)
    if law == 'rademacher':
        return 2.0 * rng.integers(0, 2, size=size) - 1.0
    return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=size)


def _noise(law: str, beta: int, N: int, rng: np.random.Generator) -> np.ndarray:
    if beta == 1:
        upper = np.triu(_draw(law, rng, (N, N)), 1)
        W = upper + upper.T
        W[np.diag_indices(N)] = math.sqrt(2.0) * _draw(law, rng, N)
        return W
    real = _draw(law, rng, (N, N))
    imag = _draw(law, rng, (N, N))
    upper = np.triu((real + 1j * imag) / math.sqrt(2.0), 1)
    W = upper + upper.conj().T
    W[np.diag_indices(N)] = _draw(law, rng, N)
    return W


def sample_matrix(spec: EnsembleSpec, trial: int, variance: Optional[np.ndarray] = None) -> np.ndarray:
    """第 trial 次试验的矩阵，种子由 (master seed, trial) 派生"""
    if variance is None:
        variance = variance_matrix(spec)
    N = variance.shape[0]
    rng = np.random.default_rng(trial_seed_sequence(spec.seed, trial))
    X = np.sqrt(variance) * _noise(spec.law, spec.beta, N, rng)
    if spec.spike is not None:
        X = X + spec.spike.full_matrix(N, spec.profile.W, spec.alpha)
    return 0.5 * (X + X.conj().T)


def _real_moment(law: str, k: int) -> float:
    """E W^{2k}，W 为单位方差实分布"""
    if k == 0:
        return 1.0
    if law == 'gaussian':
        return float(special.factorial2(2 * k - 1, exact=True))
    if law == 'rademacher':
        return 1.0
    return 3.0 ** k / (2 * k + 1)


def moment_constant(law: str, beta: int = 1, max_order: int = 8) -> float:
    """θ = max(1, max_k (E|W|^{2k}/(2k−1)!!)^{1/(k−1)})"""
    if law not in ENTRY_LAWS:
        raise ValidationError(f"未知的矩阵元分布: {law}")
    theta = 1.0
    for k in range(2, max_order + 1):
        if beta == 1:
            moment = _real_moment(law, k)
        else:
            moment = 2.0 ** (-k) * sum(special.comb(k, j, exact=True) * _real_moment(law, j) * _real_moment(law, k - j)
                                       for j in range(k + 1))
        ratio = moment / special.factorial2(2 * k - 1, exact=True)
        theta = max(theta, ratio ** (1.0 / (k - 1)))
    return theta


def matrix_digest(X: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(X).tobytes()).hexdigest()[:16]


def _top_eigenpair(X: np.ndarray) -> Tuple[float, np.ndarray]:
    try:
        values, vectors = linalg.eigh(X)
    except (linalg.LinAlgError, ValueError) as e:
        digest = matrix_digest(X)
        logger.error(f"特征值求解失败 (矩阵摘要 {digest}): {e}")
        raise NumericalError(f"特征值求解不收敛，矩阵摘要 {digest}") from e
    return float(values[-1]), vectors[:, -1]


def edge_observables(X: np.ndarray, s_N: float) -> Tuple[float, float, float]:
    """(λ_max, (λ_max−2)/s_N, IPR)"""
    if s_N <= 0:
        raise ValidationError(f"边缘尺度 s_N 必须为正: {s_N}")
    lam, psi = _top_eigenpair(X)
    weights = np.abs(psi) ** 2
    return lam, (lam - 2.0) / s_N, float(np.sum(weights ** 2))


def edge_scale(N: int, W: float, alpha: float = 2.0) -> Tuple[float, str, float]:
    """(s_N, 区间, γ_N)，γ_N 由 W = (γN)^{1−1/(3α)} 反解"""
    if N < 1 or W <= 0:
        raise ValidationError(f"需要 N ≥ 1, W > 0: N={N}, W={W}")
    gamma = W ** (3.0 * alpha / (3.0 * alpha - 1.0)) / N
    band_scale = W ** (-2.0 * alpha / (3.0 * alpha - 1.0))
    if REGIME_BAND[0] <= gamma <= REGIME_BAND[1]:
        return band_scale, CRITICAL, gamma
    if gamma > REGIME_BAND[1]:
        return N ** (-2.0 / 3.0), SUPERCRITICAL, gamma
    return band_scale, SUBCRITICAL, gamma


def effective_bandwidth(profile: ProfileSpec, N: int) -> float:
    if profile.kind == 'Flat':
        return float(N)
    if profile.kind == 'WegnerBlock':
        return float(profile.params.get('M', 1))
    return float(profile.W)


def _standardize(samples: np.ndarray) -> np.ndarray:
    sd = samples.std(ddof=1)
    if not sd > 0:
        raise ValidationError("样本方差为零，无法标准化")
    return (samples - samples.mean()) / sd


def ks_distance(samples, reference: Union[str, Callable, Sequence[float]], normalize: bool = True) -> float:
    """经验分布与参考分布的 KS 距离"""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 2:
        raise ValidationError(f"KS 距离至少需要 2 个样本，得到 {samples.size}")
    data = _standardize(samples) if normalize else samples
    if isinstance(reference, str):
        law = reference.lower()
        if law in REFERENCE_MOMENTS:
            cdf = standardized_reference_cdf(law) if normalize else (lambda x: reference_cdf(law, x))
            return float(stats.kstest(data, cdf).statistic)
        if not hasattr(stats, law):
            raise ValidationError(f"未知参考分布: {reference}")
        return float(stats.kstest(data, law).statistic)
    if callable(reference):
        return float(stats.kstest(data, reference).statistic)
    other = np.asarray(reference, dtype=float).ravel()
    if normalize:
        other = _standardize(other)
    return float(stats.ks_2samp(data, other).statistic)


def reference_distance(law_a: str, law_b: str, grid: Optional[np.ndarray] = None) -> float:
    """两个标准化参考分布函数之间的上确界距离"""
    if grid is None:
        grid = np.linspace(-6.0, 6.0, 24001)
    return float(np.max(np.abs(standardized_reference_cdf(law_a)(grid) - standardized_reference_cdf(law_b)(grid))))


def deviation_bound_curve(n: int, N: int, b_n: float, t, C: float = 1.0, c: float = 1.0) -> np.ndarray:
    """P(‖X‖ ≥ 2+t) ≤ C n N b_n exp(C n² b_n − c n √t)"""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValidationError("t 网格必须为正")
    return C * n * N * b_n * np.exp(C * n ** 2 * b_n - c * n * np.sqrt(t))


def deviation_exponents(alpha: float) -> Tuple[float, float]:
    """带宽尺度上的 (已证明, 猜想) 拉伸指数"""
    return (3 * alpha - 1) / (4 * alpha - 2), (3 * alpha - 1) / (2 * alpha)


def fit_deviation_constants(n: int, N: int, b_n: float, t_anchor: float, p_anchor: float,
                            C: float = 1.0) -> float:
    """令曲线在锚点处等于 p_anchor 解出 c"""
    if not 0 < p_anchor <= 1 or t_anchor <= 0:
        raise ValidationError(f"锚点需要 0 < p ≤ 1 且 t > 0: p={p_anchor}, t={t_anchor}")
    return (math.log(C * n * N * b_n) + C * n ** 2 * b_n - math.log(p_anchor)) / (n * math.sqrt(t_anchor))


def exceedance_curve(lambda_max, t) -> np.ndarray:
    """P̂(λ_max ≥ 2+t)"""
    lambda_max = np.asarray(lambda_max, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.mean(lambda_max[None, :] >= 2.0 + t[:, None], axis=1)


def power_iteration_lambda_max(X: np.ndarray, iters: int = 5000, tol: float = 1e-13, seed: int = 0) -> float:
    # Gershgorin 平移使谱非负
    shift = float(np.max(np.sum(np.abs(X), axis=1)))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(X.shape[0]).astype(X.dtype)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        w = X @ v + shift * v
        previous, estimate = estimate, float(np.real(np.vdot(v, w)))
        v = w / np.linalg.norm(w)
        if abs(estimate - previous) <= tol * abs(estimate):
            break
    return estimate - shift


def power_law_deviation_bound(y, N: int, W: float, alpha: float, C1: float = 1.0, C2: float = 1.0) -> np.ndarray:
    """C₁y^{(α−1)/(4α−2)}·N·W^{−2α/(3α−1)}·exp(−C₂y^{(3α−1)/(4α−2)})"""
    y = np.asarray(y, dtype=float)
    proved, _ = deviation_exponents(alpha)
    return (C1 * y ** ((alpha - 1) / (4 * alpha - 2)) * N * W ** (-2 * alpha / (3 * alpha - 1))
            * np.exp(-C2 * y ** proved))


@dataclass
class EdgeSampleSet:
    records: pd.DataFrame
    metadata: Dict[str, object]
    profile_sq: Optional[np.ndarray] = None

    @property
    def digest(self) -> str:
        return str(self.metadata['digest'])

    @property
    def lambda_max(self) -> np.ndarray:
        return self.records['lambda_max'].to_numpy()

    @property
    def rescaled(self) -> np.ndarray:
        return self.records['rescaled'].to_numpy()


class EdgeSimHandler:
    """边缘统计蒙特卡罗：每次试验独立子种子，线程池并行"""

    def __init__(self, spec: EnsembleSpec, config: Optional[dict] = None):
        self.logger = logging.getLogger(__name__)
        self.spec = spec
        self.config = {'threads': EXPERIMENT['threads']}
        self.config.update(config or {})
        self.variance = variance_matrix(spec)
        self.N = self.variance.shape[0]
        self.W = effective_bandwidth(spec.profile, self.N)
        self.s_N, self.regime, self.gamma_N = edge_scale(self.N, self.W, spec.alpha)
        self.logger.debug(f"N={self.N}, W={self.W}, 区间 {self.regime}, s_N={self.s_N:.4g}, γ_N={self.gamma_N:.4g}")

    def run_trial(self, trial: int) -> Tuple[dict, np.ndarray]:
        X = sample_matrix(self.spec, trial, variance=self.variance)
        lam, psi = _top_eigenpair(X)
        amplitude_sq = np.abs(psi) ** 2
        record = {
            'trial': trial,
            'seed': int(trial_seed_sequence(self.spec.seed, trial).generate_state(1)[0]),
            'lambda_max': lam,
            'rescaled': (lam - 2.0) / self.s_N,
            'ipr': float(np.sum(amplitude_sq ** 2)),
        }
        return record, amplitude_sq

    def run(self, trials: int) -> EdgeSampleSet:
        if trials < 1:
            raise ValidationError(f"试验次数必须 ≥ 1: {trials}")
        threads = max(1, int(self.config['threads']))
        self.logger.info(f"开始边缘模拟: N={self.N}, W={self.W:g}, {trials} 次试验, {threads} 线程")
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(self.run_trial, range(trials)))
        records = pd.DataFrame([r for r, _ in results], columns=RECORD_COLUMNS)
        metadata = {
            'digest': run_digest(self.spec, trials),
            'spec_digest': self.spec.digest,
            'seed': int(self.spec.seed),
            's_N': float(self.s_N),
            'gamma_N': float(self.gamma_N),
            'regime': self.regime,
            'N': int(self.N),
            'W': float(self.W),
            'alpha': self.spec.alpha,
            'beta': int(self.spec.beta),
            'law': self.spec.law,
            'theta': moment_constant(self.spec.law, self.spec.beta),
            'trials': int(trials),
        }
        self.logger.info(f"边缘模拟完成: 平均 λ_max={records['lambda_max'].mean():.6f}, "
                         f"平均 IPR={records['ipr'].mean():.4g}")
        return EdgeSampleSet(records, metadata, results[0][1])


def simulate_edge(spec: EnsembleSpec, trials: int, threads: int = 1) -> EdgeSampleSet:
    return EdgeSimHandler(spec, {'threads': threads}).run(trials)


def reference_table_from_simulation(beta: int, N: int, trials: int, seed: int = 0,
                                    threads: int = 1, points: int = 99) -> pd.DataFrame:
    """平坦 GOE/GUE 的 N^{2/3}(λ_max−2) 分位表，列为 x,cdf"""
    spec = EnsembleSpec(ProfileSpec('Flat', {}, d=1, L=N, W=1), beta=beta, seed=seed)
    samples = EdgeSimHandler(spec, {'threads': threads}).run(trials)
    values = N ** (2.0 / 3.0) * (samples.lambda_max - 2.0)
    probabilities = np.linspace(0.01, 0.99, points)
    return pd.DataFrame({'x': np.quantile(values, probabilities), 'cdf': probabilities})
