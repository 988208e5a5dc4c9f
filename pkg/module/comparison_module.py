import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from module.chain_module import TRANSLATION_INVARIANT, TorusChain, dense_matrix, n_step_fft, n_step_tables, step_variance
from module.defaults import HYPOTHESIS_THRESHOLDS, THETA
from module.diagram_module import SpikeOperator
from module.errors import ValidationError
from module.special_module import char_exponent, theta_alpha

logger = logging.getLogger(__name__)

ROW_MODE = 'row'
DENSE_MODE = 'dense'


@dataclass
class ComparisonReport:
    """短程-长程比较的有限 N 诊断量与各假设判定"""
    n: int
    mode: str
    b: np.ndarray
    epsilon: np.ndarray
    delta: np.ndarray
    cumulative_epsilon: np.ndarray
    cumulative_delta: np.ndarray
    theta: float
    max_variance: float
    spike_norm: float
    spike_bound: float
    thresholds: Dict[str, float]
    ratios: Dict[str, float] = field(default_factory=dict)
    verdicts: Dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'step': np.arange(1, self.n + 1),
            'b': self.b,
            'epsilon': self.epsilon,
            'delta': self.delta,
        })

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    def to_json(self) -> dict:
        return {
            'n': self.n,
            'mode': self.mode,
            'b': self.b.tolist(),
            'epsilon': self.epsilon.tolist(),
            'delta': self.delta.tolist(),
            'cumulative_epsilon': float(self.cumulative_epsilon[-1]),
            'cumulative_delta': float(self.cumulative_delta[-1]),
            'theta': self.theta,
            'max_variance': self.max_variance,
            'spike_norm': self.spike_norm,
            'spike_bound': self.spike_bound,
            'thresholds': dict(self.thresholds),
            'ratios': dict(self.ratios),
            'verdicts': dict(self.verdicts),
        }


def _check_pair(chain_a: TorusChain, chain_b: TorusChain, n: int) -> None:
    if chain_a.N != chain_b.N:
        raise ValidationError(f"两条链的状态数不同: {chain_a.N} ≠ {chain_b.N}")
    if n < 1:
        raise ValidationError(f"步数 n 必须 ≥ 1: {n}")


def comparison_mode(chain_a: TorusChain, chain_b: TorusChain) -> str:
    """同结构同形状的平移不变对只需首行"""
    if (chain_a.is_translation_invariant and chain_a.structure == chain_b.structure
            and chain_a.table.shape == chain_b.table.shape and chain_a.M == chain_b.M):
        return ROW_MODE
    return DENSE_MODE


def _row_tables(chain_a: TorusChain, chain_b: TorusChain, n: int) -> Tuple[np.ndarray, np.ndarray]:
    with ThreadPoolExecutor(max_workers=2) as pool:
        tables = list(pool.map(lambda chain: n_step_tables(chain, n).reshape(n, -1), (chain_a, chain_b)))
    return tables[0], tables[1]


def _step_statistics(chain_a: TorusChain, chain_b: TorusChain, n: int):
    """逐步给出 (b_i 的累积最大值, ε_i, δ_i)"""
    mode = comparison_mode(chain_a, chain_b)
    b = np.empty(n)
    epsilon = np.empty(n)
    delta = np.empty(n)
    if mode == ROW_MODE:
        p, q = _row_tables(chain_a, chain_b, n)
        b[:] = np.max(np.cumsum(np.maximum(p, q), axis=0), axis=1)
        difference = np.abs(p - q)
        epsilon[:] = difference.sum(axis=1)
        delta[:] = difference.max(axis=1)
        return mode, b, epsilon, delta
    P = dense_matrix(chain_a)
    Q = dense_matrix(chain_b)
    power_p, power_q = np.eye(chain_a.N), np.eye(chain_b.N)
    running = np.zeros_like(P)
    for i in range(n):
        power_p = power_p @ P
        power_q = power_q @ Q
        running += np.maximum(power_p, power_q)
        difference = np.abs(power_p - power_q)
        b[i] = running.max()
        epsilon[i] = difference.sum(axis=1).max()
        delta[i] = difference.max()
    return mode, b, epsilon, delta


def avg_upper_bound_b(chain_a: TorusChain, chain_b: TorusChain, n: int) -> np.ndarray:
    """b_k = max_{x,y} Σ_{i≤k} max(p_i, p̃_i)(x,y)，k = 1..n"""
    _check_pair(chain_a, chain_b, n)
    return _step_statistics(chain_a, chain_b, n)[1]


def l1_linf_differences(chain_a: TorusChain, chain_b: TorusChain, n: int):
    """(ε, δ, 𝓔, Δ)：逐步 ℓ¹/ℓ∞ 距离及其累积和"""
    _check_pair(chain_a, chain_b, n)
    _, _, epsilon, delta = _step_statistics(chain_a, chain_b, n)
    return epsilon, delta, np.cumsum(epsilon), np.cumsum(delta)


def comparison_report(chain_a: TorusChain, chain_b: TorusChain, n: int, theta: float = 1.0,
                      spikes: Optional[SpikeOperator] = None, thresholds: Optional[Dict[str, float]] = None,
                      C: float = 1.0, W: Optional[float] = None, alpha: float = 2.0) -> ComparisonReport:
    _check_pair(chain_a, chain_b, n)
    limits = dict(HYPOTHESIS_THRESHOLDS)
    limits.update(thresholds or {})
    unknown = set(limits) - set(HYPOTHESIS_THRESHOLDS)
    if unknown:
        raise ValidationError(f"未知的判定阈值: {sorted(unknown)}")
    mode, b, epsilon, delta = _step_statistics(chain_a, chain_b, n)
    cumulative_epsilon = np.cumsum(epsilon)
    cumulative_delta = np.cumsum(delta)
    max_variance = max(float(chain_a.table.max()) / chain_a.M, float(chain_b.table.max()) / chain_b.M)
    spike_norm = 0.0
    if spikes is not None:
        spike_norm = float(np.max(np.abs(spikes.eigenvalues(W, alpha))))
    ratios = {
        'l1_ratio': float(cumulative_epsilon[-1] / n),
        'linf_ratio': float(cumulative_delta[-1] / b[-1]),
        'mixing': float(n ** 2 * b[-1]),
        'non_gaussian': float(theta * n ** 2 * max_variance),
    }
    verdicts = {key: ratios[key] <= limits[key] for key in ratios}
    spike_bound = 1.0 + C / n
    verdicts['spike'] = spike_norm <= spike_bound
    report = ComparisonReport(n, mode, b, epsilon, delta, cumulative_epsilon, cumulative_delta, theta,
                              max_variance, spike_norm, spike_bound, limits, ratios, verdicts)
    failed = [key for key, ok in verdicts.items() if not ok]
    logger.info(f"比较诊断完成 (n={n}, {mode} 模式): "
                + ("全部假设通过" if not failed else f"未通过 {', '.join(failed)}"))
    return report


def power_law_b_envelope(n: int, W: float, N: int, alpha: float) -> np.ndarray:
    """Σ_{j≤k}(W^{−1}j^{−1/α} + N^{−1})，k = 1..n"""
    j = np.arange(1, n + 1, dtype=float)
    return np.cumsum(j ** (-1.0 / alpha) / W + 1.0 / N)


def fit_b_envelope(b: np.ndarray, envelope: np.ndarray, fit_upto: int = 8) -> float:
    """在前 fit_upto 步上拟合 b ≤ C·envelope 的常数 C"""
    return float(np.max(b[:fit_upto] / envelope[:fit_upto]))


@dataclass
class LocalLimitResidual:
    residual: float
    predicted_bound: float
    n: int
    alpha: float
    sigma: float


def lclt_residual(chain: TorusChain, n: int, alpha: Optional[float] = None,
                  c: Optional[float] = None, sigma: Optional[float] = None) -> LocalLimitResidual:
    """sup_x |p_n(0,x) − θ_α(x/L, n(W/L)^α)/N|"""
    if chain.structure != TRANSLATION_INVARIANT or chain.spec is None:
        raise ValidationError("局部极限残差只对平移不变的剖面核定义")
    spec = chain.spec
    shape = chain.table.shape
    L, d, W = shape[0], len(shape), float(spec.W)
    if spec.kind == 'AlphaStable':
        alpha = float(spec.params.get('alpha', 2.0)) if alpha is None else alpha
        c = float(spec.params.get('c', THETA['c_alpha'])) if c is None else c
        sigma = float(spec.params.get('sigma', THETA['sigma'])) if sigma is None else sigma
    else:
        alpha = 2.0 if alpha is None else alpha
        if alpha != 2.0:
            raise ValidationError(f"非稳定剖面只与 α=2 的极限比较: α={alpha}")
        c = THETA['c_alpha'] if c is None else c
        if sigma is None:
            sigma = math.sqrt(step_variance(chain)) / W
    tau = n * (W / L) ** alpha
    row = n_step_fft(chain, n)
    if d == 1:
        reference = theta_alpha(alpha, np.arange(L) / L, tau, c=c, sigma=sigma)
    else:
        points = np.stack(np.indices(shape), axis=-1) / L
        reference = theta_alpha(alpha, points, tau, c=c, sigma=sigma, d=d)
    residual = float(np.max(np.abs(row - np.asarray(reference) / chain.N)))
    predicted = n * math.exp(-char_exponent(alpha, c, sigma) * (math.pi * W) ** alpha)
    logger.debug(f"局部极限残差 {residual:.3e}，预测量级 {predicted:.3e}")
    return LocalLimitResidual(residual, predicted, n, alpha, sigma)
