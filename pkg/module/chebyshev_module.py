import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, special

from module.errors import ValidationError
from module.special_module import sinc_test_function

logger = logging.getLogger(__name__)

_SYMMETRY_TOL = 1e-12
_EXACT_LIMIT = 64       # m·t 不超过此值时用有理数


@dataclass(frozen=True)
class MomentRequest:
    """混合矩 E[Π_j Tr U_{n_j}(X/2)] 的请求"""
    orders: Tuple[int, ...]
    trials: int
    seed: int
    ensemble: object
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValidationError(f"试验次数必须 ≥ 1: {self.trials}")
        if not self.orders or any(n < 0 for n in self.orders):
            raise ValidationError(f"阶数必须是非负整数: {self.orders}")

    @property
    def parity(self) -> int:
        return sum(self.orders) % 2


def _check_hermitian(X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValidationError(f"需要方阵，得到形状 {X.shape}")
    if np.max(np.abs(X - X.conj().T), initial=0.0) > _SYMMETRY_TOL:
        raise ValidationError("矩阵不对称（或非 Hermite）")


def chebyshev_trace_many(X: np.ndarray, orders: Iterable[int], method: str = 'recurrence') -> Dict[int, float]:
    """一次遍历计算多个阶的 Tr U_n(X/2)"""
    _check_hermitian(X)
    orders = sorted(set(int(n) for n in orders))
    if method == 'eigen':
        eigs = linalg.eigvalsh(X)
        return {n: float(np.sum(special.eval_chebyu(n, eigs / 2.0))) for n in orders}
    if method != 'recurrence':
        raise ValidationError(f"未知的迹计算方式: {method}")
    # 只保留两个矩阵：U_{k+1} = X·U_k − U_{k−1}
    previous = np.eye(X.shape[0], dtype=X.dtype)
    current = X.copy()
    traces = {}
    for k in range(max(orders) + 1):
        if k in orders:
            traces[k] = float(np.real(np.trace(previous)))
        previous, current = current, X @ current - previous
    return traces


def chebyshev_trace(X: np.ndarray, n: int, method: str = 'recurrence') -> float:
    """Tr U_n(X/2)"""
    return chebyshev_trace_many(X, [n], method)[n]


def _chebyshev_counts(start: int, factor: int, times: int) -> np.ndarray:
    # U_a·U_b = Σ_{k=|a−b|, 步长2}^{a+b} U_k，按整数计数累积
    top = start + factor * times
    dtype = object if (factor + 1) ** times * 2 > 2 ** 62 else np.int64
    counts = np.zeros(top + 1, dtype=dtype)
    counts[start] = 1
    for _ in range(times):
        product = np.zeros(top + 1, dtype=dtype)
        for j in np.flatnonzero(counts):
            product[abs(j - factor): j + factor + 1: 2] += counts[j]
        counts = product
    return counts


def linearize_power(m: int, t: int, perturbed: bool = False) -> np.ndarray:
    """(U_m/(m+1))^t = Σ_k c_t(m;k) U_k/(k+1) 的系数表；perturbed 时首个因子换成 U_{m−1}/m"""
    if m < 1 or t < 2:
        raise ValidationError(f"需要 m ≥ 1, t ≥ 2，得到 m={m}, t={t}")
    if perturbed:
        counts = _chebyshev_counts(m - 1, m, t - 1)
        denominator = m * (m + 1) ** (t - 1)
    else:
        counts = _chebyshev_counts(m, m, t - 1)
        denominator = (m + 1) ** t
    weights = np.arange(1, counts.size + 1)
    if m * t <= _EXACT_LIMIT:
        return np.array([Fraction(int(w) * int(c), denominator) for w, c in zip(weights, counts)],
                        dtype=object)
    return np.array([float(int(w) * int(c)) / denominator for w, c in zip(weights, counts)])


def _set_partitions(items: Sequence[int]):
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for partition in _set_partitions(rest):
        for i in range(len(partition)):
            yield partition[:i] + [partition[i] | {head}] + partition[i + 1:]
        yield [frozenset({head})] + partition


def _normalize_table(table: Dict) -> Dict[FrozenSet[int], float]:
    return {frozenset(key) if not isinstance(key, frozenset) else key: value
            for key, value in table.items()}


def _ground_set(table: Dict[FrozenSet[int], float], s: Optional[int]) -> List[int]:
    if s is not None:
        return list(range(s))
    return sorted(set().union(*table.keys())) if table else []


def cumulants_from_moments(moments: Dict, s: Optional[int] = None) -> Dict[FrozenSet[int], float]:
    """κ(S) = m(S) − Σ_{π 非平凡划分} Π_{B∈π} κ(B)"""
    moments = _normalize_table(moments)
    ground = _ground_set(moments, s)
    cumulants: Dict[FrozenSet[int], float] = {}
    for size in range(1, len(ground) + 1):
        for subset in itertools.combinations(ground, size):
            key = frozenset(subset)
            if key not in moments:
                raise ValidationError(f"矩表缺少子集 {sorted(key)}")
            value = moments[key]
            for partition in _set_partitions(list(subset)):
                if len(partition) < 2:
                    continue
                value -= math.prod(cumulants[frozenset(block)] for block in partition)
            cumulants[key] = value
    return cumulants


def moments_from_cumulants(cumulants: Dict, s: Optional[int] = None) -> Dict[FrozenSet[int], float]:
    """m(S) = Σ_π Π_{B∈π} κ(B)"""
    cumulants = _normalize_table(cumulants)
    ground = _ground_set(cumulants, s)
    moments = {}
    for size in range(1, len(ground) + 1):
        for subset in itertools.combinations(ground, size):
            try:
                moments[frozenset(subset)] = sum(
                    math.prod(cumulants[frozenset(block)] for block in partition)
                    for partition in _set_partitions(list(subset)))
            except KeyError as e:
                raise ValidationError(f"累积量表缺少子集 {e}") from None
    return moments


def _mean_and_stderr(samples: np.ndarray) -> Tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        return float(samples.mean()), 0.0
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))


def _trial_traces(request: MomentRequest, variance: np.ndarray) -> np.ndarray:
    from module.ensemble_module import sample_matrix

    spec = replace(request.ensemble, seed=request.seed)

    def one(trial: int) -> List[float]:
        X = sample_matrix(spec, trial, variance=variance)
        traces = chebyshev_trace_many(X, request.orders, method='eigen')
        return [traces[n] for n in request.orders]

    with ThreadPoolExecutor(max_workers=max(1, request.threads)) as pool:
        rows = list(pool.map(one, range(request.trials)))
    return np.asarray(rows)


def moment_table(request: MomentRequest) -> Dict[FrozenSet[int], Tuple[float, float]]:
    """一次蒙特卡罗得到所有非空子集的混合矩 (估计, 标准误)"""
    from module.ensemble_module import variance_matrix

    traces = _trial_traces(request, variance_matrix(request.ensemble))
    table = {}
    for size in range(1, len(request.orders) + 1):
        for subset in itertools.combinations(range(len(request.orders)), size):
            products = np.prod(traces[:, list(subset)], axis=1)
            table[frozenset(subset)] = _mean_and_stderr(products)
    logger.info(f"混合矩估计完成: 阶数 {request.orders}, {request.trials} 次试验")
    return table


def mixed_chebyshev_moment(request: MomentRequest) -> Tuple[float, float]:
    """E[Π_j Tr U_{n_j}(X/2)] 的估计与标准误"""
    table = moment_table(request)
    return table[frozenset(range(len(request.orders)))]


def moment_frame(request: MomentRequest, table: Dict[FrozenSet[int], Tuple[float, float]]) -> pd.DataFrame:
    rows = []
    for key in sorted(table, key=lambda k: (len(k), sorted(k))):
        estimate, stderr = table[key]
        members = sorted(key)
        rows.append({
            'subset': '-'.join(str(i) for i in members),
            'orders': '-'.join(str(request.orders[i]) for i in members),
            'estimate': estimate,
            'stderr': stderr,
            'trials': request.trials,
            'seed': request.seed,
        })
    return pd.DataFrame(rows, columns=['subset', 'orders', 'estimate', 'stderr', 'trials', 'seed'])


def sinc_order(t: float, s_N: float) -> int:
    """n = ⌊t·s_N^{−1/2}⌋"""
    return int(math.floor(t / math.sqrt(s_N)))


def sinc_statistic(eigenvalues, m: int, t: float, s_N: float) -> Tuple[float, float]:
    """每次试验 Σ_λ sinc_m(t, (λ−2)/s_N) 的平均值和标准误"""
    if s_N <= 0:
        raise ValidationError(f"边缘尺度 s_N 必须为正: {s_N}")
    eigs = np.atleast_2d(np.asarray(eigenvalues, dtype=float))
    per_trial = np.sum(sinc_test_function(m, t, (eigs - 2.0) / s_N), axis=1)
    return _mean_and_stderr(per_trial)


def chebyshev_power_statistic(eigenvalues, n: int, m: int) -> Tuple[float, float]:
    """每次试验 Σ_λ (U_n(λ/2)/(n+1))^m 的平均值和标准误"""
    eigs = np.atleast_2d(np.asarray(eigenvalues, dtype=float))
    per_trial = np.sum((special.eval_chebyu(n, eigs / 2.0) / (n + 1)) ** m, axis=1)
    return _mean_and_stderr(per_trial)
