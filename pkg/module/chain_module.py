import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from module.defaults import FEASIBILITY, PROFILE, THETA
from module.errors import FeasibilityError, ValidationError
from module.special_module import periodized_stable_row, skellam_table, theta_alpha

logger = logging.getLogger(__name__)

PROFILE_KINDS = ('Flat', 'AlphaStable', 'PowerLawTail', 'TruncatedGaussian', 'Tabulated',
                 'Hankel', 'WegnerBlock', 'Interpolated')

# 转移核的存储结构
TRANSLATION_INVARIANT = 'translation_invariant'
REFLECTIVE = 'reflective'
BLOCK = 'block'
DENSE = 'dense'


@dataclass(frozen=True)
class ProfileSpec:
    """方差剖面的声明式描述：种类、参数和几何 (d, L, W)"""
    kind: str
    params: Dict = field(default_factory=dict)
    d: int = 1
    L: int = 8
    W: int = 1

    @property
    def base(self) -> Optional['ProfileSpec']:
        return self.params.get('base')

    def to_json(self) -> dict:
        params = dict(self.params)
        if isinstance(params.get('base'), ProfileSpec):
            params['base'] = params['base'].to_json()
        for key, value in params.items():
            if isinstance(value, np.ndarray):
                params[key] = value.tolist()
        return {'kind': self.kind, 'params': params, 'd': self.d, 'L': self.L, 'W': self.W}

    @classmethod
    def from_json(cls, data: dict) -> 'ProfileSpec':
        unknown = set(data) - {'kind', 'params', 'd', 'L', 'W'}
        if unknown:
            raise ValidationError(f"剖面描述含未知字段: {sorted(unknown)}")
        if 'kind' not in data:
            raise ValidationError("剖面描述缺少 kind")
        params = dict(data.get('params', {}))
        if isinstance(params.get('base'), dict):
            params['base'] = cls.from_json(params['base'])
        return cls(kind=data['kind'], params=params, d=int(data.get('d', 1)),
                   L=int(data.get('L', 8)), W=int(data.get('W', 1)))


@dataclass
class TorusChain:
    """有限状态空间上的对称马尔可夫转移核"""
    N: int
    structure: str
    table: np.ndarray
    x0: int = 0
    M: int = 1
    normalizer: float = 1.0
    spec: Optional[ProfileSpec] = None
    base: Optional['TorusChain'] = None
    lam: float = 0.0

    @property
    def state_shape(self) -> Tuple[int, ...]:
        if self.structure == TRANSLATION_INVARIANT:
            return self.table.shape
        return (self.N,)

    @property
    def is_translation_invariant(self) -> bool:
        return self.structure in (TRANSLATION_INVARIANT, BLOCK)


def _reversed(table: np.ndarray) -> np.ndarray:
    # q[−z mod L]
    axes = tuple(range(table.ndim))
    return np.roll(np.flip(table, axis=axes), shift=(1,) * table.ndim, axis=axes)


def _symmetrize_and_normalize(row: np.ndarray) -> Tuple[np.ndarray, float]:
    row = 0.5 * (row + _reversed(row))
    total = float(row.sum())
    if not np.isfinite(total) or total <= 0:
        raise ValidationError(f"剖面总质量不是正有限数: {total}")
    return row / total, total


def _check_geometry(spec: ProfileSpec) -> None:
    if spec.kind not in PROFILE_KINDS:
        raise ValidationError(f"未知的剖面种类: {spec.kind}")
    if spec.d < 1:
        raise ValidationError(f"维数 d 必须 ≥ 1: {spec.d}")
    if spec.kind in ('WegnerBlock',):
        return
    if spec.L < 2:
        raise ValidationError(f"环面边长 L 必须 ≥ 2: {spec.L}")
    if spec.kind == 'Flat':
        return
    if not 1 <= spec.W <= spec.L / 2:
        raise ValidationError(f"带宽 W={spec.W} 必须在 [1, L/2={spec.L / 2}] 内")


def _profile_function(spec: ProfileSpec):
    params = spec.params
    if spec.kind == 'PowerLawTail':
        tail = float(params.get('T', 4.0))
        if tail <= spec.d:
            raise ValidationError(f"幂律尾指数 T={tail} 必须大于 d={spec.d}")
        return lambda u: (1.0 + u) ** (-tail)
    if spec.kind == 'TruncatedGaussian':
        sigma = float(params.get('sigma', 1.0))
        cutoff = float(params.get('cutoff', 4.0))
        return lambda u: np.exp(-u ** 2 / (2.0 * sigma ** 2)) * (u <= cutoff * sigma)
    if spec.kind == 'Tabulated':
        grid = np.asarray(params['grid'], dtype=float)
        values = np.asarray(params['values'], dtype=float)
        if grid.shape != values.shape or grid.ndim != 1:
            raise ValidationError("表格剖面的 grid 与 values 长度不一致")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValidationError("表格剖面含负值或非有限值")
        return lambda u: np.interp(u, grid, values, left=values[0], right=0.0)
    raise ValidationError(f"剖面种类 {spec.kind} 没有逐点剖面函数")


def _shells(s: int, d: int):
    for k in itertools.product(range(-s, s + 1), repeat=d):
        if max(abs(v) for v in k) == s:
            yield np.array(k)


def _shell_sum_row(spec: ProfileSpec) -> np.ndarray:
    f = _profile_function(spec)
    L, W, d = spec.L, spec.W, spec.d
    centered = np.arange(L) - L * (np.arange(L) >= (L + 1) // 2)   # [−L/2, L/2)
    coords = np.stack(np.meshgrid(*([centered] * d), indexing='ij'), axis=-1)
    row = np.zeros((L,) * d)
    cap = FEASIBILITY['shell_cap']
    for s in range(cap + 1):
        added = np.zeros_like(row)
        for k in _shells(s, d):
            u = np.linalg.norm((coords + k * L) / W, axis=-1)
            added += f(u)
        row += added
        mass = float(added.sum())
        total = float(row.sum())
        if s > 0 and mass <= PROFILE['wrap_tol'] * total:
            logger.debug(f"周期化求和在第 {s} 层收敛")
            return row
    logger.warning(f"周期化求和达到 {cap} 层上限仍未收敛，按已有部分截断")
    return row


def _translation_invariant_row(spec: ProfileSpec) -> Tuple[np.ndarray, float]:
    if spec.kind == 'Flat':
        N = spec.L ** spec.d
        return np.full((spec.L,) * spec.d, 1.0 / N), float(N)
    if spec.kind == 'AlphaStable':
        alpha = float(spec.params.get('alpha', 2.0))
        row = periodized_stable_row(alpha, spec.L, spec.W, d=spec.d,
                                    c=float(spec.params.get('c', THETA['c_alpha'])),
                                    sigma=float(spec.params.get('sigma', THETA['sigma'])))
        floor = float(row.min())
        if floor < -PROFILE['clamp'] * float(row.max()):
            logger.warning(f"稳定剖面行出现负值 {floor:.3e}，已截为0")
        row = np.maximum(row, 0.0)
    else:
        row = _shell_sum_row(spec)
    normalizer = spec.params.get('normalizer')
    row, total = _symmetrize_and_normalize(row)
    if normalizer is not None:
        logger.debug(f"给定归一化常数 {normalizer}，实际行和 {total:.6g}")
    return row, total


def build_variance_profile(spec: ProfileSpec) -> TorusChain:
    """由剖面描述构造转移核 P_N = (σ²_xy)"""
    _check_geometry(spec)
    if spec.kind == 'WegnerBlock':
        D = int(spec.params.get('D', 2))
        M = int(spec.params.get('M', 1))
        lam = float(spec.params.get('lam', 0.0))
        if M < 1:
            raise ValidationError(f"块大小 M 必须 ≥ 1: {M}")
        table = wegner_block_kernel(D, spec.d, lam, 1)
        chain = TorusChain(N=M * D ** spec.d, structure=BLOCK, table=table, M=M,
                           normalizer=float(M), spec=spec, lam=lam)
    elif spec.kind == 'Hankel':
        base = spec.base
        if base is None:
            raise ValidationError("Hankel 剖面缺少 base")
        if spec.d != 1 or base.d != 1:
            raise ValidationError("Hankel 剖面只支持 d=1")
        base_chain = build_variance_profile(base)
        if base_chain.structure != TRANSLATION_INVARIANT:
            raise ValidationError("Hankel 剖面的 base 必须是平移不变核")
        x0 = int(spec.params.get('x0', 0)) % base.L
        chain = TorusChain(N=base_chain.N, structure=REFLECTIVE, table=base_chain.table.copy(),
                           x0=x0, normalizer=base_chain.normalizer, spec=spec, base=base_chain)
    elif spec.kind == 'Interpolated':
        base = spec.base
        if base is None:
            raise ValidationError("插值剖面缺少 base")
        lam = float(spec.params.get('lam', 0.0))
        if not 0.0 <= lam <= 1.0:
            raise ValidationError(f"插值权重 λ 必须在 [0,1] 内: {lam}")
        base_chain = build_variance_profile(base)
        chain = interpolate_chain(base_chain, lam)
        chain.spec = spec
    else:
        row, total = _translation_invariant_row(spec)
        chain = TorusChain(N=row.size, structure=TRANSLATION_INVARIANT, table=row,
                           normalizer=total, spec=spec)
    logger.debug(f"已构造 {spec.kind} 转移核: N={chain.N}, 结构={chain.structure}")
    return chain


def flat_chain(L: int, d: int = 1) -> TorusChain:
    """所有转移概率都为 1/N 的平坦核 J"""
    return build_variance_profile(ProfileSpec('Flat', d=d, L=L, W=1))


def interpolate_chain(base: TorusChain, lam: float) -> TorusChain:
    """P_λ = λJ + (1−λ)P₀，保持底核的存储结构"""
    if base.structure == DENSE:
        table = lam / base.N + (1.0 - lam) * base.table
    elif base.structure == BLOCK:
        blocks = base.table.size
        table = lam / blocks + (1.0 - lam) * base.table
    else:
        table = lam / base.N + (1.0 - lam) * base.table
    return TorusChain(N=base.N, structure=base.structure, table=table, x0=base.x0, M=base.M,
                      normalizer=base.normalizer, spec=base.spec, base=base, lam=lam)


def _clamp_distribution(values: np.ndarray) -> np.ndarray:
    floor = float(values.min())
    if floor < -PROFILE['clamp']:
        logger.warning(f"DFT 幂出现较大负值 {floor:.3e}，截为0后重新归一化")
    values = np.where(values < 0.0, 0.0, values)
    return values / values.sum()


def _point_mass(shape: Tuple[int, ...], index=0) -> np.ndarray:
    out = np.zeros(shape)
    out.flat[index] = 1.0
    return out


def _block_expand(reduced: np.ndarray, M: int) -> np.ndarray:
    # p_n(0,y) = p̄_n(0,β(y))/M
    return np.repeat(reduced.ravel(), M) / M


def n_step_fft(chain: TorusChain, n: int) -> np.ndarray:
    """p_n(0,·)：首行的 DFT 取 n 次幂再逆变换"""
    if n < 0:
        raise ValidationError(f"步数 n 不能为负: {n}")
    if not chain.is_translation_invariant:
        raise ValidationError(f"{chain.structure} 结构不支持 DFT 快速幂")
    if n == 0:
        return _point_mass(chain.state_shape)
    spectrum = np.fft.fftn(chain.table)
    values = _clamp_distribution(np.real(np.fft.ifftn(spectrum ** n)))
    if chain.structure == BLOCK:
        return _block_expand(values, chain.M)
    return values


def n_step_tables(chain: TorusChain, n: int) -> np.ndarray:
    """依次返回 p_1(0,·) … p_n(0,·)，形状 (n, *state_shape)"""
    if not chain.is_translation_invariant:
        raise ValidationError(f"{chain.structure} 结构不支持 DFT 快速幂")
    spectrum = np.fft.fftn(chain.table)
    power = np.ones_like(spectrum)
    tables = np.empty((n,) + chain.state_shape)
    for i in range(n):
        power = power * spectrum
        values = _clamp_distribution(np.real(np.fft.ifftn(power)))
        tables[i] = _block_expand(values, chain.M) if chain.structure == BLOCK else values
    return tables


def _check_dense(chain: TorusChain, cap: Optional[int]) -> None:
    cap = FEASIBILITY['dense_states'] if cap is None else cap
    if chain.N > cap:
        raise FeasibilityError('稠密转移矩阵', chain.N, cap)


def _translation_matrix(table: np.ndarray) -> np.ndarray:
    if table.ndim == 1:
        return linalg.circulant(table)
    shape = table.shape
    coords = np.stack(np.unravel_index(np.arange(table.size), shape), axis=-1)
    diff = (coords[:, None, :] - coords[None, :, :]) % np.array(shape)
    return table[tuple(np.moveaxis(diff, -1, 0))]


def dense_matrix(chain: TorusChain, cap: Optional[int] = None) -> np.ndarray:
    """N×N 稠密转移矩阵"""
    _check_dense(chain, cap)
    if chain.structure == TRANSLATION_INVARIANT:
        return _translation_matrix(chain.table)
    if chain.structure == REFLECTIVE:
        states = np.arange(chain.N)
        return chain.table[(states[:, None] + states[None, :] - chain.x0) % chain.N]
    if chain.structure == BLOCK:
        reduced = _translation_matrix(chain.table)
        return np.kron(reduced, np.full((chain.M, chain.M), 1.0 / chain.M))
    return chain.table


def dense_power(chain: TorusChain, n: int, cap: Optional[int] = None) -> np.ndarray:
    return np.linalg.matrix_power(dense_matrix(chain, cap), n)


def n_step_power(chain: TorusChain, n: int, x: int = 0, cap: Optional[int] = None) -> np.ndarray:
    """逐次稠密乘法得到 Pⁿ 的第 x 行，作为所有结构的校验基准"""
    if n < 0:
        raise ValidationError(f"步数 n 不能为负: {n}")
    matrix = dense_matrix(chain, cap)
    row = _point_mass((chain.N,), x)
    for _ in range(n):
        row = row @ matrix
    return row


def hankel_step(chain: TorusChain, n: int, x: int) -> Tuple[np.ndarray, int]:
    """交错游走的 p_n(x,·)，以及预测的集中位置 (n 偶: x, n 奇: x₀−x)"""
    if chain.structure != REFLECTIVE:
        raise ValidationError(f"hankel_step 需要 reflective 结构，得到 {chain.structure}")
    if n < 0:
        raise ValidationError(f"步数 n 不能为负: {n}")
    L = chain.N
    x = x % L
    q_hat = np.fft.fft(chain.table)
    k = np.arange(L)
    shift = np.exp(-2j * np.pi * k * chain.x0 / L)
    mu_hat = np.exp(-2j * np.pi * k * x / L)
    for _ in range(n):
        # μ̂_{j+1}(k) = q̂(k)·e^{−2πikx₀/L}·μ̂_j(−k)
        mu_hat = q_hat * shift * np.roll(mu_hat[::-1], 1)
    values = np.real(np.fft.ifft(mu_hat))
    distribution = _clamp_distribution(values) if n else _point_mass((L,), x)
    center = x if n % 2 == 0 else (chain.x0 - x) % L
    return distribution, center


def wegner_block_kernel(D: int, d: int, lam: float, n: int) -> np.ndarray:
    """块环面 T_D^d 上惰性最近邻游走的 p̄_n(0,·)"""
    if D < 2:
        raise ValidationError(f"块环面边长 D 必须 ≥ 2: {D}")
    if not 0.0 <= lam < 1.0:
        raise ValidationError(f"耦合 λ 必须在 [0,1) 内: {lam}")
    if n < 0:
        raise ValidationError(f"步数 n 不能为负: {n}")
    step = np.zeros((D,) * d)
    step[(0,) * d] = 1.0 - lam
    for axis in range(d):
        for sign in (1, -1):
            index = [0] * d
            index[axis] = sign % D
            step[tuple(index)] += lam / (2 * d)
    if n == 1:
        return step
    if n == 0:
        return _point_mass(step.shape)
    return _clamp_distribution(np.real(np.fft.ifftn(np.fft.fftn(step) ** n)))


def _regime_of(value: float) -> str:
    if value < 0.1:
        return 'frozen'
    if value > 10.0:
        return 'diffusive'
    return 'skellam'


def wegner_regime(n: int, lam: float, M: int = 1) -> Dict[str, object]:
    """按 nλ（游走尺度）和 M^{1/3}λ（矩阵尺度）判定冻结/Skellam/扩散区"""
    matrix_scale = M ** (1.0 / 3.0) * lam
    return {
        'walk': _regime_of(n * lam),
        'matrix': _regime_of(matrix_scale),
        'n_lambda': n * lam,
        'matrix_scale': matrix_scale,
    }


def wegner_reference(D: int, d: int, lam: float, n: int) -> np.ndarray:
    """当前区间对应的参考核"""
    regime = wegner_regime(n, lam)['walk']
    if regime == 'frozen':
        return _point_mass((D,) * d)
    if regime == 'skellam':
        return skellam_table(d, D, n * lam / 2.0)
    variance = n * lam / d
    line = theta_alpha(2.0, np.arange(D) / D, variance / D ** 2) / D
    table = line
    for _ in range(d - 1):
        table = np.multiply.outer(table, line)
    return table / table.sum()


def interpolation_identity_residual(chain: TorusChain, n: int, cap: Optional[int] = None) -> float:
    """sup |P_λⁿ − (1−λ)ⁿP₀ⁿ − (1−(1−λ)ⁿ)J|"""
    if chain.base is None:
        raise ValidationError("该转移核不是插值核")
    weight = (1.0 - chain.lam) ** n
    lhs = dense_power(chain, n, cap)
    rhs = weight * dense_power(chain.base, n, cap) + (1.0 - weight) / chain.N
    return float(np.max(np.abs(lhs - rhs)))


def step_variance(chain: TorusChain) -> float:
    """单步位移的每坐标方差（居中代表元）"""
    if chain.structure != TRANSLATION_INVARIANT:
        raise ValidationError("只对平移不变核定义步长方差")
    L = chain.table.shape[0]
    centered = np.arange(L) - L * (np.arange(L) >= (L + 1) // 2)
    marginal = chain.table.reshape(L, -1).sum(axis=1)
    return float(np.sum(marginal * centered ** 2))


def kernel_frame(chain: TorusChain, n: int = 1, cap: Optional[int] = None) -> pd.DataFrame:
    """按行优先导出 Pⁿ，列为 x,y,p"""
    matrix = dense_power(chain, n, cap) if n != 1 else dense_matrix(chain, cap)
    x, y = np.meshgrid(np.arange(chain.N), np.arange(chain.N), indexing='ij')
    return pd.DataFrame({'x': x.ravel(), 'y': y.ravel(), 'p': matrix.ravel()})
