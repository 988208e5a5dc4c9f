import logging
import math
from fractions import Fraction
from functools import lru_cache
from numbers import Rational
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate, interpolate, special

from module.defaults import THETA, REFERENCE_MOMENTS, REFERENCE_TABLES, SINC_ORDERS, TW_ORACLE
from module.errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / 'data'

ArrayLike = Union[float, np.ndarray]

_TABLE_EDGE = 60.0      # 样条表的右端点，之外用渐近展开
_TAIL_TERMS = 16


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= 2.0:
        raise ValidationError(f"稳定指数 α 必须在 (0,2] 内: {alpha}")


def _check_tau(tau) -> None:
    if np.any(np.asarray(tau) <= 0):
        raise ValidationError(f"τ 必须为正: {tau}")


def char_exponent(alpha: float, c: float = 1.0, sigma: float = 1.0) -> float:
    """特征函数 e^{−κ|t|^α} 中的 κ；α=2 时取 σ²/2"""
    if alpha == 2.0:
        return 0.5 * sigma ** 2
    return c


def stable_tail_constant(alpha: float, c: float = 1.0) -> float:
    """|u|^{−1−α} 尾部的首项系数"""
    return math.gamma(alpha + 1.0) * math.sin(math.pi * alpha / 2.0) * c / math.pi


def _tail_coefficients(alpha: float, terms: int = _TAIL_TERMS) -> np.ndarray:
    # g(u) ~ Σ_j A_j |u|^{−jα−1}，单位尺度
    j = np.arange(1, terms + 1)
    signs = np.where(j % 2 == 1, 1.0, -1.0)
    logs = special.gammaln(j * alpha + 1.0) - special.gammaln(j + 1.0)
    return signs * np.exp(logs) * np.sin(j * np.pi * alpha / 2.0) / np.pi


def _unit_density_quad(alpha: float, u: float) -> float:
    u = abs(u)
    if u == 0.0:
        return math.gamma(1.0 + 1.0 / alpha) / math.pi
    value, _ = integrate.quad(lambda t: math.exp(-t ** alpha), 0.0, np.inf,
                              weight='cos', wvar=u, epsabs=1e-12, limlst=200)
    return value / math.pi


def _unit_density_asymptotic(alpha: float, u: np.ndarray) -> np.ndarray:
    coeffs = _tail_coefficients(alpha)
    u = np.abs(u)
    out = np.zeros_like(u, dtype=float)
    for j, a in enumerate(coeffs, start=1):
        out += a * u ** (-j * alpha - 1.0)
    return out


@lru_cache(maxsize=16)
def _unit_density_table(alpha: float) -> interpolate.CubicSpline:
    # 网格在 √u 上均匀，原点附近更密
    grid = np.linspace(0.0, math.sqrt(_TABLE_EDGE), 1201) ** 2
    values = np.array([_unit_density_quad(alpha, u) for u in grid])
    logger.debug(f"稳定密度样条表已建立: α={alpha}, {grid.size} 个节点")
    return interpolate.CubicSpline(grid, values, bc_type=((1, 0.0), 'not-a-knot'))


def _unit_density(alpha: float, u: np.ndarray, method: str) -> np.ndarray:
    u = np.abs(np.asarray(u, dtype=float))
    if method == 'table':
        table = _unit_density_table(float(alpha))
        out = np.empty_like(u)
        inside = u <= _TABLE_EDGE
        out[inside] = table(u[inside])
        out[~inside] = _unit_density_asymptotic(alpha, u[~inside])
        return out
    flat = [_unit_density_quad(alpha, float(v)) for v in u.ravel()]
    return np.asarray(flat, dtype=float).reshape(u.shape)


def stable_density(alpha: float, x: ArrayLike, tau: ArrayLike = 1.0, c: float = 1.0,
                   sigma: float = 1.0, d: int = 1, method: str = 'quad') -> ArrayLike:
    """对称 α-稳定密度 f_α(x,τ) = τ^{−d/α} f_α(τ^{−1/α}x)"""
    _check_alpha(alpha)
    _check_tau(tau)
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if d > 1:
        if alpha != 2.0:
            raise ValidationError("d ≥ 2 时只支持 α=2 的稳定密度")
        var = sigma ** 2 * tau[..., None] if tau.ndim else sigma ** 2 * tau
        dens = np.exp(-x ** 2 / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)
        result = np.prod(dens, axis=-1)
        return float(result) if result.ndim == 0 else result
    if alpha == 2.0:
        var = sigma ** 2 * tau
        result = np.exp(-x ** 2 / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)
    elif alpha == 1.0:
        a = c * tau
        result = a / (np.pi * (a ** 2 + x ** 2))
    else:
        scale = (c * tau) ** (1.0 / alpha)
        x, scale = np.broadcast_arrays(x, scale)
        result = _unit_density(alpha, x / scale, method) / scale
    return float(result) if np.ndim(result) == 0 else result


def _theta_spatial_1d(alpha: float, x: np.ndarray, tau: np.ndarray, c: float,
                      sigma: float, density_method: str) -> np.ndarray:
    kappa = char_exponent(alpha, c, sigma)
    if alpha == 2.0:
        spread = math.sqrt(2.0 * kappa * float(np.max(tau)))
        kmax = int(math.ceil(spread * math.sqrt(2.0 * 40.0))) + 2
        ks = np.arange(-kmax, kmax + 1)
        var = 2.0 * kappa * tau[..., None]
        u = x[..., None] + ks
        return np.sum(np.exp(-u ** 2 / (2.0 * var)) / np.sqrt(2.0 * np.pi * var), axis=-1)
    scale_max = float(np.max((c * tau) ** (1.0 / alpha)))
    kmax = max(16, int(math.ceil(8.0 * scale_max)))
    ks = np.arange(-kmax, kmax + 1)
    u = x[..., None] + ks
    direct = np.sum(stable_density(alpha, u, tau[..., None], c=c, method=density_method), axis=-1)
    # 截断之外的部分用 Hurwitz ζ 求和渐近展开
    coeffs = _tail_coefficients(alpha)
    tail = np.zeros_like(direct)
    previous = np.inf
    for j, a in enumerate(coeffs, start=1):
        s = j * alpha + 1.0
        term = a * (c * tau) ** j * (special.zeta(s, kmax + 1 + x) + special.zeta(s, kmax + 1 - x))
        size = float(np.max(np.abs(term)))
        if size > previous:
            break
        tail += term
        previous = size
    return direct + tail


def _theta_frequency(alpha: float, x: np.ndarray, tau: np.ndarray, c: float,
                     sigma: float, d: int) -> np.ndarray:
    kappa = char_exponent(alpha, c, sigma)
    tau_min = float(np.min(tau))
    budget = -math.log(THETA['tail'])
    mmax = int(math.ceil((budget / (kappa * tau_min)) ** (1.0 / alpha) / (2.0 * math.pi))) + 1
    if mmax > 100000:
        logger.warning(f"θ_α 频率求和项数过多 ({mmax})，截断到 100000")
        mmax = 100000
    if d == 1:
        ms = np.arange(1, mmax + 1)
        weights = np.exp(-kappa * tau[..., None] * (2.0 * np.pi * ms) ** alpha)
        return 1.0 + 2.0 * np.sum(weights * np.cos(2.0 * np.pi * ms * x[..., None]), axis=-1)
    axes = [np.arange(-mmax, mmax + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, d)
    norms = np.linalg.norm(2.0 * np.pi * grid, axis=1)
    weights = np.exp(-kappa * tau[..., None] * norms ** alpha)
    phase = np.cos(2.0 * np.pi * (x @ grid.T if x.ndim > 1 else x[..., None] * grid[:, 0]))
    return np.sum(weights * phase, axis=-1)


def theta_alpha(alpha: float, x: ArrayLike, tau: ArrayLike, c: float = 1.0,
                sigma: float = 1.0, d: int = 1, method: str = 'auto',
                density_method: str = 'quad') -> ArrayLike:
    """θ_α(x,τ) = Σ_k f_α(x+k,τ)；τ 小时空间求和，τ 大时频率求和"""
    _check_alpha(alpha)
    _check_tau(tau)
    if method not in ('auto', 'spatial', 'frequency'):
        raise ValidationError(f"未知的 θ 求和方式: {method}")
    x = np.asarray(x, dtype=float)
    if d > 1:
        if x.shape[-1] != d:
            raise ValidationError(f"x 的最后一维应为 d={d}")
        x = x - np.round(x)
        tau = np.broadcast_to(np.asarray(tau, dtype=float), x.shape[:-1])
        if alpha == 2.0:
            # 高斯情形按坐标分解
            tau_d = np.broadcast_to(tau[..., None], x.shape)
            result = theta_alpha(alpha, x, tau_d, c=c, sigma=sigma, d=1, method=method)
            return np.prod(result, axis=-1)
        result = _theta_frequency(alpha, x, tau, c, sigma, d)
        return float(result) if result.ndim == 0 else result
    x, tau = np.broadcast_arrays(x, np.asarray(tau, dtype=float))
    x = x - np.round(x)         # 周期化到 [−1/2, 1/2]
    out = np.empty(x.shape, dtype=float)
    if method == 'spatial':
        spatial = np.ones(x.shape, dtype=bool)
    elif method == 'frequency':
        spatial = np.zeros(x.shape, dtype=bool)
    else:
        spatial = tau < THETA['crossover']
    if np.any(spatial):
        out[spatial] = _theta_spatial_1d(alpha, x[spatial], tau[spatial], c, sigma, density_method)
    if np.any(~spatial):
        out[~spatial] = _theta_frequency(alpha, x[~spatial], tau[~spatial], c, sigma, 1)
    return float(out) if out.ndim == 0 else out


def periodized_stable_row(alpha: float, L: int, W: float, d: int = 1, c: float = 1.0,
                          sigma: float = 1.0) -> np.ndarray:
    """Σ_k f((z+kL)/W)，按 Poisson 对偶在频率端精确求和（含混叠）"""
    _check_alpha(alpha)
    kappa = char_exponent(alpha, c, sigma)
    tau = (W / L) ** alpha
    budget = -math.log(THETA['tail'])
    mmax = int(math.ceil((budget / (kappa * tau)) ** (1.0 / alpha) / (2.0 * math.pi))) + 1
    axes = [np.arange(-mmax, mmax + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, d)
    weights = np.exp(-kappa * tau * np.linalg.norm(2.0 * np.pi * grid, axis=1) ** alpha)
    folded = np.zeros((L,) * d)
    np.add.at(folded, tuple((grid % L).T), weights)
    row = np.real(np.fft.ifftn(folded)) * W ** d
    return row


def skellam_kernel(d: int, D: Optional[int], k, tau: float) -> float:
    """周期 Skellam 转移概率 Σ_n Π_j e^{−2τ/d} I_{|k_j+n_jD|}(2τ/d)"""
    if tau < 0:
        raise ValidationError(f"τ 不能为负: {tau}")
    if D is not None and D < 2:
        raise ValidationError(f"环面边长 D 必须 ≥ 2: {D}")
    ks = np.atleast_1d(np.asarray(k, dtype=int))
    if ks.size != d:
        raise ValidationError(f"k 的维数 {ks.size} 与 d={d} 不符")
    z = 2.0 * tau / d
    result = 1.0
    for kj in ks:
        result *= _skellam_1d(int(kj), D, z)
    return result


def _skellam_1d(k: int, D: Optional[int], z: float) -> float:
    if D is None:
        return float(special.ive(abs(k), z))
    k = k % D
    total = float(special.ive(k, z))
    shift = 1
    while True:
        added = float(special.ive(abs(k + shift * D), z) + special.ive(abs(k - shift * D), z))
        total += added
        if added <= 1e-15 * max(total, 1e-300) or shift > 10 ** 6:
            break
        shift += 1
    return total


def skellam_table(d: int, D: int, tau: float) -> np.ndarray:
    """整个块环面 T_D^d 上的 Skellam 表"""
    z = 2.0 * tau / d
    line = np.array([_skellam_1d(k, D, z) for k in range(D)])
    table = line
    for _ in range(d - 1):
        table = np.multiply.outer(table, line)
    return table


def skellam_tables(d: int, D: int, taus) -> np.ndarray:
    """对一组 τ 同时给出 Skellam 表，形状 taus.shape + (D,)*d"""
    if D < 2:
        raise ValidationError(f"环面边长 D 必须 ≥ 2: {D}")
    taus = np.asarray(taus, dtype=float)
    if np.any(taus < 0):
        raise ValidationError("τ 不能为负")
    z = 2.0 * taus[..., None] / d
    k = np.arange(D)
    line = special.ive(k, z)
    shift = 1
    while True:
        added = special.ive(np.abs(k + shift * D), z) + special.ive(np.abs(k - shift * D), z)
        line = line + added
        if np.all(added <= 1e-15 * line) or shift > 10 ** 6:
            break
        shift += 1
    table = line
    for axis in range(1, d):
        table = table[..., None] * line.reshape(line.shape[:-1] + (1,) * axis + (D,))
    return table


@lru_cache(maxsize=1)
def _painleve_solution():
    """Hastings–McLeod 解 q(s)，从 s0 处的 Airy 初值向左积分

    状态 (q, q', I, J, K)：I = ∫_s^∞ q²，J = ∫_s^∞ (x−s) q²，K = ∫_s^∞ q。
    """
    start, stop = TW_ORACLE['start'], TW_ORACLE['stop']

    def airy(s):
        return special.airy(s)[0]

    ai, aip, _, _ = special.airy(start)
    tail_i = integrate.quad(lambda s: airy(s) ** 2, start, np.inf)[0]
    tail_j = integrate.quad(lambda s: (s - start) * airy(s) ** 2, start, np.inf)[0]
    tail_k = integrate.quad(airy, start, np.inf)[0]

    def rhs(s, y):
        q, dq, i, _, _ = y
        return [dq, s * q + 2.0 * q ** 3, -q * q, -i, -q]

    solution = integrate.solve_ivp(rhs, (start, stop), [ai, aip, tail_i, tail_j, tail_k], method='DOP853',
                                   rtol=TW_ORACLE['rtol'], atol=TW_ORACLE['atol'], dense_output=True)
    if not solution.success:
        logger.error(f"Painlevé II 积分失败: {solution.message}")
        raise NumericalError(f"Painlevé II 积分失败: {solution.message}")
    return solution.sol


def published_percentiles(law: str) -> pd.DataFrame:
    """data/ 下的公开分位表，列为 x,cdf"""
    path = DATA_DIR / REFERENCE_TABLES[law]
    frame = pd.read_csv(path, comment='#')
    if np.any(np.diff(frame['x']) <= 0) or np.any(np.diff(frame['cdf']) < 0):
        raise ValidationError(f"参考表 {path.name} 不单调")
    return frame


@lru_cache(maxsize=4)
def _reference_interpolator(law: str) -> Tuple[interpolate.PchipInterpolator, float, float]:
    lo, hi = TW_ORACLE['stop'], TW_ORACLE['start']
    grid = np.linspace(lo, hi, TW_ORACLE['points'])
    _, _, _, j, k = _painleve_solution()(grid)
    log_cdf = -j if law == 'tw2' else -0.5 * (j + k)
    cdf = np.clip(np.maximum.accumulate(np.exp(log_cdf)), 0.0, 1.0)
    interp = interpolate.PchipInterpolator(grid, cdf)
    table = published_percentiles(law)
    inside = table['x'].between(lo, hi)
    deviation = float(np.max(np.abs(interp(table['x'][inside].to_numpy()) - table['cdf'][inside].to_numpy())))
    if deviation > TW_ORACLE['table_tolerance']:
        logger.warning(f"{law} 分布函数与公开分位表偏差 {deviation:.2e}")
    logger.debug(f"{law} 分布函数已由 Painlevé II 生成: {grid.size} 点, 与分位表偏差 {deviation:.2e}")
    return interp, lo, hi


def reference_cdf(law: str, x: ArrayLike, with_flag: bool = False):
    """Gumbel 精确值；TW1/TW2 由 Painlevé II 数值解生成的稠密表单调插值"""
    law = law.lower()
    x = np.asarray(x, dtype=float)
    if law == 'gumbel':
        values = np.exp(-np.exp(-x))
        flags = np.zeros(x.shape, dtype=bool)
    elif law in REFERENCE_TABLES:
        interp, lo, hi = _reference_interpolator(law)
        flags = (x < lo) | (x > hi)
        values = np.clip(interp(np.clip(x, lo, hi)), 0.0, 1.0)
        if np.any(flags):
            logger.warning(f"{law} 参考表范围 [{lo}, {hi}] 之外的 {int(np.sum(flags))} 个点取端点值")
    else:
        raise ValidationError(f"未知参考分布: {law}")
    if values.ndim == 0:
        values, flags = float(values), bool(flags)
    return (values, flags) if with_flag else values


def reference_moments(law: str) -> Tuple[float, float]:
    try:
        return REFERENCE_MOMENTS[law.lower()]
    except KeyError:
        raise ValidationError(f"未知参考分布: {law}") from None


def standardized_reference_cdf(law: str) -> Callable[[np.ndarray], np.ndarray]:
    """均值0方差1标准化后的参考分布函数"""
    mean, sd = reference_moments(law)
    return lambda z: reference_cdf(law, mean + sd * np.asarray(z, dtype=float))


def sinc_test_function(m: int, t: float, x: ArrayLike) -> ArrayLike:
    """(sin(t√−x)/(t√−x))^m，x>0 时解析延拓为 sinh"""
    if m < 2 or m % 2:
        raise ValidationError(f"m 必须为不小于2的偶数: {m}")
    if m not in SINC_ORDERS:
        logger.warning(f"m={m} 不在常用集合 {SINC_ORDERS} 内")
    if t <= 0:
        raise ValidationError(f"t 必须为正: {t}")
    z = t * t * np.asarray(x, dtype=float)
    base = np.empty_like(z)
    small = np.abs(z) < 1e-3
    # Σ z^j/(2j+1)! 同时覆盖两侧
    zs = z[small]
    base[small] = 1.0 + zs / 6.0 + zs ** 2 / 120.0 + zs ** 3 / 5040.0 + zs ** 4 / 362880.0
    neg = (~small) & (z < 0)
    s = np.sqrt(-z[neg])
    base[neg] = np.sin(s) / s
    pos = (~small) & (z > 0)
    s = np.sqrt(z[pos])
    base[pos] = np.sinh(s) / s
    result = base ** m
    return float(result) if result.ndim == 0 else result


def limit_coeff(m: int, xi):
    """线性化极限剖面 (𝒫_m(ξ), 𝒬_m(ξ))，𝒬 = ξ𝒫"""
    if m < 2:
        raise ValidationError(f"m 必须 ≥ 2: {m}")
    if isinstance(xi, np.ndarray):
        if np.any(xi < 0):
            raise ValidationError("ξ 必须非负")
        total = np.zeros_like(xi, dtype=float)
        for j in range(m + 1):
            base = m - 2 * j - xi
            part = np.where(base > 0, np.abs(base) ** (m - 2), 0.0)
            total += (-1) ** j * math.comb(m, j) * part
        p = total / (2 ** (m - 1) * math.factorial(m - 2))
        return p, xi * p
    if xi < 0:
        raise ValidationError(f"ξ 必须非负: {xi}")
    exact = isinstance(xi, Rational)
    total = 0
    for j in range(m + 1):
        base = m - 2 * j - xi
        if base > 0:
            total += (-1) ** j * math.comb(m, j) * base ** (m - 2)
    norm = 2 ** (m - 1) * math.factorial(m - 2)
    p = Fraction(total, norm) if exact else total / norm
    return p, xi * p
