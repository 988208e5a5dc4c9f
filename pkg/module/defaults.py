# 默认参数表

# 比较定理各假设的有限N判定阈值
HYPOTHESIS_THRESHOLDS = {
    'l1_ratio': 0.1,        # 𝓔_n / n
    'linf_ratio': 0.1,      # Δ_n / b_n
    'mixing': 2.0,          # n² b_n
    'non_gaussian': 0.1,    # θ n² max σ²
}

# 可行性上限
FEASIBILITY = {
    'dense_states': 4096,           # n_step_power 的状态数上限
    'diagram_terms': 10 ** 9,       # N^{|V|}·Π n_j
    'shell_cap': 4096,              # 周期化求和的壳层上限
    'lattice_edges': 6,             # 格点计数允许的最大边数
}

# θ_α 空间/频率求和的切换点
THETA = {
    'crossover': 0.5,
    'tail': 1e-14,
    'c_alpha': 1.0,
    'sigma': 1.0,
}

PROFILE = {
    'wrap_tol': 1e-15,
    'clamp': 1e-12,
    'row_tol': 1e-12,
}

# 参考分布的均值和标准差，用于标准化
REFERENCE_MOMENTS = {
    'gumbel': (0.5772156649015329, 1.2825498301618641),
    'tw1': (-1.2065335745820, 1.2679830),
    'tw2': (-1.7710868074110, 0.9017731),
}

REFERENCE_TABLES = {
    'tw1': 'tw1.csv',
    'tw2': 'tw2.csv',
}

# TW 分布函数由 Painlevé II 在 [stop, start] 上数值积分得到
TW_ORACLE = {
    'start': 8.0,
    'stop': -8.0,
    'points': 3201,
    'rtol': 1e-12,
    'atol': 1e-14,
    'table_tolerance': 5e-3,
}

SINC_ORDERS = (4, 8, 10)

ENTRY_LAWS = ('gaussian', 'rademacher', 'uniform')

# 临界带宽附近 γ_N 的判定区间
REGIME_BAND = (0.5, 2.0)

EXPERIMENT = {
    'budget': 1e14,         # N³·trials·grid 的总成本上限
    'trials': 1000,
    'threads': 1,
    'mc_samples': 100000,
    'mc_tolerance': 0.05,
}

EXIT_CODES = {
    'ok': 0,
    'validation': 2,
    'budget': 3,
    'failure': 1,
}
