import copy
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from module.chain_module import (
    ProfileSpec, build_variance_profile, hankel_step, wegner_block_kernel, wegner_reference, wegner_regime,
)
from module.comparison_module import avg_upper_bound_b, comparison_report, lclt_residual
from module.defaults import EXPERIMENT, HYPOTHESIS_THRESHOLDS
from module.diagram_module import (
    SpikeOperator, diagram_function, diagram_upper_bound, limiting_diagram_function, load_catalog,
    load_diagram, parity_constant,
)
from module.ensemble_module import (
    RECORD_COLUMNS, EdgeSampleSet, EnsembleSpec, canonical_digest, ks_distance, run_digest, simulate_edge,
)
from module.errors import ArtifactError, BudgetError, ConfigError, ValidationError

logger = logging.getLogger(__name__)

KINDS = ('edge-sim', 'compare', 'lclt', 'diagram', 'wegner', 'hankel', 'sweep')
PLOT_KINDS = ('histogram', 'cdf', 'ipr-profile', 'phase-table')
SUMMARY_COLUMNS = ['digest', 'W', 'spike', 'regime', 's_N', 'gamma_N', 'ks_gumbel', 'ks_tw1',
                   'mean_ipr', 'mean_lambda_max', 'preferred_law']


class Param(NamedTuple):
    type: type
    default: Any
    item: Optional[type] = None


# 每种实验的参数块：字段 -> (类型, 默认值, 列表元素类型)
PARAM_SCHEMAS = {
    'edge-sim': {
        'profile': Param(str, 'AlphaStable'),
        'N': Param(int, 512),
        'W': Param(int, 4),
        'alpha': Param(float, 2.0),
        'beta': Param(int, 1),
        'law': Param(str, 'gaussian'),
        'spike': Param(float, None),
    },
    'compare': {
        'profile_a': Param(str, 'TruncatedGaussian'),
        'params_a': Param(dict, {}),
        'profile_b': Param(str, 'PowerLawTail'),
        'params_b': Param(dict, {'T': 4.0}),
        'L': Param(int, 1024),
        'W': Param(int, 256),
        'n': Param(int, 8),
        'theta': Param(float, 1.0),
    },
    'lclt': {
        'profile': Param(str, 'AlphaStable'),
        'alpha': Param(float, 2.0),
        'd': Param(int, 1),
        'L': Param(int, 256),
        'W': Param(int, 16),
        'n': Param(int, 64),
    },
    'diagram': {
        'name': Param(str, 'self_loop'),
        'profile': Param(str, 'AlphaStable'),
        'alpha': Param(float, 2.0),
        'L': Param(int, 16),
        'W': Param(int, 4),
        'orders': Param(list, [4], int),
        'regime': Param(str, None),
        't': Param(list, None, float),
        'gamma': Param(float, None),
        'mu': Param(float, None),
        'D': Param(int, None),
        'samples': Param(int, EXPERIMENT['mc_samples']),
    },
    'wegner': {
        'D': Param(int, 8),
        'd': Param(int, 1),
        'lam': Param(float, 0.02),
        'n': Param(int, 50),
        'M': Param(int, 1),
    },
    'hankel': {
        'alpha': Param(float, 2.0),
        'L': Param(int, 64),
        'W': Param(int, 4),
        'x0': Param(int, 0),
        'x': Param(int, 0),
        'n': Param(int, 16),
    },
    'sweep': {
        'profile': Param(str, 'AlphaStable'),
        'N': Param(int, 512),
        'W': Param(list, [4, 256], int),
        'spike': Param(list, [], float),
        'alpha': Param(float, 2.0),
        'beta': Param(int, 1),
        'law': Param(str, 'gaussian'),
    },
}

THRESHOLD_SCHEMA = {key: Param(float, None) for key in HYPOTHESIS_THRESHOLDS}

TOP_LEVEL_KEYS = ('kind', 'seed', 'out', 'trials', 'threads', 'budget', 'params', 'thresholds')

_TYPE_NAMES = {int: '整数', float: '数值', str: '字符串', list: '列表', dict: '对象'}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    out: str = 'results'
    trials: int = EXPERIMENT['trials']
    threads: int = EXPERIMENT['threads']
    budget: float = EXPERIMENT['budget']
    params: Dict[str, Any] = field(default_factory=dict)
    thresholds: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'seed': self.seed,
            'out': self.out,
            'trials': self.trials,
            'threads': self.threads,
            'budget': self.budget,
            'params': copy.deepcopy(self.params),
            'thresholds': dict(self.thresholds),
        }

    def identity(self) -> dict:
        """决定结果的字段；输出目录、线程数和预算不影响产物"""
        return {
            'kind': self.kind,
            'seed': self.seed,
            'trials': self.trials,
            'params': copy.deepcopy(self.params),
            'thresholds': dict(self.thresholds),
        }

    @property
    def digest(self) -> str:
        return canonical_digest(self.identity())


def _coerce(value, expected: type, path: str):
    if isinstance(value, bool):
        raise ConfigError(path, f"应为{_TYPE_NAMES[expected]}，得到布尔值")
    if expected is float and isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, expected):
        raise ConfigError(path, f"应为{_TYPE_NAMES[expected]}，得到 {type(value).__name__}")
    return value


def _parse_block(data: dict, schema: Dict[str, Param], path: str) -> dict:
    unknown = sorted(set(data) - set(schema))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "未知字段")
    block = {}
    for key, param in schema.items():
        where = f"{path}.{key}"
        value = data.get(key)
        if value is None:
            block[key] = copy.deepcopy(param.default)
            continue
        value = _coerce(value, param.type, where)
        if param.item is not None:
            value = [_coerce(item, param.item, f"{where}[{i}]") for i, item in enumerate(value)]
        block[key] = value
    return block


def _positive(value, path: str, minimum=1):
    if value < minimum:
        raise ConfigError(path, f"必须 ≥ {minimum}，得到 {value}")
    return value


def config_from_dict(data) -> ExperimentConfig:
    """严格解析：拒绝未知字段，缺省值补齐"""
    if not isinstance(data, dict):
        raise ConfigError('<document>', "顶层必须是 JSON 对象")
    unknown = sorted(set(data) - set(TOP_LEVEL_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "未知字段")
    if data.get('seed') is None:
        raise ConfigError('seed', "缺少主种子")
    if data.get('kind') is None:
        raise ConfigError('kind', "缺少实验种类")
    kind = _coerce(data['kind'], str, 'kind')
    if kind not in KINDS:
        raise ConfigError('kind', f"未知实验种类 {kind}，可选 {', '.join(KINDS)}")
    seed = _positive(_coerce(data['seed'], int, 'seed'), 'seed', 0)
    out = _coerce(data['out'], str, 'out') if data.get('out') is not None else 'results'
    trials = _positive(_coerce(data.get('trials', EXPERIMENT['trials']), int, 'trials'), 'trials')
    threads = _positive(_coerce(data.get('threads', EXPERIMENT['threads']), int, 'threads'), 'threads')
    budget = _coerce(data.get('budget', EXPERIMENT['budget']), float, 'budget')
    if not budget > 0:
        raise ConfigError('budget', f"必须为正，得到 {budget}")
    raw = data.get('params')
    params = _parse_block({} if raw is None else _coerce(raw, dict, 'params'), PARAM_SCHEMAS[kind], 'params')
    raw = data.get('thresholds')
    thresholds = _parse_block({} if raw is None else _coerce(raw, dict, 'thresholds'), THRESHOLD_SCHEMA,
                              'thresholds')
    thresholds = {key: value for key, value in thresholds.items() if value is not None}
    return ExperimentConfig(kind, seed, out, trials, threads, budget, params, thresholds)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError('<document>', f"不是合法的 JSON: {e}") from e
    return config_from_dict(data)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        logger.error(f"读取配置文件失败: {e}")
        raise ConfigError('<document>', f"无法读取 {path}") from e
    return parse_config(text)


def serialize_config(config: ExperimentConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)


def override_config(config: ExperimentConfig, seed: Optional[int] = None, out: Optional[str] = None,
                    threads: Optional[int] = None) -> ExperimentConfig:
    """命令行全局参数覆盖配置字段"""
    changes = {}
    if seed is not None:
        changes['seed'] = _positive(seed, 'seed', 0)
    if out is not None:
        changes['out'] = str(out)
    if threads is not None:
        changes['threads'] = _positive(threads, 'threads')
    return replace(config, **changes)


def sweep_grid(config: ExperimentConfig) -> List[Tuple[int, Optional[float]]]:
    params = config.params
    spikes = [None if a == 0 else a for a in params['spike']] or [None]
    return [(int(W), a) for W in params['W'] for a in spikes]


def estimate_cost(config: ExperimentConfig) -> float:
    """与时钟无关的成本估计：特征分解按 N³ 计"""
    p = config.params
    if config.kind == 'edge-sim':
        return float(p['N']) ** 3 * config.trials
    if config.kind == 'sweep':
        return float(p['N']) ** 3 * config.trials * len(sweep_grid(config))
    if config.kind == 'compare':
        return float(p['L']) ** 2 * p['n']
    if config.kind == 'diagram':
        return float(p['L']) ** 3 * max(p['orders'] or [1])
    if config.kind == 'lclt':
        return float(p['L']) ** p['d'] * p['n']
    if config.kind == 'wegner':
        return float(p['D']) ** p['d'] * p['n']
    return float(p['L']) * p['n']


def check_budget(config: ExperimentConfig) -> float:
    cost = estimate_cost(config)
    if cost > config.budget:
        raise BudgetError(cost, config.budget)
    return cost


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + '.tmp')
    with open(tmp_path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    os.replace(tmp_path, path)


def write_csv(frame: pd.DataFrame, path, digest: str, seed: int) -> Path:
    """CSV 开头两行注释记录摘要和主种子"""
    path = Path(path)
    header = f"# digest={digest}\n# seed={seed}\n"
    _atomic_write(path, header + frame.to_csv(index=False, float_format='%.17g', lineterminator='\n'))
    logger.info(f"已写出 {path}")
    return path


def write_sidecar(path, payload: dict, digest: str, seed: int) -> Path:
    path = Path(path)
    body = dict(payload)
    body['digest'] = digest
    body['seed'] = seed
    _atomic_write(path, json.dumps(body, sort_keys=True, indent=2, ensure_ascii=False) + '\n')
    return path


def read_header(path) -> Dict[str, str]:
    fields = {}
    with open(path, encoding='utf-8') as f:
        for line in f:
            if not line.startswith('# '):
                break
            key, _, value = line[2:].strip().partition('=')
            fields[key] = value
    return fields


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


def sample_set_paths(digest: str, out_dir) -> Tuple[Path, Path]:
    base = Path(out_dir) / f"edge-{digest}"
    return base.with_suffix('.csv'), base.with_suffix('.json')


def save_sample_set(samples: EdgeSampleSet, out_dir) -> List[Path]:
    csv_path, json_path = sample_set_paths(samples.digest, out_dir)
    seed = int(samples.metadata['seed'])
    write_csv(samples.records, csv_path, samples.digest, seed)
    profile = None if samples.profile_sq is None else np.asarray(samples.profile_sq).tolist()
    write_sidecar(json_path, {'metadata': samples.metadata, 'profile_sq': profile}, samples.digest, seed)
    return [csv_path, json_path]


def load_sample_set(digest: str, out_dir) -> EdgeSampleSet:
    csv_path, json_path = sample_set_paths(digest, out_dir)
    if not csv_path.exists() or not json_path.exists():
        raise ArtifactError(f"找不到摘要为 {digest} 的样本集 ({csv_path})")
    records = read_csv(csv_path)
    with open(json_path, encoding='utf-8') as f:
        sidecar = json.load(f)
    profile = sidecar.get('profile_sq')
    return EdgeSampleSet(records[RECORD_COLUMNS], sidecar['metadata'],
                         None if profile is None else np.asarray(profile, dtype=float))


def resolve_artifact(digest: str, out_dir, prefix: str) -> Path:
    """按摘要（或唯一前缀）查找 edge/sweep 产物"""
    if not digest:
        raise ArtifactError("产物摘要为空")
    matches = sorted(Path(out_dir).glob(f"{prefix}-{digest}*.csv"))
    if len(matches) != 1:
        reason = "不存在" if not matches else f"不唯一 ({len(matches)} 个匹配)"
        raise ArtifactError(f"摘要 {digest} 的 {prefix} 产物{reason}，目录 {out_dir}")
    return matches[0]


def _profile_spec(kind: str, alpha: float, L: int, W: int, extra: Optional[dict] = None, d: int = 1) -> ProfileSpec:
    params = dict(extra or {})
    if kind == 'AlphaStable':
        params.setdefault('alpha', alpha)
    if kind == 'Flat':
        W = 1
    return ProfileSpec(kind, params, d=d, L=L, W=W)


def sweep_summary(sample_sets: List[EdgeSampleSet], grid: List[Tuple[int, Optional[float]]],
                  beta: int = 1) -> pd.DataFrame:
    """每个网格点一行；KS 距离在各自标准化后计算"""
    tw = 'tw1' if beta == 1 else 'tw2'
    rows = []
    for samples, (W, spike) in zip(sample_sets, grid):
        ks_gumbel = ks_distance(samples.rescaled, 'gumbel')
        ks_tw = ks_distance(samples.rescaled, tw)
        rows.append({
            'digest': samples.digest,
            'W': W,
            'spike': 0.0 if spike is None else float(spike),
            'regime': samples.metadata['regime'],
            's_N': float(samples.metadata['s_N']),
            'gamma_N': float(samples.metadata['gamma_N']),
            'ks_gumbel': ks_gumbel,
            'ks_tw1': ks_tw,
            'mean_ipr': float(samples.records['ipr'].mean()),
            'mean_lambda_max': float(samples.lambda_max.mean()),
            'preferred_law': 'gumbel' if ks_gumbel < ks_tw else tw,
        })
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


@dataclass
class SweepResult:
    sample_sets: List[EdgeSampleSet]
    summary: pd.DataFrame
    paths: List[Path]
    computed: int


class ExperimentHandler:
    """按配置运行一种实验，产物原子地写入输出目录"""

    def __init__(self, config: ExperimentConfig):
        self.logger = logging.getLogger(__name__)
        self.config = config
        self.out = Path(config.out)
        self.runners = {
            'edge-sim': self.run_edge_sim,
            'compare': self.run_compare,
            'lclt': self.run_lclt,
            'diagram': self.run_diagram,
            'wegner': self.run_wegner,
            'hankel': self.run_hankel,
            'sweep': lambda: self.sweep().paths,
        }

    def run(self) -> List[Path]:
        cost = check_budget(self.config)
        self.logger.info(f"开始 {self.config.kind} 实验: 摘要 {self.config.digest[:12]}, 估计成本 {cost:.3g}")
        self.out.mkdir(parents=True, exist_ok=True)
        paths = self.runners[self.config.kind]()
        self.logger.info(f"{self.config.kind} 实验完成，共 {len(paths)} 个文件")
        return paths

    def _stem(self) -> Path:
        return self.out / f"{self.config.kind}-{self.config.digest}"

    def _write(self, frame: pd.DataFrame, payload: dict) -> List[Path]:
        stem = self._stem()
        csv_path = write_csv(frame, stem.with_suffix('.csv'), self.config.digest, self.config.seed)
        json_path = write_sidecar(stem.with_suffix('.json'), payload, self.config.digest, self.config.seed)
        return [csv_path, json_path]

    def _ensemble(self, N: int, W: int, spike: Optional[float] = None) -> EnsembleSpec:
        p = self.config.params
        profile = _profile_spec(p['profile'], p['alpha'], N, W)
        spikes = None if spike is None else SpikeOperator(strengths=(float(spike),), positions=(N // 2,))
        return EnsembleSpec(profile, beta=p['beta'], law=p['law'], spike=spikes, seed=self.config.seed)

    def _sample_set(self, spec: EnsembleSpec, threads: int) -> Tuple[EdgeSampleSet, bool]:
        digest = run_digest(spec, self.config.trials)
        csv_path, json_path = sample_set_paths(digest, self.out)
        if csv_path.exists() and json_path.exists():
            self.logger.info(f"跳过已完成的网格点 {digest[:12]}")
            return load_sample_set(digest, self.out), False
        samples = simulate_edge(spec, self.config.trials, threads)
        save_sample_set(samples, self.out)
        return samples, True

    def run_edge_sim(self) -> List[Path]:
        p = self.config.params
        spike = p['spike'] if p['spike'] else None
        samples, _ = self._sample_set(self._ensemble(p['N'], p['W'], spike), self.config.threads)
        return list(sample_set_paths(samples.digest, self.out))

    def sweep(self) -> SweepResult:
        check_budget(self.config)
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.config.params
        grid = sweep_grid(self.config)
        workers = max(1, min(self.config.threads, len(grid)))
        inner = max(1, self.config.threads // workers)
        specs = [self._ensemble(p['N'], W, spike) for W, spike in grid]
        self.logger.info(f"扫描 {len(grid)} 个网格点, {workers} 个并行点, 每点 {inner} 线程")
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda spec: self._sample_set(spec, inner), specs))
        sample_sets = [samples for samples, _ in results]
        computed = sum(done for _, done in results)
        summary = sweep_summary(sample_sets, grid, p['beta'])
        stem = self._stem()
        summary_path = write_csv(summary, stem.with_suffix('.csv'), self.config.digest, self.config.seed)
        payload = {'config': self.config.identity(), 'points': [s.digest for s in sample_sets]}
        sidecar_path = write_sidecar(stem.with_suffix('.json'), payload, self.config.digest, self.config.seed)
        paths = [path for s in sample_sets for path in sample_set_paths(s.digest, self.out)]
        self.logger.info(f"扫描完成: 新计算 {computed} 个, 复用 {len(grid) - computed} 个")
        return SweepResult(sample_sets, summary, paths + [summary_path, sidecar_path], computed)

    def run_compare(self) -> List[Path]:
        p = self.config.params
        chain_a = build_variance_profile(_profile_spec(p['profile_a'], 2.0, p['L'], p['W'], p['params_a']))
        chain_b = build_variance_profile(_profile_spec(p['profile_b'], 2.0, p['L'], p['W'], p['params_b']))
        report = comparison_report(chain_a, chain_b, p['n'], theta=p['theta'], thresholds=self.config.thresholds)
        return self._write(report.to_frame(), report.to_json())

    def run_lclt(self) -> List[Path]:
        p = self.config.params
        chain = build_variance_profile(_profile_spec(p['profile'], p['alpha'], p['L'], p['W'], d=p['d']))
        result = lclt_residual(chain, p['n'])
        row = {'n': result.n, 'alpha': result.alpha, 'sigma': result.sigma,
               'residual': result.residual, 'predicted_bound': result.predicted_bound}
        return self._write(pd.DataFrame([row]), row)

    def run_diagram(self) -> List[Path]:
        p = self.config.params
        diagram = load_diagram(p['name']) if p['name'].endswith('.json') else load_catalog(p['name'])
        chain = build_variance_profile(_profile_spec(p['profile'], p['alpha'], p['L'], p['W']))
        orders = p['orders']
        n = max(max(orders, default=1), 1)
        b_n = float(avg_upper_bound_b(chain, chain, n)[-1])
        row = {
            'name': diagram.name,
            'orders': ' '.join(str(order) for order in orders),
            'F': diagram_function(diagram, chain, orders),
            'G': diagram_upper_bound(diagram, b_n, n, chain.N),
            'parity_constant': parity_constant(diagram),
        }
        if p['regime'] is not None:
            t = p['t'] if p['t'] is not None else [1.0] * diagram.s
            limit = limiting_diagram_function(diagram, p['regime'], t, alpha=p['alpha'], gamma=p['gamma'],
                                              mu=p['mu'], D=p['D'],
                                              samples=p['samples'], seed=self.config.seed)
            row.update(limit_estimate=limit.estimate, limit_stderr=limit.stderr,
                       resample_recommended=bool(limit.resample_recommended))
        return self._write(pd.DataFrame([row]), row)

    def run_wegner(self) -> List[Path]:
        p = self.config.params
        kernel = wegner_block_kernel(p['D'], p['d'], p['lam'], p['n'])
        reference = wegner_reference(p['D'], p['d'], p['lam'], p['n'])
        frame = pd.DataFrame({'site': np.arange(kernel.size), 'kernel': kernel.ravel(),
                              'reference': reference.ravel()})
        frame['abs_diff'] = (frame['kernel'] - frame['reference']).abs()
        payload = {'regime': wegner_regime(p['n'], p['lam'], p['M']), 'sup_diff': float(frame['abs_diff'].max())}
        return self._write(frame, payload)

    def run_hankel(self) -> List[Path]:
        p = self.config.params
        base = _profile_spec('AlphaStable', p['alpha'], p['L'], p['W'])
        chain = build_variance_profile(ProfileSpec('Hankel', {'base': base, 'x0': p['x0']}, L=p['L'], W=p['W']))
        distribution, center = hankel_step(chain, p['n'], p['x'])
        frame = pd.DataFrame({'site': np.arange(distribution.size), 'probability': distribution})
        payload = {'center': int(center), 'mode': int(np.argmax(distribution))}
        return self._write(frame, payload)


def run_experiment(config: ExperimentConfig) -> List[Path]:
    return ExperimentHandler(config).run()


def run_sweep(config: ExperimentConfig) -> SweepResult:
    if config.kind != 'sweep':
        raise ConfigError('kind', f"run_sweep 需要 sweep 配置，得到 {config.kind}")
    return ExperimentHandler(config).sweep()


def _histogram_table(values: np.ndarray) -> pd.DataFrame:
    # Freedman–Diaconis 分箱只依赖数据本身
    values = np.sort(values)
    edges = np.histogram_bin_edges(values, bins='fd')
    counts, _ = np.histogram(values, bins=edges)
    return pd.DataFrame({'bin_left': edges[:-1], 'bin_right': edges[1:], 'count': counts,
                         'density': counts / (counts.sum() * np.diff(edges))})


def _phase_table(summary: pd.DataFrame) -> pd.DataFrame:
    table = summary.groupby(['regime', 'spike'])['preferred_law'].first().unstack('spike').reset_index()
    table.columns = ['regime'] + [f"spike={value:g}" for value in table.columns[1:]]
    return table


def emit_plot_data(digest: str, kind: str, out_dir) -> Path:
    """从已有产物导出绘图用 CSV"""
    if kind not in PLOT_KINDS:
        raise ValidationError(f"未知导出种类: {kind}，可选 {', '.join(PLOT_KINDS)}")
    out_dir = Path(out_dir)
    if kind == 'phase-table':
        source = resolve_artifact(digest, out_dir, 'sweep')
        header = read_header(source)
        table = _phase_table(read_csv(source))
    else:
        source = resolve_artifact(digest, out_dir, 'edge')
        header = read_header(source)
        samples = load_sample_set(header['digest'], out_dir)
        if kind == 'histogram':
            table = _histogram_table(samples.rescaled)
        elif kind == 'cdf':
            x = np.sort(samples.rescaled)
            table = pd.DataFrame({'x': x, 'empirical_cdf': np.arange(1, x.size + 1) / x.size})
        else:
            if samples.profile_sq is None:
                raise ArtifactError(f"样本集 {header['digest'][:12]} 没有保存本征向量剖面")
            table = pd.DataFrame({'coordinate': np.arange(samples.profile_sq.size),
                                  'amplitude_sq': samples.profile_sq})
    return write_csv(table, out_dir / f"{kind}-{header['digest']}.csv", header['digest'], int(header['seed']))
