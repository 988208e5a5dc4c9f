import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from module.chain_module import PROFILE_KINDS, ProfileSpec, build_variance_profile, kernel_frame
from module.defaults import EXIT_CODES, REFERENCE_MOMENTS, SINC_ORDERS
from module.ensemble_module import canonical_digest
from module.errors import ArtifactError, BandLabError, BudgetError, FeasibilityError, ValidationError
from module.experiment_module import (
    KINDS, PLOT_KINDS, config_from_dict, emit_plot_data, load_config, override_config, run_experiment, write_csv,
)
from module.special_module import (
    limit_coeff, reference_cdf, sinc_test_function, skellam_table, stable_density, theta_alpha,
)

logger = logging.getLogger(__name__)

SPECIAL_FUNCTIONS = ('theta', 'skellam', 'stable', 'reference_cdf', 'sinc', 'limit_coeff')
COMPARE_PROFILES = ('Flat', 'AlphaStable', 'PowerLawTail', 'TruncatedGaussian')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='band_lab', description='非齐次随机矩阵数值实验室')
    parser.add_argument('--config', help='JSON 实验配置文件')
    parser.add_argument('--seed', type=int, help='主种子，覆盖配置')
    parser.add_argument('--out', help='输出目录，覆盖配置')
    parser.add_argument('--threads', type=int, help='线程数，覆盖配置')
    parser.add_argument('--verbose', action='store_true', help='输出调试日志')
    commands = parser.add_subparsers(dest='command', required=True)

    profile = commands.add_parser('profile', help='导出方差剖面转移核')
    profile.add_argument('--kind', default='AlphaStable', choices=PROFILE_KINDS)
    profile.add_argument('--L', type=int, default=32)
    profile.add_argument('--W', type=int, default=4)
    profile.add_argument('--d', type=int, default=1)
    profile.add_argument('--alpha', type=float, default=2.0)
    profile.add_argument('--n', type=int, default=1, help='导出 Pⁿ')

    special = commands.add_parser('special', help='在网格上计算特殊函数')
    special.add_argument('--function', default='theta', choices=SPECIAL_FUNCTIONS)
    special.add_argument('--alpha', type=float, default=2.0)
    special.add_argument('--tau', type=float, default=0.5)
    special.add_argument('--points', type=int, default=64)
    special.add_argument('--D', type=int, default=8, help='Skellam 核的环面边长')
    special.add_argument('--law', default='tw1', choices=sorted(REFERENCE_MOMENTS), help='参考分布')
    special.add_argument('--m', type=int, default=SINC_ORDERS[0], help='sinc 幂次或线性化阶数')
    special.add_argument('--t', type=float, default=1.0, help='sinc 尺度')

    for kind in KINDS:
        sub = commands.add_parser(kind, help=f'按配置运行 {kind} 实验')
        if kind == 'compare':
            sub.add_argument('--chain-a', choices=COMPARE_PROFILES, help='第一条链的剖面，覆盖配置')
            sub.add_argument('--chain-b', choices=COMPARE_PROFILES, help='第二条链的剖面，覆盖配置')
            sub.add_argument('--n', type=int, help='比较步数，覆盖配置')
            sub.add_argument('--L', type=int, help='环面边长，覆盖配置')
            sub.add_argument('--W', type=int, help='带宽，覆盖配置')

    emit = commands.add_parser('emit', help='从产物导出绘图数据')
    emit.add_argument('--digest', required=True)
    emit.add_argument('--kind', required=True, choices=PLOT_KINDS)
    return parser


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def run_profile(args) -> Path:
    params = {'alpha': args.alpha} if args.kind == 'AlphaStable' else {}
    spec = ProfileSpec(args.kind, params, d=args.d, L=args.L, W=args.W)
    frame = kernel_frame(build_variance_profile(spec), args.n)
    digest = canonical_digest({'profile': spec.to_json(), 'n': args.n})
    return write_csv(frame, Path(args.out or 'results') / f"profile-{digest}.csv", digest, _seed(args))


def _special_frame(args) -> pd.DataFrame:
    if args.function == 'theta':
        x = np.arange(args.points) / args.points
        return pd.DataFrame({'x': x, 'theta': theta_alpha(args.alpha, x, args.tau)})
    if args.function == 'skellam':
        table = skellam_table(1, args.D, args.tau)
        return pd.DataFrame({'k': np.arange(table.size), 'probability': table.ravel()})
    if args.function == 'stable':
        x = np.linspace(-10.0, 10.0, args.points)
        return pd.DataFrame({'x': x, 'density': stable_density(args.alpha, x, args.tau)})
    if args.function == 'reference_cdf':
        x = np.linspace(-8.0, 8.0, args.points)
        return pd.DataFrame({'x': x, 'cdf': reference_cdf(args.law, x)})
    if args.function == 'sinc':
        x = np.linspace(-10.0, 1.0, args.points)
        return pd.DataFrame({'x': x, 'value': sinc_test_function(args.m, args.t, x)})
    xi = np.linspace(0.0, float(args.m), args.points)
    profile, weighted = limit_coeff(args.m, xi)
    return pd.DataFrame({'xi': xi, 'P': profile, 'Q': weighted})


def run_special(args) -> Path:
    if args.points < 2:
        raise ValidationError(f"网格点数必须 ≥ 2: {args.points}")
    frame = _special_frame(args)
    digest = canonical_digest({'function': args.function, 'alpha': args.alpha, 'tau': args.tau,
                               'points': args.points, 'D': args.D, 'law': args.law, 'm': args.m, 't': args.t})
    return write_csv(frame, Path(args.out or 'results') / f"special-{digest}.csv", digest, _seed(args))


def _param_overrides(args, params: dict) -> dict:
    """compare 子命令的链参数覆盖；换剖面种类时清空其附加参数"""
    if args.command != 'compare':
        return {}
    overrides = {key: getattr(args, key) for key in ('n', 'L', 'W') if getattr(args, key) is not None}
    for side in ('a', 'b'):
        kind = getattr(args, f'chain_{side}')
        if kind is not None and kind != params.get(f'profile_{side}'):
            overrides[f'profile_{side}'] = kind
            overrides[f'params_{side}'] = {}
    return overrides


def run_configured(args):
    if args.config:
        config = load_config(args.config)
        if config.kind != args.command:
            raise ValidationError(f"配置种类 {config.kind} 与子命令 {args.command} 不符")
    else:
        config = config_from_dict({'kind': args.command, 'seed': args.seed})
    overrides = _param_overrides(args, config.params)
    if overrides:
        data = config.to_dict()
        data['params'].update(overrides)
        config = config_from_dict(data)
    config = override_config(config, seed=args.seed, out=args.out, threads=args.threads)
    return run_experiment(config)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        if args.command == 'profile':
            paths = [run_profile(args)]
        elif args.command == 'special':
            paths = [run_special(args)]
        elif args.command == 'emit':
            paths = [emit_plot_data(args.digest, args.kind, args.out or 'results')]
        else:
            paths = run_configured(args)
    except (BudgetError, FeasibilityError) as e:
        logger.error(f"超出预算或可行性上限: {e}")
        return EXIT_CODES['budget']
    except (ValidationError, ArtifactError) as e:
        logger.error(f"参数错误: {e}")
        return EXIT_CODES['validation']
    except BandLabError as e:
        logger.error(f"运行失败: {e}")
        return EXIT_CODES['failure']
    for path in paths:
        logger.info(f"输出: {path}")
    return EXIT_CODES['ok']


if __name__ == "__main__":
    sys.exit(main())
