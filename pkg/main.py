#!/usr/bin/env python3
"""
可移动天线位置优化 - 命令行入口

    ma-opt run --config configs/capacity.env [--out DIR] [--trials N] [--seed S]
               [--schemes ma,fpa,as] [--threads T] [--format csv|jsonl] [--no-wall-time]
    ma-opt project-demo [--instances N] [--seed S] [--policy exhaustive|minimal]
    ma-opt validate --config configs/rzf.env

诊断信息输出到标准错误，结果只写入文件。
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from config import Config
from services.baseline_service import candidate_grid, fpa_layout
from services.experiment_service import emit_results, parse_config, run_sweep, with_overrides
from services.geometry_service import (
    CANDIDATE_POLICIES,
    project_outside_disks,
    grid_search_projection,
    random_projection_instance,
)

# 投影与网格对照之间允许的目标值差
ORACLE_TOL = 3e-3


def say(message: str):
    print(message, file=sys.stderr)


def setup_logging():
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def load_config(args):
    """读取配置文件并应用命令行覆盖项"""
    config = parse_config(args.config)
    schemes = tuple(s.strip() for s in args.schemes.split(",") if s.strip()) if args.schemes else None
    return with_overrides(config, num_trials=args.trials, base_seed=args.seed, schemes=schemes)


def check_feasibility(config):
    """检查每个区域尺寸下初始布局与对比方案的网格都放得下"""
    for a_over_lambda in config.a_over_lambda:
        constraints = config.constraints(a_over_lambda)
        constraints.check_capacity(config.num_antennas)
        if "fpa" in config.schemes or config.ma_init == "fpa" and "ma" in config.schemes:
            fpa_layout(config.num_antennas, constraints)
        if "as" in config.schemes:
            grid = candidate_grid(constraints)
            if config.num_antennas > len(grid):
                raise ValueError(f"AS 候选天线只有 {len(grid)} 个，少于 M={config.num_antennas}")


def command_run(args) -> int:
    config = load_config(args)
    check_feasibility(config)
    fmt = args.format or Config.RESULT_FORMAT
    threads = args.threads or Config.THREADS
    out_dir = Path(args.out or Config.OUTPUT_DIR)

    cells = len(config.a_over_lambda) * config.num_trials
    say(f"🚀 开始实验: case={config.case}, 方案={','.join(config.schemes)}, {cells} 个单元, {threads} 个线程")
    rows = run_sweep(config, threads=threads)

    failed = sum(1 for row in rows if row.metric_name == "error")
    if failed:
        say(f"⚠️ {failed} 次运行失败，已记录为 error 行")

    results_path, aggregate_path = emit_results(
        rows, out_dir / f"{config.case}.{fmt}", fmt, include_wall_time=not args.no_wall_time
    )
    say(f"✅ 结果: {results_path}")
    say(f"✅ 汇总: {aggregate_path}")
    return 0


def command_validate(args) -> int:
    config = parse_config(args.config)
    check_feasibility(config)
    say(f"✅ 配置有效: case={config.case}, A/λ={list(config.a_over_lambda)}, 方案={','.join(config.schemes)}")
    return 0


def command_project_demo(args) -> int:
    """把几何投影与暴力网格搜索逐个比较"""
    policy = args.policy or Config.GEOMETRY_CANDIDATES
    rng = np.random.default_rng(args.seed)
    say(f"🧪 几何投影对照: {args.instances} 个随机实例, 策略 {policy}, 网格分辨率 {args.resolution}")

    worst_gap = 0.0
    failures = 0
    for i in range(args.instances):
        target, disks = random_projection_instance(rng)
        point = project_outside_disks(target, disks, policy)
        objective = float(np.sum((point - target) ** 2))
        _, oracle = grid_search_projection(target, disks, args.resolution)
        gap = objective - oracle
        worst_gap = max(worst_gap, gap)
        if gap > ORACLE_TOL or not disks.admits(point):
            failures += 1
            say(f"❌ 实例 {i}: 投影 {objective:.6f}, 网格 {oracle:.6f}, 圆盘 {len(disks)} 个")

    if failures:
        say(f"❌ {failures}/{args.instances} 个实例不一致 (最大差 {worst_gap:.3g})")
        return 1
    say(f"✅ 全部一致 (投影比网格最多差 {worst_gap:.3g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ma-opt", description="可移动天线位置优化：罚函数交替优化与对比实验")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="运行蒙特卡洛扫描并写出结果")
    run.add_argument("--config", required=True, help="实验配置文件 (dotenv 格式)")
    run.add_argument("--out", help="输出目录，默认 MA_OPT_OUTPUT_DIR")
    run.add_argument("--trials", type=int, help="覆盖 num_trials")
    run.add_argument("--seed", type=int, help="覆盖 base_seed")
    run.add_argument("--schemes", help="覆盖 schemes，例如 ma,fpa")
    run.add_argument("--threads", type=int, help="并行线程数，默认 MA_OPT_THREADS")
    run.add_argument("--format", choices=("csv", "jsonl"), help="结果格式，默认 MA_OPT_RESULT_FORMAT")
    run.add_argument("--no-wall-time", action="store_true", help="耗时列写 0，便于逐字节比较")
    run.set_defaults(handler=command_run)

    demo = sub.add_parser("project-demo", help="几何投影与网格搜索对照")
    demo.add_argument("--instances", type=int, default=200)
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--resolution", type=float, default=1e-3)
    demo.add_argument("--policy", choices=CANDIDATE_POLICIES)
    demo.set_defaults(handler=command_project_demo)

    validate = sub.add_parser("validate", help="只解析配置并做可行性检查")
    validate.add_argument("--config", required=True)
    validate.set_defaults(handler=command_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        Config.validate_config()
        setup_logging()
        return args.handler(args)
    except KeyboardInterrupt:
        say("\n👋 已中断")
        return 1
    except Exception as e:
        say(f"❌ {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
