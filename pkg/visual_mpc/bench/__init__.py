from visual_mpc.bench.benchmark_service import (
	BenchmarkService,
	ModelPaths,
	ResultRow,
	ResultTable,
	load_models,
	run_benchmark,
)
from visual_mpc.bench.occlusion import OcclusionReport, build_scenario, occlusion_study, play_scenario
from visual_mpc.bench.report import report, success_curve, success_curves
from visual_mpc.bench.suite import BenchmarkSuite, generate_suite, make_task, separation_bounds
