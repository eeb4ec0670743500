from visual_mpc.planner.cem import CEMResult, cem_optimize, expand_actions, warm_start
from visual_mpc.planner.mpc_service import (
	EpisodeResult,
	MPCState,
	PlanningModels,
	mpc_step,
	oracle_beliefs,
	propagation_beliefs,
	registration_beliefs,
	run_episode,
)
