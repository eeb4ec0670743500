app_name = "visual_mpc"
app_title = "Visual MPC"
app_publisher = "Clapgrow Software"
app_description = "Closed-loop visual MPC with self-supervised image registration, trained on a tabletop pushing simulator"
app_email = "jai@clapgrow.com"
app_license = "mit"

# Configuration
# -------------

# shipped configs, resolved relative to visual_mpc/config
default_config = "desk.json"
shipped_configs = ["desk.json", "full.json", "scene.json"]

# Pipeline
# --------

# Stages run in this order; a stage is skipped when its completion marker matches the stage hash
pipeline_stages = [
	{"name": "collect", "method": "visual_mpc.tasks.run_collect_stage", "requires": []},
	{"name": "train-predictor", "method": "visual_mpc.tasks.run_predictor_stage", "requires": ["collect"]},
	{"name": "train-registration", "method": "visual_mpc.tasks.run_registration_stage", "requires": ["collect"]},
	# reflex-free data and predictor; both do nothing while collect.push_only_trajectories is 0
	{"name": "collect-push", "method": "visual_mpc.tasks.run_push_collect_stage", "requires": []},
	{
		"name": "train-predictor-push",
		"method": "visual_mpc.tasks.run_push_predictor_stage",
		"requires": ["collect-push"],
	},
	{
		"name": "bench",
		"method": "visual_mpc.tasks.run_bench_stage",
		"requires": ["train-predictor", "train-registration", "train-predictor-push"],
	},
]

# Command line
# ------------

cli_commands = {
	"collect": "visual_mpc.commands.collect",
	"train-predictor": "visual_mpc.commands.train_predictor",
	"train-registration": "visual_mpc.commands.train_registration",
	"run-task": "visual_mpc.commands.run_task",
	"bench": "visual_mpc.commands.bench",
	"visualize": "visual_mpc.commands.visualize",
	"pipeline": "visual_mpc.commands.pipeline",
	"grad-check": "visual_mpc.commands.grad_check",
}

# Planning modes
# --------------

# mode -> method producing the designated-pixel beliefs for one MPC step
belief_providers = {
	"registration": "visual_mpc.planner.mpc_service.registration_beliefs",
	"propagation": "visual_mpc.planner.mpc_service.propagation_beliefs",
	"oracle": "visual_mpc.planner.mpc_service.oracle_beliefs",
}
