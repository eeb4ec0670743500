from visual_mpc.predictor.pixel_distribution import (
	check_distribution,
	delta_distribution,
	expected_position,
	renormalize,
	warp_distribution,
)
from visual_mpc.predictor.predictor_model import FlowPredictor, SimulatorPredictor
from visual_mpc.predictor.training_service import PredictorTrainingService, evaluate_predictor, train_predictor
