from visual_mpc.regnet.curriculum import CurriculumSchedule
from visual_mpc.regnet.registration_model import RegistrationNet, zero_flow_loss
from visual_mpc.regnet.tracking import point_photometric_error, transport_point, transport_points
from visual_mpc.regnet.training_service import (
	RegistrationTrainingService,
	evaluate_registration,
	known_shift_error,
	self_registration_magnitude,
	tracking_errors,
	train_registration,
)
