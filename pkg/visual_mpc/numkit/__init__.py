from visual_mpc.numkit.checkpoint import load_checkpoint, save_checkpoint
from visual_mpc.numkit.grad_check import GradCheckReport, check_kernels, grad_check
from visual_mpc.numkit.kernels import (
	bilinear_resize,
	bilinear_resize_backward,
	bilinear_warp,
	bilinear_warp_backward,
	conv_backward,
	conv_forward,
	default_dtype,
	verification_mode,
)
from visual_mpc.numkit.losses import photometric_loss, smoothness_loss
from visual_mpc.numkit.network import ConvLayer, ConvParams, EncoderDecoder, init_conv_params
from visual_mpc.numkit.optimizer import OptimizerConfig, OptimizerState, optimizer_step
