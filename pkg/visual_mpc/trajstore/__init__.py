from visual_mpc.trajstore.benchmark_task import BenchmarkTask, load_task, save_task
from visual_mpc.trajstore.collection_service import CollectionService, collect
from visual_mpc.trajstore.dataset import (
	DatasetIndex,
	TrajectoryDataset,
	sample_pair,
	sample_shift_pair,
	sample_subsequence,
)
from visual_mpc.trajstore.trajectory_record import (
	GroundTruth,
	TrajectoryRecord,
	read_ground_truth,
	read_record,
	read_training_record,
	write_record,
)
