from visual_mpc.cost.planning_cost import (
	CostReport,
	DesignatedPixelSet,
	PixelEntry,
	PlanningCost,
	baseline_costs,
	expected_distance,
	pixel_cost,
	pixelwise_cost,
	total_cost,
	warp_length_cost,
	weights,
)
