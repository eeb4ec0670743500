from visual_mpc.sim.camera import CameraConfig, build_cameras
from visual_mpc.sim.renderer import export_png, load_png
from visual_mpc.sim.simulator import TabletopSimulator
from visual_mpc.sim.world_state import LShape, ObjectState, WorldState
