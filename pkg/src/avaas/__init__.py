"""Microscopic ring/corridor/grid simulator plus observer-based traffic state estimation."""

from .network import RoadNetwork, ScenarioError, builtin_network, load_network
from .microsim import AggregationConfig, DemandSpec, Flow, InitialPlacement, ground_truth, simulate
from .detection import SensorConfig, default_sensor_profile, detect
from .observers import ObserverPolicy, sample_observers
from .estimation import TrafficState, estimate_link_states
from .clustering import elbow_curve, kmeans
from .metrics import compare, relative_error
from .scenario import ScenarioConfig, load_scenario

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig", "DemandSpec", "Flow", "InitialPlacement", "ObserverPolicy", "RoadNetwork",
    "ScenarioConfig", "ScenarioError", "SensorConfig", "TrafficState", "builtin_network", "compare",
    "default_sensor_profile", "detect", "elbow_curve", "estimate_link_states", "ground_truth", "kmeans",
    "load_network", "load_scenario", "relative_error", "sample_observers", "simulate",
]
