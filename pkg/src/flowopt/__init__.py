"""Process simulation, event-log quality checks, trace anomaly detection and learned task dispatching."""
from .model import ProcessDefinition, load_process, parse_process, serialize_process, validate
from .sim import ScenarioConfig, Simulator, compute_kpis, run_simulation

__version__ = "0.1.0"

__all__ = ["ProcessDefinition", "ScenarioConfig", "Simulator", "compute_kpis", "load_process", "parse_process",
           "run_simulation", "serialize_process", "validate", "__version__"]
