from .engine import (ConfigError, PendingTask, Policy, ScenarioConfig, SimulationError, Simulator,
                     Snapshot, StopSimulation)
from .eventlog import (CSV_HEADER, Event, EventLog, LogFormatError, from_traces, log_from_csv,
                       log_to_csv, read_log, write_log)
from .kpis import (ImprovementReport, InconsistentLog, KpiReport, compare_runs, compute_kpis,
                   mean_report, nearest_rank)
from .policies import FifoPolicy, RandomPolicy, SptPolicy, make_policy
from .run import run_simulation
