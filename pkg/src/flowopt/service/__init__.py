from .app import create_app
from .jobs import JobRecord, JobStore
from .loadtest import ReliabilityReport, TargetUnreachable, load_test, prepare_kpi_target, summarize
from .server import BindError, serve
