"""JSON-over-HTTP API around the engine (starlette application)."""
from __future__ import annotations

import contextlib
import hashlib
import json
from pathlib import Path

from starlette.applications import Starlette
from starlette.concurrency import run_in_threadpool
from starlette.requests import Request
from starlette.responses import PlainTextResponse, Response
from starlette.routing import Route

from ..anomaly.detector import DetectorConfig, DetectorModel, EmptyTrace, score_trace, train_detector
from ..model.io import process_from_doc, serialize_process
from ..model.types import ProcessDefinition
from ..model.validate import ProcessError, ProcessValidationError, validate
from ..quality import EmptyLogError, FieldRules, QualityTargets, assess_quality
from ..scheduler.evaluate import evaluate_policy
from ..scheduler.policy import SchedulerPolicy
from ..scheduler.train import TrainConfig, train_scheduler
from ..sim.engine import ConfigError, ScenarioConfig
from ..sim.eventlog import LogFormatError, log_from_csv, read_log, write_log
from ..sim.run import run_simulation
from .jobs import DONE, JobStore

JSON_HEADERS = {"content-type": "application/json"}


class ApiError(Exception):
    def __init__(self, code: int, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.body = {"error": message, **extra}


def _json(body, status=200) -> Response:
    return Response(json.dumps(body, sort_keys=True).encode(), status, headers=JSON_HEADERS)


class ServiceState:
    def __init__(self, data_dir, workers: int = 2):
        self.root = Path(data_dir)
        self.processes = self.root / "processes"
        self.processes.mkdir(parents=True, exist_ok=True)
        self.jobs = JobStore(self.root / "jobs", workers)
        self._cache: dict = {}  # immutable artifacts only

    # -- processes ------------------------------------------------------
    def store_process(self, defn: ProcessDefinition) -> str:
        text = serialize_process(defn)
        pid = hashlib.sha256(text.encode()).hexdigest()[:16]
        path = self.processes / f"{pid}.json"
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_text(text)
            tmp.replace(path)
        return pid

    def process_text(self, pid: str) -> bytes:
        key = ("process", pid)
        if key not in self._cache:
            path = self.processes / f"{pid}.json"
            if not pid.isalnum() or not path.exists():
                raise ApiError(404, f"unknown process {pid!r}")
            self._cache[key] = path.read_bytes()
        return self._cache[key]

    def process(self, pid: str) -> ProcessDefinition:
        return process_from_doc(json.loads(self.process_text(pid)))

    # -- jobs -----------------------------------------------------------
    def finished_job(self, job_id: str, kind: str):
        rec = self.jobs.get(job_id)
        if rec is None or rec.kind != kind:
            raise ApiError(404, f"unknown {kind} job {job_id!r}")
        if rec.status != DONE:
            raise ApiError(409, f"job {job_id} is {rec.status}", status=rec.status)
        return rec

    def artifact(self, job_id: str, kind: str, name: str) -> bytes:
        key = (job_id, name)
        if key not in self._cache:
            rec = self.finished_job(job_id, kind)
            self._cache[key] = (Path(rec.result_ref) / name).read_bytes()
        return self._cache[key]


async def _body(request: Request) -> dict:
    try:
        doc = json.loads(await request.body())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ApiError(400, f"body is not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ApiError(400, "body must be a JSON object")
    return doc


def _scenario(doc) -> ScenarioConfig:
    try:
        return ScenarioConfig.from_doc(doc or {})
    except ConfigError as exc:
        raise ApiError(422, str(exc)) from None


def _parse_process(doc) -> ProcessDefinition:
    try:
        defn = process_from_doc(doc, check=False)
    except ProcessError as exc:
        raise ApiError(422, str(exc), violations=[]) from None
    violations = validate(defn)
    if violations:
        raise ApiError(422, "process is invalid", violations=[v.to_doc() for v in violations])
    return defn


def create_app(data_dir, workers: int = 2) -> Starlette:
    state = ServiceState(data_dir, workers)

    async def health(request):
        return Response(b'{"status":"ok"}', headers=JSON_HEADERS)

    async def post_process(request):
        defn = _parse_process(await _body(request))
        return _json({"id": state.store_process(defn)}, 201)

    async def get_process(request):
        return Response(state.process_text(request.path_params["pid"]), headers=JSON_HEADERS)

    async def post_simulation(request):
        doc = await _body(request)
        defn = state.process(str(doc.get("process_id")))
        scenario = _scenario(doc.get("scenario"))
        if scenario.policy == "Learned":
            state.finished_job(scenario.policy_ref, "TrainScheduler")
            scenario = ScenarioConfig.from_doc({**scenario.to_doc(),
                                               "policy_ref": str(state.jobs.directory(scenario.policy_ref) / "policy.json")})

        def work(job_dir: Path):
            log, kpis = run_simulation(defn, scenario)
            write_log(log, job_dir / "log.csv")
            (job_dir / "kpis.json").write_text(kpis.to_json())

        return _json(state.jobs.submit("Simulate", work).to_doc(), 202)

    async def get_job(request):
        rec = state.jobs.get(request.path_params["job_id"])
        if rec is None:
            raise ApiError(404, "unknown job")
        return _json(rec.to_doc())

    async def get_kpis(request):
        return Response(state.artifact(request.path_params["job_id"], "Simulate", "kpis.json"),
                        headers=JSON_HEADERS)

    async def get_log(request):
        return PlainTextResponse(state.artifact(request.path_params["job_id"], "Simulate", "log.csv"),
                                 media_type="text/csv")

    async def assess(request):
        doc = await _body(request)
        try:
            if "log_csv" in doc:
                log = log_from_csv(doc["log_csv"])
            elif "log_path" in doc:
                log = read_log(doc["log_path"])
            elif "simulation_id" in doc:
                log = log_from_csv(state.artifact(doc["simulation_id"], "Simulate", "log.csv").decode())
            else:
                raise ApiError(422, "give log_csv, log_path or simulation_id")
            rules = FieldRules.from_doc(doc["rules"]) if "rules" in doc else FieldRules()
            targets = QualityTargets(**doc.get("targets", {}))
            report = await run_in_threadpool(assess_quality, log, rules, targets, doc.get("reference_clock"))
        except (LogFormatError, EmptyLogError, ValueError, TypeError, OSError) as exc:
            raise ApiError(422, str(exc)) from None
        return _json(report.to_flat())

    async def train_anomaly(request):
        doc = await _body(request)
        traces = doc.get("traces")
        if not isinstance(traces, list) or not traces:
            raise ApiError(422, "traces must be a non-empty list of activity lists")
        try:
            cfg = DetectorConfig(**doc.get("config", {}))
        except TypeError as exc:
            raise ApiError(422, str(exc)) from None
        validation = doc.get("validation")

        def work(job_dir: Path):
            from ..anomaly.detector import calibrate_threshold
            model = train_detector(traces, cfg)
            if validation:
                calibrate_threshold(model, validation, doc.get("target_fpr", 0.005))
            model.save(job_dir / "model.json")

        return _json(state.jobs.submit("TrainDetector", work).to_doc(), 202)

    async def score(request):
        doc = await _body(request)
        model_id = str(doc.get("model_id"))
        key = (model_id, "model")
        if key not in state._cache:
            state._cache[key] = DetectorModel.load(json.loads(state.artifact(model_id, "TrainDetector", "model.json")))
        model = state._cache[key]
        try:
            result = score_trace(model, doc.get("trace"), doc.get("case_id"))
        except EmptyTrace as exc:
            raise ApiError(422, str(exc)) from None
        return _json({"case_id": result.case_id, "score": result.score, "flagged": result.flagged,
                      "threshold": model.threshold if model.threshold != float("inf") else None})

    async def train_sched(request):
        doc = await _body(request)
        defn = state.process(str(doc.get("process_id")))
        scenario = _scenario(doc.get("scenario"))
        try:
            cfg = TrainConfig.from_doc(doc.get("config", {}))
        except (ConfigError, TypeError) as exc:
            raise ApiError(422, str(exc)) from None

        def work(job_dir: Path):
            policy = train_scheduler(defn, scenario, cfg, log_path=job_dir / "train_log.csv")
            policy.save(job_dir / "policy.json")

        return _json(state.jobs.submit("TrainScheduler", work).to_doc(), 202)

    async def evaluate(request):
        doc = await _body(request)
        defn = state.process(str(doc.get("process_id")))
        scenario = _scenario(doc.get("scenario"))
        policies = {name: name for name in doc.get("policies", ["FIFO", "Random", "SPT"])}
        if "Learned" in policies:
            job_id = str(doc.get("policy_job_id"))
            state.finished_job(job_id, "TrainScheduler")
            policy = SchedulerPolicy.load(state.jobs.directory(job_id) / "policy.json")
            try:
                policy.check_compatible(defn)
            except ValueError as exc:
                raise ApiError(422, str(exc)) from None
            policies["Learned"] = policy
        seeds = [int(s) for s in doc.get("seeds", [0, 1, 2])]
        result = await run_in_threadpool(evaluate_policy, defn, scenario, policies, seeds)
        return _json(result.to_doc())

    async def on_api_error(request, exc: ApiError):
        return _json(exc.body, exc.code)

    async def on_validation_error(request, exc: ProcessValidationError):
        return _json({"error": str(exc), "violations": [v.to_doc() for v in exc.violations]}, 422)

    routes = [
        Route("/health", health),
        Route("/processes", post_process, methods=["POST"]),
        Route("/processes/{pid}", get_process),
        Route("/simulations", post_simulation, methods=["POST"]),
        Route("/simulations/{job_id}/kpis", get_kpis),
        Route("/simulations/{job_id}/log", get_log),
        Route("/jobs/{job_id}", get_job),
        Route("/quality/assess", assess, methods=["POST"]),
        Route("/anomaly/train", train_anomaly, methods=["POST"]),
        Route("/anomaly/score", score, methods=["POST"]),
        Route("/scheduler/train", train_sched, methods=["POST"]),
        Route("/scheduler/evaluate", evaluate, methods=["POST"]),
    ]
    @contextlib.asynccontextmanager
    async def lifespan(app):
        yield
        state.jobs.shutdown()

    app = Starlette(routes=routes,
                    exception_handlers={ApiError: on_api_error, ProcessValidationError: on_validation_error},
                    lifespan=lifespan)
    app.state.service = state
    return app
