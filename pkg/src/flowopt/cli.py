"""Command-line entry point.

Exit codes: 0 success, 1 validation failure (invalid model, failed quality
gate with --strict), 2 runtime or usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .model.io import load_process, serialize_process
from .model.validate import ProcessError, validate
from .sim.engine import ScenarioConfig

EXIT_OK, EXIT_INVALID, EXIT_ERROR = 0, 1, 2


class ValidationFailure(Exception):
    """Input was read fine but judged invalid."""


def _file_target(path) -> bool:
    return path not in (None, "-")


def _write_text(text: str, path) -> None:
    if not _file_target(path):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _write_json(doc, path) -> None:
    _write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", path)


def _load_model(ref):
    """A model file, or the name of a bundled example model."""
    if Path(ref).exists():
        return load_process(ref)
    from .anomaly.benchmark import bundled_model
    try:
        return bundled_model(ref)
    except FileNotFoundError:
        raise FileNotFoundError(f"no model file or bundled model named {ref!r}") from None


def _scenario_from_args(args) -> ScenarioConfig:
    doc = json.loads(Path(args.scenario).read_text()) if getattr(args, "scenario", None) else {}
    for key, attr in (("horizon", "horizon"), ("arrival_rate", "rate"), ("seed", "seed"),
                      ("max_in_flight", "max_in_flight"), ("policy", "policy"), ("policy_ref", "policy_ref")):
        value = getattr(args, attr, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "arrivals", None):
        doc["arrivals"] = [float(t) for t in args.arrivals.split(",") if t.strip()]
        doc.pop("arrival_rate", None)
    doc.setdefault("seed", 0)
    return ScenarioConfig.from_doc(doc)


def _add_scenario_args(p, seed=True):
    p.add_argument("--scenario", help="scenario JSON (flags below override its fields)")
    p.add_argument("--horizon", type=float)
    p.add_argument("--rate", type=float, help="Poisson arrival rate")
    p.add_argument("--arrivals", help="comma-separated fixed arrival times")
    p.add_argument("--max-in-flight", type=int, dest="max_in_flight")
    if seed:
        p.add_argument("--seed", type=int)


def _model_traces(log, defn=None):
    """Case id -> activity sequence of task events in start order."""
    if defn is not None:
        keep = {t.id for t in defn.tasks}
        pick = lambda e: e.activity in keep  # noqa: E731
    elif any(e.resource for e in log.events):
        pick = lambda e: e.resource is not None  # noqa: E731
    else:
        pick = lambda e: e.activity is not None  # noqa: E731
    out = {}
    for cid, evs in log.cases().items():
        evs = sorted((e for e in evs if pick(e)),
                     key=lambda e: (e.start_time if e.start_time is not None else float("inf"),
                                    e.complete_time if e.complete_time is not None else float("inf")))
        out[cid] = [e.activity for e in evs]
    return out


# -- subcommands -------------------------------------------------------------

def cmd_validate(args):
    from .model.io import import_bpmn_xml, process_from_doc
    path = Path(args.model)
    if not path.exists():
        from importlib import resources
        path = resources.files("flowopt.data.models").joinpath(f"{args.model}.json")
        if not path.is_file():
            raise FileNotFoundError(f"no model file or bundled model named {args.model!r}")
    text = path.read_text()
    if args.model.endswith((".bpmn", ".xml")):
        defn = import_bpmn_xml(text, check=False)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationFailure(f"{args.model}: not JSON: {exc}") from None
        defn = process_from_doc(doc, check=False)
    violations = validate(defn)
    if violations:
        for v in violations:
            print(f"{v.code}: {v.element}: {v.detail}", file=sys.stderr)
        raise ValidationFailure(f"{len(violations)} violation(s)")
    if args.normalize:
        _write_text(serialize_process(defn), args.normalize)


def cmd_simulate(args):
    from .sim.run import run_simulation
    from .sim.eventlog import write_log
    defn = _load_model(args.model)
    scenario = _scenario_from_args(args)
    log, kpis = run_simulation(defn, scenario)
    if args.out:
        write_log(log, args.out)
    else:
        sys.stdout.write(log.to_csv())
    if args.kpis:
        _write_text(kpis.to_json(), args.kpis)


def cmd_kpis(args):
    from .sim.eventlog import read_log
    from .sim.kpis import compute_kpis
    defn = _load_model(args.model)
    log = read_log(args.log)
    horizon = args.horizon or log.meta.get("scenario", {}).get("horizon")
    if horizon is None:
        raise ValueError("no horizon given and none recorded in the log's meta file")
    _write_text(compute_kpis(log, defn, float(horizon)).to_json(), args.out)


def cmd_quality(args):
    from .quality import FieldRules, QualityTargets, assess_quality
    from .sim.eventlog import read_log
    rules = FieldRules.from_doc(json.loads(Path(args.rules).read_text())) if args.rules else FieldRules()
    targets = QualityTargets(args.max_missing, args.max_anomaly, args.max_latency)
    report = assess_quality(read_log(args.log), rules, targets)
    _write_text(report.to_json(), args.out)
    if args.strict and not all(report.passed.values()):
        raise ValidationFailure("quality targets not met: "
                                + ", ".join(k for k, ok in report.passed.items() if not ok))


def cmd_inject(args):
    from .quality import FieldRules, inject_defects
    from .sim.eventlog import read_log, write_log
    rules = FieldRules.from_doc(json.loads(Path(args.rules).read_text())) if args.rules else FieldRules()
    out = inject_defects(read_log(args.log), args.missing_rate, args.anomaly_rate, args.latency_shift,
                         args.seed, rules)
    write_log(out, args.out)


def cmd_train_detector(args):
    from .anomaly.detector import DetectorConfig, calibrate_threshold, train_detector
    from .sim.eventlog import read_log
    defn = _load_model(args.model) if args.model else None
    traces = list(_model_traces(read_log(args.log), defn).values())
    if args.validation_log:
        validation = list(_model_traces(read_log(args.validation_log), defn).values())
    else:
        cut = int(round(len(traces) * (1.0 - args.validation_fraction)))
        traces, validation = traces[:cut], traces[cut:]
    cfg = DetectorConfig(hidden=args.hidden, layers=args.layers, attention=args.attention, epochs=args.epochs,
                         batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    model = train_detector(traces, cfg)
    if validation:
        calibrate_threshold(model, validation, args.target_fpr)
    model.save(args.out)
    if args.plot:
        from . import plotting
        plotting.loss_curve(model.history, args.plot)
    print(json.dumps({"train_traces": len(traces), "validation_traces": len(validation),
                      "threshold": model.threshold, "final_loss": model.history[-1] if model.history else None}))


def cmd_detect(args):
    from .anomaly.detector import DetectorModel, score_trace
    from .sim.eventlog import read_log
    model = DetectorModel.load(args.detector)
    defn = _load_model(args.model) if args.model else None
    rows = [score_trace(model, trace, cid) for cid, trace in sorted(_model_traces(read_log(args.log), defn).items(),
                                                                    key=lambda kv: (kv[0] is None, kv[0]))]
    lines = ["case_id,score,flagged"] + [f"{r.case_id},{r.score:.9g},{int(r.flagged)}" for r in rows]
    _write_text("\n".join(lines) + "\n", args.out)


def cmd_train_scheduler(args):
    from .scheduler.train import TrainConfig, train_scheduler
    defn = _load_model(args.model)
    scenario = _scenario_from_args(args)
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("iterations", "gamma", "target_sync", "batch_size", "buffer_size", "lr",
                "discount_time_unit", "reward_scale", "select_every", "select_episodes"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if args.seed is not None:
        doc["seed"] = args.seed
    policy = train_scheduler(defn, scenario, TrainConfig.from_doc(doc), log_path=args.log)
    policy.save(args.out)
    if args.plot:
        from . import plotting
        plotting.training_curve(policy.history, args.plot)


def cmd_evaluate(args):
    from .scheduler.evaluate import evaluate_policy
    from .scheduler.policy import SchedulerPolicy
    defn = _load_model(args.model)
    scenario = _scenario_from_args(args)
    policies = {name: name for name in args.policies if name != "Learned"}
    if args.policy_ref:
        learned = SchedulerPolicy.load(args.policy_ref)
        learned.check_compatible(defn)
        policies["Learned"] = learned
    elif "Learned" in args.policies:
        raise ValueError("Learned needs --policy-ref")
    result = evaluate_policy(defn, scenario, policies, args.seeds)
    _write_json(result.to_doc(), args.out)
    if _file_target(args.out):
        from . import plotting
        plotting.policy_cycle_times(result.reports, Path(args.out).with_suffix(".png"))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "mean_cycle_time", "overall_utilization", "total_cost",
                        "cycle_time_improvement_pct"])
            for name, rep in result.reports.items():
                w.writerow([name, rep.mean_cycle_time, rep.overall_utilization, rep.total_cost,
                            result.improvement[name].cycle_time])


def cmd_optimize(args):
    from .optimizer import find_bottlenecks, recommend
    from .sim.eventlog import read_log
    from .sim.run import run_simulation
    defn = _load_model(args.model)
    scenario = _scenario_from_args(args)
    log = read_log(args.log) if args.log else run_simulation(defn, scenario)[0]
    report = find_bottlenecks(log, defn, scenario.horizon)
    recs = recommend(defn, scenario, report, args.budget, args.seeds)
    _write_json({"bottlenecks": report.to_doc(), "recommendations": [r.to_doc() for r in recs]}, args.out)
    if _file_target(args.out):
        from . import plotting
        plotting.bottleneck_waits(report, Path(args.out).with_suffix(".png"))


def cmd_bench(args):
    from .bench import BenchMatrix, default_matrix, run_bench, summary_text
    if args.matrix:
        matrix = BenchMatrix.from_doc(json.loads(Path(args.matrix).read_text()), Path(args.matrix).parent)
    else:
        matrix = default_matrix()
    report = run_bench(matrix, args.out, plots=not args.no_plots)
    sys.stdout.write(summary_text(report))
    if report["failed"]:
        print(f"failed scenarios: {', '.join(report['failed'])}", file=sys.stderr)


def cmd_serve(args):
    from .service.server import serve
    serve(args.port, args.data_dir, args.workers, args.host)


def cmd_load_test(args):
    from .service.loadtest import load_test, prepare_kpi_target
    endpoints = list(args.endpoint or [])
    if args.with_kpis:
        from .anomaly.benchmark import bundled_model
        from .model.io import process_to_doc
        path = prepare_kpi_target(args.url, process_to_doc(bundled_model("mm1")),
                                  {"horizon": 1000.0, "arrival_rate": 0.5, "seed": args.seed})
        endpoints.append(path)
    if not endpoints:
        endpoints = ["/health"]
    report = load_test(args.url, endpoints, args.concurrency, args.duration, args.seed)
    _write_text(report.to_json(), args.out)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowopt", description="Process simulation and optimization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a process model (JSON or BPMN XML)")
    p.add_argument("model")
    p.add_argument("--normalize", metavar="OUT", help="also write the canonical JSON form")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run a scenario and write the event log CSV")
    p.add_argument("model")
    _add_scenario_args(p)
    p.add_argument("--policy", choices=["FIFO", "Random", "SPT", "Learned"])
    p.add_argument("--policy-ref", dest="policy_ref", help="learned policy checkpoint")
    p.add_argument("--out", help="log CSV path (default stdout)")
    p.add_argument("--kpis", help="also write the KPI JSON here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kpis", help="KPIs of an event log")
    p.add_argument("model")
    p.add_argument("log")
    p.add_argument("--horizon", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kpis)

    p = sub.add_parser("quality", help="assess completeness, validity and latency of a log")
    p.add_argument("log")
    p.add_argument("--rules", help="field rules JSON")
    p.add_argument("--max-missing", type=float, default=0.001)
    p.add_argument("--max-anomaly", type=float, default=0.005)
    p.add_argument("--max-latency", type=float, default=60.0)
    p.add_argument("--strict", action="store_true", help="exit 1 when any target is missed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("inject", help="inject seeded defects into a log")
    p.add_argument("log")
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--anomaly-rate", type=float, default=0.0)
    p.add_argument("--latency-shift", type=float, default=0.0)
    p.add_argument("--rules")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("train-detector", help="train the next-activity anomaly detector")
    p.add_argument("log", help="log of normal cases")
    p.add_argument("--model", help="process model (selects task events)")
    p.add_argument("--validation-log")
    p.add_argument("--validation-fraction", type=float, default=0.25)
    p.add_argument("--target-fpr", type=float, default=0.005)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--attention", type=int, default=16)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot", help="training-loss PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_detector)

    p = sub.add_parser("detect", help="score every case of a log")
    p.add_argument("detector", help="detector checkpoint")
    p.add_argument("log")
    p.add_argument("--model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("train-scheduler", help="train a Double DQN dispatching policy")
    p.add_argument("model")
    _add_scenario_args(p)
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--iterations", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--target-sync", type=int, dest="target_sync")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--buffer-size", type=int, dest="buffer_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--discount-time-unit", type=float, dest="discount_time_unit")
    p.add_argument("--reward-scale", type=float, dest="reward_scale")
    p.add_argument("--select-every", type=int, dest="select_every",
                   help="validate every N steps and keep the best weights")
    p.add_argument("--select-episodes", type=int, dest="select_episodes")
    p.add_argument("--log", help="training log CSV")
    p.add_argument("--plot", help="training curve PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_scheduler)

    p = sub.add_parser("evaluate", help="compare policies on paired seeds (--out X.json also writes X.png)")
    p.add_argument("model")
    _add_scenario_args(p, seed=False)
    p.add_argument("--policy-ref", dest="policy_ref")
    p.add_argument("--policies", nargs="+", default=["FIFO", "Random", "SPT"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="rank bottlenecks and test capacity edits (--out X.json also writes X.png)")
    p.add_argument("model")
    _add_scenario_args(p)
    p.add_argument("--log", help="use this log for the bottleneck ranking")
    p.add_argument("--budget", type=int, default=1)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("bench", help="run a scenario matrix and the improvement regression")
    p.add_argument("matrix", nargs="?", help="matrix JSON (default: built-in three-scenario matrix)")
    p.add_argument("--out", default="bench-out")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", default="flowopt-data")
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("load-test", help="measure latency, error rate and availability")
    p.add_argument("url")
    p.add_argument("--endpoint", action="append", help="GET path (repeatable)")
    p.add_argument("--with-kpis", action="store_true", help="also read KPIs of a freshly simulated job")
    p.add_argument("--concurrency", type=int, default=10)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_load_test)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValidationFailure, ProcessError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except KeyboardInterrupt:
        return EXIT_ERROR
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
