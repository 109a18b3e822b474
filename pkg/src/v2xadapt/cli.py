"""Command-line entry point (``v2xadapt <verb> ...``)."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import V2XAdaptError

log = logging.getLogger("v2xadapt")


def _read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _emit(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load_run(run_dir):
    from .harness.config import RunConfig
    from .harness.data import generate_synthetic
    from .harness.model import ToyModel

    with open(os.path.join(run_dir, "config.json")) as fh:
        cfg = json.load(fh)
    cfg.pop("ablation", None)
    run = RunConfig.from_dict(cfg)
    with open(os.path.join(run_dir, "params.json")) as fh:
        snap = json.load(fh)
    model = ToyModel(run)
    model.load_snapshot(snap)
    return run, model, generate_synthetic(run.synthetic)


def cmd_train_toy(args):
    from .harness.config import load_config
    from .harness.train import save_run, train

    run = load_config(args.config, ablation=args.ablation)
    out = args.out or run.out
    art = train(run)
    save_run(art, out)
    print(json.dumps({"out": out, "ablation": run.ablation_name(),
                      "final_heldout_l_gen": art.heldout_gen_loss}, sort_keys=True))
    return 0


def cmd_score(args):
    from .scoring import load_profiles, score_batch

    profiles = load_profiles(args.profile) if args.profile else None
    scored, summary = score_batch(_read_jsonl(args.input), profiles, args.threshold)
    lines = [json.dumps(s.to_dict(), sort_keys=True) for s in scored]
    if args.out:
        with open(args.out, "w") as fh:
            fh.writelines(line + "\n" for line in lines)
        _emit(summary.to_dict(), args.summary or args.out + ".summary.json")
    else:
        for line in lines:
            print(line)
        _emit(summary.to_dict(), args.summary)
    return 1 if summary.errors and args.strict else 0


def cmd_evaluate(args):
    from .trajeval import load_samples, scenario_report
    from .validation import parse_footprint

    report = scenario_report(load_samples(args.input), footprint=parse_footprint(args.footprint),
                             mode=args.mode)
    _emit(report, args.out)
    return 0


def cmd_prompts(args):
    from .prompts import build_prompt

    prompt = build_prompt(args.weather, args.camera)
    if args.format == "json":
        _emit(prompt)
    else:
        print(prompt["system"])
        print()
        print(prompt["user"])
    return 0


def cmd_generate(args):
    from .prompts import HttpTransport, MockTransport, annotate_manifest, load_descriptions, \
        paired_requests, submit_many

    if args.transport == "http":
        if not args.endpoint:
            raise V2XAdaptError("--endpoint is required with --transport http")
        transport = HttpTransport(args.endpoint, timeout=args.timeout)
    else:
        transport = MockTransport()
    requests = []
    for row in _read_jsonl(args.manifest_in):
        requests += paired_requests(str(row["scene_id"]), row["weather"], row["vehicle_image"],
                                    row["infra_image"])
    results = submit_many(requests, transport, retries=args.retries, backoff=args.backoff,
                          max_in_flight=args.max_in_flight)
    descriptions = load_descriptions(args.descriptions) if args.descriptions else None
    rows, errors = annotate_manifest(results, descriptions)
    with open(args.out, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if errors:
        with open(args.out + ".errors.jsonl", "w") as fh:
            for err in errors:
                fh.write(json.dumps(err, sort_keys=True) + "\n")
    print(json.dumps({"rows": len(rows), "errors": len(errors),
                      "failed_requests": sum(1 for r in results if not r.ok)}, sort_keys=True))
    return 0


def cmd_export_attention(args):
    from .harness.exports import attention_traces, export_attention
    from .harness.train import write_jsonl

    _, model, data = _load_run(args.run)
    traces = attention_traces(model, data)
    if not traces:
        raise V2XAdaptError("this run has no attention module (w/o GMSAA ablation)")
    if args.traces:
        write_jsonl(args.traces, traces)
    _emit(export_attention(traces), args.out)
    return 0


def cmd_export_embeddings(args):
    from .harness.exports import export_embeddings
    from .harness.train import write_jsonl

    _, model, data = _load_run(args.run)
    rows, stats = export_embeddings(model, data)
    if args.rows:
        write_jsonl(args.rows, rows)
    _emit(stats, args.out)
    return 0


def cmd_report_timing(args):
    from .harness.exports import timing_report

    _, model, data = _load_run(args.run)
    if args.limit:
        data = data.subset(range(min(args.limit, len(data))))
    _emit(timing_report(model, data, repeats=args.repeats), args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="v2xadapt", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("train-toy", help="train the toy planner and write run artifacts")
    s.add_argument("--config", help="YAML run config")
    s.add_argument("--ablation", help="named ablation row, e.g. wo_mscl")
    s.add_argument("--out", help="artifact directory (defaults to the config's out)")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("score", help="composite quality scores for metric records")
    s.add_argument("--input", required=True, help="JSON-lines metric records")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--profile", help="JSON weight profiles keyed by weather")
    s.add_argument("--out", help="scored JSON-lines output (stdout if omitted)")
    s.add_argument("--summary", help="summary JSON path")
    s.add_argument("--strict", action="store_true", help="exit 1 when any record is rejected")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("evaluate", help="trajectory metrics per scenario")
    s.add_argument("--input", required=True, help="JSON-lines eval samples")
    s.add_argument("--footprint", default="1.8,4.5", help="ego width,length in metres")
    s.add_argument("--mode", choices=("average", "point"), default="average")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("prompts", help="prompt templates")
    psub = s.add_subparsers(dest="action", required=True)
    e = psub.add_parser("emit", help="render one prompt")
    e.add_argument("--weather", required=True, choices=("snow", "fog"))
    e.add_argument("--camera", required=True,
                   choices=("vehicle", "infra", "vehicle_front", "infrastructure"))
    e.add_argument("--format", choices=("text", "json"), default="text")
    e.set_defaults(func=cmd_prompts)

    s = sub.add_parser("generate", help="submit generation requests and write a manifest")
    s.add_argument("--manifest-in", required=True,
                   help="JSON-lines {scene_id, weather, vehicle_image, infra_image}")
    s.add_argument("--transport", choices=("mock", "http"), default="mock")
    s.add_argument("--endpoint")
    s.add_argument("--timeout", type=float, default=60.0)
    s.add_argument("--descriptions", help="JSON-lines {scene_id, text}")
    s.add_argument("--retries", type=int, default=3)
    s.add_argument("--backoff", type=float, default=0.5)
    s.add_argument("--max-in-flight", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    for verb, func, extra, help_text in (
        ("export-attention", cmd_export_attention, "--traces", "attention aggregate of a run"),
        ("export-embeddings", cmd_export_embeddings, "--rows", "pre/post embedding statistics"),
        ("report-timing", cmd_report_timing, None, "per-stage latency of a run"),
    ):
        s = sub.add_parser(verb, help=help_text)
        s.add_argument("--run", required=True, help="directory written by train-toy")
        s.add_argument("--out")
        if extra:
            s.add_argument(extra, help="also write the per-sample JSON-lines here")
        if verb == "report-timing":
            s.add_argument("--repeats", type=int, default=3)
            s.add_argument("--limit", type=int, default=0, help="time only the first N samples")
        s.set_defaults(func=func)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyError as exc:
        print(f"error: missing field {exc}", file=sys.stderr)
        return 2
    except (V2XAdaptError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
