"""Command-line front end: ingest, requests, evaluate, synth.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 internal
error. All outputs are deterministic for identical inputs; the only
wall-clock field (manifest created_at) is excluded from every digest.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .core import AnalysisConfig, BBError, ConfigError, DataError, \
    digest_payload
from .ingest import (
    parse_config_file,
    parse_ngsim_csv,
    parse_predictions,
    parse_site_cfg,
    read_dataset_dir,
    resample,
    split_dataset,
    write_dataset_dir,
    write_prediction_requests,
)
from .metrics import (
    enumerate_highway_anchors,
    evaluate_behavior,
    merge_participant_ids,
)
from .events import FrameIndex, extract_merge_events
from .report import RunManifest, summarize, write_report
from .synth import (
    SynthParams,
    generate_highway_dataset,
    generate_merge_dataset,
    parse_synth_params,
    write_highway_labels,
    write_merge_labels,
    write_synth_params,
)

log = logging.getLogger("bbeval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_threads(requested: int | None) -> int:
    """--threads beats BB_THREADS beats machine parallelism."""
    if requested is None:
        env = os.environ.get("BB_THREADS", "").strip()
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise UsageError(f"BB_THREADS must be an integer, got {env!r}")
    if requested is None:
        return os.cpu_count() or 1
    if requested < 1:
        raise UsageError("thread count must be >= 1")
    return requested


def _load_config(path: str | None) -> AnalysisConfig:
    return AnalysisConfig() if path is None else parse_config_file(path)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bbeval", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="worker pool size (default: BB_THREADS or all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pi = sub.add_parser("ingest", help="canonicalize a trajectory CSV")
    pi.add_argument("--ngsim", required=True, help="raw trajectory CSV")
    pi.add_argument("--site", required=True, help="site profile (bb-site)")
    pi.add_argument("--out", required=True, help="output dataset directory")
    pi.add_argument("--resample-hz", type=float, default=None)
    pi.add_argument("--split", default=None,
                    help="train,val,test percentages, e.g. 70,10,20")
    pi.add_argument("--seed", type=int, default=0)
    pi.set_defaults(fn=cmd_ingest)

    pr = sub.add_parser("requests", help="emit prediction requests")
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--scenario", choices=("merge", "highway", "all"),
                    default="all")
    pr.add_argument("--out", required=True)
    pr.add_argument("--config", default=None)
    pr.set_defaults(fn=cmd_requests)

    pe = sub.add_parser("evaluate", help="run the behavioral comparison")
    pe.add_argument("--dataset", required=True)
    pe.add_argument("--predictions", nargs="*", default=[],
                    help="bb-pred files, one per model")
    pe.add_argument("--out", required=True)
    pe.add_argument("--config", default=None)
    pe.set_defaults(fn=cmd_evaluate)

    ps = sub.add_parser("synth", help="generate seeded synthetic datasets")
    ps.add_argument("--params", default=None, help="bb-synth parameter file")
    ps.add_argument("--out", required=True)
    ps.set_defaults(fn=cmd_synth)
    return p


def _parse_split(text: str) -> tuple[float, float, float]:
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--split must be three numbers, got {text!r}")
    if len(parts) != 3:
        raise UsageError(f"--split must be three numbers, got {text!r}")
    total = sum(parts)
    if total <= 0:
        raise UsageError("--split percentages must sum to a positive value")
    return tuple(v / total for v in parts)


def cmd_ingest(args) -> int:
    site = parse_site_cfg(args.site)
    dataset = parse_ngsim_csv(args.ngsim, site)
    if args.resample_hz is not None:
        dataset = resample(dataset, args.resample_hz)
    split = None
    if args.split is not None:
        split = split_dataset(dataset, _parse_split(args.split),
                              seed=args.seed)
    manifest = write_dataset_dir(dataset, args.out, split=split)
    print(f"dataset {manifest['site']} hz={dataset.sample_hz:g} "
          f"tracks={manifest['n_tracks']} samples={manifest['n_samples']} "
          f"digest={manifest['digest']}")
    return 0


def _request_anchors(dataset, config, scenario: str, index: FrameIndex
                     ) -> list[tuple[int, float]]:
    anchors: list[tuple[int, float]] = []
    try:
        events = extract_merge_events(dataset, config, index=index)
    except DataError as exc:
        # a site without an on-ramp cannot host merge events; still valid
        log.warning("no merge events: %s", exc)
        events = []
    if scenario in ("merge", "all"):
        for ev in events:
            for rec in ev.records:
                if rec.ok:
                    anchors.append((ev.merger_id, rec.anchor_t))
                    anchors.append((rec.highway_id, rec.anchor_t))
    if scenario in ("highway", "all"):
        hw, _ = enumerate_highway_anchors(
            dataset, config, exclude_ids=merge_participant_ids(events),
            index=index)
        anchors.extend((a.vehicle_id, a.anchor_t) for a in hw)
    seen = set()
    out = []
    for key in anchors:
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


def cmd_requests(args) -> int:
    dataset, _ = read_dataset_dir(args.dataset)
    config = _load_config(args.config)
    anchors = _request_anchors(dataset, config, args.scenario,
                               FrameIndex(dataset))
    if not anchors:
        log.warning("no events found; writing empty request file")
    skipped = write_prediction_requests(dataset, anchors, args.out, config)
    print(f"requests={len(anchors) - skipped} skipped={skipped} "
          f"config={config.digest()}")
    return 0


def _check_known_requests(pred_set, dataset) -> None:
    offenders = []
    for inst in pred_set.instances:
        track = dataset.tracks.get(inst.vehicle_id)
        if track is None or track.index_at(inst.anchor_t) is None:
            offenders.append(inst.request_id
                             or f"vehicle {inst.vehicle_id} "
                                f"t={inst.anchor_t:g}")
    if offenders:
        shown = ", ".join(offenders[:10])
        more = f" (+{len(offenders) - 10} more)" if len(offenders) > 10 else ""
        raise DataError(
            f"{pred_set.source}: predictions reference unknown requests: "
            f"{shown}{more}")


def cmd_evaluate(args) -> int:
    dataset, _ = read_dataset_dir(args.dataset)
    config = _load_config(args.config)
    n_threads = resolve_threads(args.threads)
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        pred_sets = list(pool.map(parse_predictions, args.predictions))
    digest = config.digest()
    for ps in pred_sets:
        if ps.config_digest and ps.config_digest != digest:
            raise ConfigError(
                f"config digest mismatch: predictions for source "
                f"{ps.source!r} were made against {ps.config_digest}, "
                f"evaluating with {digest}")
        _check_known_requests(ps, dataset)
    report = evaluate_behavior(dataset, pred_sets, config)
    inputs = {"dataset": _dataset_digest(args.dataset)}
    for path, ps in zip(args.predictions, pred_sets):
        with open(path, "r", encoding="utf-8") as fh:
            inputs[f"predictions:{ps.source}"] = digest_payload(fh.read())
    manifest = RunManifest(config=config, inputs=inputs,
                           extra={"site": report.site,
                                  "threads": n_threads})
    d = write_report(report, args.out, manifest)
    print(summarize(d))
    return 0


def _dataset_digest(path: str) -> str:
    manifest_path = os.path.join(path, "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            return json.load(fh).get("digest", "")
    return ""


def cmd_synth(args) -> int:
    params = SynthParams() if args.params is None \
        else parse_synth_params(args.params)
    os.makedirs(args.out, exist_ok=True)
    merge_ds, merge_labels = generate_merge_dataset(params)
    hw_ds, hw_labels = generate_highway_dataset(params)
    m1 = write_dataset_dir(merge_ds, os.path.join(args.out, "merge"),
                           extra_meta={"generator": "merge",
                                       "params": params.to_dict()})
    m2 = write_dataset_dir(hw_ds, os.path.join(args.out, "highway"),
                           extra_meta={"generator": "highway",
                                       "params": params.to_dict()})
    write_merge_labels(merge_labels,
                       os.path.join(args.out, "merge_labels.csv"))
    write_highway_labels(hw_labels,
                         os.path.join(args.out, "highway_labels.csv"))
    write_synth_params(params, os.path.join(args.out, "params.cfg"))
    print(f"merge: events={len(merge_labels)} digest={m1['digest']}")
    print(f"highway: pairs={len(hw_labels)} digest={m2['digest']}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except BBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
