"""Deterministic run artifacts: manifest, report JSON, plot-ready CSVs.

Every output file carries the manifest digest so a stray CSV can always be
traced back to the exact inputs and configuration that produced it. The
digest never covers wall-clock timestamps; two runs on identical inputs
agree digest for digest.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .core import AnalysisConfig, digest_payload
from .metrics import SOURCE_NATURALISTIC, BehaviorReport
from .stats import BinnedCurve

TOOL_NAME = "bbeval"
TOOL_VERSION = "0.1.0"

COURTESY_CELLS = ("conflict_courtesy", "conflict_no_courtesy",
                  "no_conflict_courtesy", "no_conflict_no_courtesy")


def _fmt(v: float) -> str:
    return repr(float(v))


def _edge(v: float):
    return float(v) if math.isfinite(v) else repr(float(v))


def _bin_label(lo: float, hi: float) -> str:
    def side(v):
        return f"{v:g}" if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    return f"({side(lo)},{side(hi)}]"


@dataclass
class RunManifest:
    """Config echo + input digests; the identity of one run."""

    config: AnalysisConfig
    inputs: dict[str, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    created_at: str = ""

    def __post_init__(self):
        if not self.created_at:
            self.created_at = datetime.now(timezone.utc).isoformat()

    def _payload(self) -> dict:
        return {
            "tool": TOOL_NAME,
            "version": TOOL_VERSION,
            "config": self.config.to_dict(),
            "inputs": dict(sorted(self.inputs.items())),
            "extra": self.extra,
        }

    @property
    def digest(self) -> str:
        return digest_payload(self._payload())

    def to_dict(self) -> dict:
        d = self._payload()
        d["digest"] = self.digest
        d["created_at"] = self.created_at
        return d


def curve_to_dict(curve: BinnedCurve) -> dict:
    return {
        "edges": [_edge(v) for v in curve.edges],
        "values": [None if m else float(v)
                   for v, m in zip(curve.values, curve.mask)],
        "counts": curve.counts.tolist(),
        "successes": curve.successes.tolist(),
        "n_dropped": int(curve.n_dropped),
    }


def report_to_dict(report: BehaviorReport, manifest: RunManifest) -> dict:
    sources = {}
    for tag in sorted(report.sources):
        sm = report.sources[tag]
        entry: dict = {"pass_first": {}, "courtesy": {}, "highway_lc": {}}
        for tau in sorted(sm.pass_first):
            res = sm.pass_first[tau]
            entry["pass_first"][f"{tau:g}"] = {
                **curve_to_dict(res.curve),
                "n_used": res.n_used,
                "n_undetermined": res.n_undetermined,
                "n_missing": res.n_missing,
            }
        for tau in sorted(sm.courtesy):
            res = sm.courtesy[tau]
            t = res.table
            entry["courtesy"][f"{tau:g}"] = {
                "table": dict(zip(COURTESY_CELLS, (t.a, t.b, t.c, t.d))),
                "p_value": res.p_value,
                "n_shoulder_exits": res.n_shoulder_exits,
                "n_missing": res.n_missing,
            }
        for tau in sorted(sm.highway_lc):
            res = sm.highway_lc[tau]
            entry["highway_lc"][f"{tau:g}"] = {
                **curve_to_dict(res.curve),
                "n_anchors": res.n_anchors,
                "n_changes": res.n_changes,
                "n_missing": res.n_missing,
            }
        if sm.rmse is not None:
            entry["rmse"] = {f"{h:g}": v for h, v in sorted(sm.rmse.items())}
            entry["rmse_n"] = sm.rmse_n
        if sm.safety is not None:
            entry["safety"] = sm.safety.as_rows(report.site)
        sources[tag] = entry
    r2 = {
        tag: {k: (None if isinstance(v, float) and math.isnan(v) else v)
              for k, v in sorted(entry.items())}
        for tag, entry in sorted(report.r2.items())
    }
    return {
        "manifest": manifest.to_dict(),
        "site": report.site,
        "n_events": report.n_events,
        "n_highway_anchors": report.n_highway_anchors,
        "sources": sources,
        "r2": r2,
        "notes": list(report.notes),
    }


def report_digest(report_dict: dict) -> str:
    """Digest of a report with volatile timestamp fields excluded."""
    d = json.loads(json.dumps(report_dict))
    d.get("manifest", {}).pop("created_at", None)
    return digest_payload(d)


def _write_csv(path: str, manifest_digest: str, header: list[str],
               rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# manifest={manifest_digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


_CURVE_HEADER = ["site", "source", "tau", "bin", "value", "count"]


def _curve_rows(report: BehaviorReport, section: str) -> list[list]:
    rows = []
    for tag in sorted(report.sources):
        results = getattr(report.sources[tag], section)
        for tau in sorted(results):
            curve = results[tau].curve
            for k in range(curve.values.size):
                label = _bin_label(curve.edges[k], curve.edges[k + 1])
                value = "" if curve.mask[k] else _fmt(curve.values[k])
                rows.append([report.site, tag, f"{tau:g}", label, value,
                             int(curve.counts[k])])
    return rows


def write_passfirst_csv(report: BehaviorReport, path: str,
                        manifest_digest: str) -> None:
    _write_csv(path, manifest_digest, _CURVE_HEADER,
               _curve_rows(report, "pass_first"))


def write_highwaylc_csv(report: BehaviorReport, path: str,
                        manifest_digest: str) -> None:
    _write_csv(path, manifest_digest, _CURVE_HEADER,
               _curve_rows(report, "highway_lc"))


def write_courtesy_csv(report: BehaviorReport, path: str,
                       manifest_digest: str) -> None:
    rows = []
    for tag in sorted(report.sources):
        courtesy = report.sources[tag].courtesy
        for tau in sorted(courtesy):
            res = courtesy[tau]
            t = res.table
            cells = dict(zip(COURTESY_CELLS, (t.a, t.b, t.c, t.d)))
            for name, count in cells.items():
                rows.append([report.site, tag, f"{tau:g}", name,
                             str(count), count])
            rows.append([report.site, tag, f"{tau:g}", "p_value",
                         _fmt(res.p_value), t.n])
            rows.append([report.site, tag, f"{tau:g}", "shoulder_exits",
                         str(res.n_shoulder_exits), res.n_shoulder_exits])
    _write_csv(path, manifest_digest, _CURVE_HEADER, rows)


def write_rmse_csv(report: BehaviorReport, path: str,
                   manifest_digest: str) -> None:
    rows = []
    for tag in sorted(report.sources):
        sm = report.sources[tag]
        if sm.rmse is None:
            continue
        for h in sorted(sm.rmse):
            rows.append([report.site, tag, f"{h:g}", "all",
                         _fmt(sm.rmse[h]), sm.rmse_n])
    _write_csv(path, manifest_digest, _CURVE_HEADER, rows)


def write_safety_csv(report: BehaviorReport, path: str,
                     manifest_digest: str) -> None:
    header = ["site", "source", "frame", "lane_change_status",
              "interactions", "unsafe", "pct", "zero_denominator"]
    rows = []
    for tag in sorted(report.sources):
        sm = report.sources[tag]
        if sm.safety is None:
            continue
        for r in sm.safety.as_rows(report.site):
            rows.append([r["site"], r["source"], r["frame"],
                         r["lane_change_status"], r["interactions"],
                         r["unsafe"], _fmt(r["pct"]),
                         int(r["zero_denominator"])])
    _write_csv(path, manifest_digest, header, rows)


REPORT_FILES = ("report.json", "fig6_passfirst.csv", "fig7_courtesy.csv",
                "fig8_highwaylc.csv", "table1_rmse.csv", "safety.csv")


def write_report(report: BehaviorReport, out_dir: str,
                 manifest: RunManifest) -> dict:
    """Write report.json plus the figure CSVs; returns the report dict."""
    os.makedirs(out_dir, exist_ok=True)
    d = report_to_dict(report, manifest)
    d["digest"] = report_digest(d)
    text = json.dumps(d, indent=2, sort_keys=True, allow_nan=False)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(text + "\n")
    md = manifest.digest
    write_passfirst_csv(report, os.path.join(out_dir, "fig6_passfirst.csv"), md)
    write_courtesy_csv(report, os.path.join(out_dir, "fig7_courtesy.csv"), md)
    write_highwaylc_csv(report, os.path.join(out_dir, "fig8_highwaylc.csv"), md)
    write_rmse_csv(report, os.path.join(out_dir, "table1_rmse.csv"), md)
    write_safety_csv(report, os.path.join(out_dir, "safety.csv"), md)
    return d


def summarize(report_dict: dict) -> str:
    """One stdout line per source: headline numbers only."""
    lines = [f"site={report_dict['site']} events={report_dict['n_events']} "
             f"highway_anchors={report_dict['n_highway_anchors']} "
             f"digest={report_dict['digest']}"]
    for tag in sorted(report_dict["sources"]):
        entry = report_dict["sources"][tag]
        bits = [tag]
        courtesy = entry.get("courtesy", {})
        if courtesy:
            tau = max(courtesy, key=float)
            bits.append(f"courtesy_p[tau={tau}]="
                        f"{courtesy[tau]['p_value']:.4g}")
        rmse = entry.get("rmse")
        if rmse:
            tau = max(rmse, key=float)
            bits.append(f"rmse[{tau}s]={rmse[tau]:.4g}m")
        if tag != SOURCE_NATURALISTIC:
            r2 = report_dict["r2"].get(tag, {})
            vals = [v for v in r2.values() if v is not None]
            if vals:
                bits.append(f"min_r2={min(vals):.6g}")
        lines.append("  ".join(bits))
    return "\n".join(lines)
