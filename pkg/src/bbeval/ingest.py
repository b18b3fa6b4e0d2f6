"""NGSIM-schema parsing, resampling, splitting, and the wire formats.

All text formats are line-oriented CSV with a versioned first line. Floats
are written with repr() so that write -> read round-trips bit exactly.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .core import (
    HISTORY_SAMPLES,
    TIME_ATOL,
    UNKNOWN_LANE,
    AnalysisConfig,
    ConfigError,
    DataError,
    Dataset,
    LaneRole,
    PredictionInstance,
    PredictionMode,
    PredictionSet,
    SiteProfile,
    VehicleClass,
    VehicleTrack,
    digest_payload,
)
from .events import history_ok, history_samples, model_stride

log = logging.getLogger(__name__)

FEET_TO_M = 0.3048

REQUIRED_NGSIM = {
    "vehicle_id": "Vehicle_ID", "frame_id": "Frame_ID",
    "global_time": "Global_Time", "local_x": "Local_X",
    "local_y": "Local_Y", "global_x": "Global_X", "global_y": "Global_Y",
    "v_length": "v_Length", "v_width": "v_Width", "v_class": "v_Class",
    "v_vel": "v_Vel", "lane_id": "Lane_ID",
}

DATA_MAGIC = "bb-data v1"
REQ_MAGIC = "bb-req v1"
PRED_MAGIC = "bb-pred v1"
SITE_MAGIC = "bb-site v1"
CONFIG_MAGIC = "bb-config v1"


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# NGSIM CSV
# ---------------------------------------------------------------------------

def parse_ngsim_csv(path: str, site: SiteProfile) -> Dataset:
    """Parse one NGSIM trajectory CSV into a Dataset at the raw rate.

    Positions and dimensions are converted to meters when the site says the
    file is in feet; Global_Time is converted from ms to seconds and rebased
    so the recording starts at t=0.
    """
    df = pd.read_csv(path, low_memory=False)
    colmap = {c.lower(): c for c in df.columns}
    missing = [c for c in REQUIRED_NGSIM if c not in colmap]
    if missing:
        raise DataError(f"missing column {REQUIRED_NGSIM[missing[0]]}")
    for name in REQUIRED_NGSIM:
        col = df[colmap[name]]
        if col.dtype == object:
            num = pd.to_numeric(col, errors="coerce")
            bad = num.isna() & col.notna()
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise DataError(
                    f"non-numeric value {col.iloc[row]!r} in column "
                    f"{colmap[name]}, row {row + 2}"
                )
            df[colmap[name]] = num
        if df[colmap[name]].isna().any():
            row = int(np.flatnonzero(df[colmap[name]].isna().to_numpy())[0])
            raise DataError(
                f"non-numeric value in column {colmap[name]}, row {row + 2}"
            )

    scale = FEET_TO_M if site.raw_unit == "feet" else 1.0
    vid = df[colmap["vehicle_id"]].to_numpy(dtype=np.int64)
    gt = df[colmap["global_time"]].to_numpy(dtype=np.float64)
    t = (gt - gt.min()) / 1000.0
    x = df[colmap["local_x"]].to_numpy(dtype=np.float64) * scale
    y = df[colmap["local_y"]].to_numpy(dtype=np.float64) * scale
    gx = df[colmap["global_x"]].to_numpy(dtype=np.float64) * scale
    gy = df[colmap["global_y"]].to_numpy(dtype=np.float64) * scale
    lane = df[colmap["lane_id"]].to_numpy(dtype=np.int64)
    length = df[colmap["v_length"]].to_numpy(dtype=np.float64) * scale
    width = df[colmap["v_width"]].to_numpy(dtype=np.float64) * scale
    vclass = df[colmap["v_class"]].to_numpy(dtype=np.int64)

    order = np.lexsort((t, vid))
    tracks: dict[int, VehicleTrack] = {}
    boundaries = np.flatnonzero(np.diff(vid[order]) != 0) + 1
    dts = []
    for chunk in np.split(order, boundaries):
        v = int(vid[chunk[0]])
        tt = t[chunk]
        dup = np.flatnonzero(np.diff(tt) <= TIME_ATOL)
        if dup.size:
            raise DataError(
                f"duplicate (vehicle, time) sample: vehicle {v} at "
                f"t={tt[dup[0]]:g}"
            )
        tracks[v] = VehicleTrack(
            vehicle_id=v, vclass=VehicleClass(int(vclass[chunk[0]])),
            length=float(length[chunk[0]]), width=float(width[chunk[0]]),
            t=tt, x=x[chunk], y=y[chunk], lane_ids=lane[chunk],
            gx=gx[chunk], gy=gy[chunk],
        )
        if len(chunk) > 1:
            dts.append(np.median(np.diff(tt)))
    if not tracks:
        raise DataError(f"no vehicle rows in {path}")
    hz = 1.0 / float(np.median(dts)) if dts else 10.0
    return Dataset(site=site, tracks=tracks, sample_hz=round(hz, 6))


# ---------------------------------------------------------------------------
# resampling and splitting
# ---------------------------------------------------------------------------

def resample(dataset: Dataset, target_hz: float) -> Dataset:
    """Pure decimation; the first retained sample is each track's first."""
    ratio = dataset.sample_hz / target_hz
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise DataError(
            f"non-integer decimation: {dataset.sample_hz:g} Hz to "
            f"{target_hz:g} Hz"
        )
    k = int(round(ratio))
    if k == 1:
        return dataset
    tracks = {}
    for vid, tr in dataset.tracks.items():
        tracks[vid] = VehicleTrack(
            vehicle_id=tr.vehicle_id, vclass=tr.vclass, length=tr.length,
            width=tr.width, t=tr.t[::k], x=tr.x[::k], y=tr.y[::k],
            lane_ids=tr.lane_ids[::k],
            gx=tr.gx[::k] if tr.gx is not None else None,
            gy=tr.gy[::k] if tr.gy is not None else None,
        )
    return Dataset(site=dataset.site, tracks=tracks, sample_hz=target_hz)


@dataclass(frozen=True)
class SplitAssignment:
    """Temporal partition of a recording into train/validation/test.

    Samples strictly before ``cuts[0]`` are train, before ``cuts[1]``
    validation, the rest test. Tracks spanning a cut are truncated at it.
    """

    cuts: tuple[float, float]
    ratios: tuple[float, float, float]
    seed: int

    def split_of(self, t: float) -> str:
        if t < self.cuts[0]:
            return "train"
        if t < self.cuts[1]:
            return "validation"
        return "test"


def split_dataset(dataset: Dataset, ratios=(0.7, 0.1, 0.2),
                  seed: int = 0) -> SplitAssignment:
    """Contiguous temporal split by cumulative sample count.

    The convention is temporal, so the seed does not influence the result;
    it is recorded for provenance only.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("ratios must sum to 1")
    times = np.concatenate([tr.t for tr in dataset.ordered_tracks()])
    if times.size == 0:
        raise DataError("cannot split an empty dataset")
    uniq, counts = np.unique(times, return_counts=True)
    cum = np.cumsum(counts)
    n = cum[-1]

    def cut_after(fraction: float) -> float:
        # first frame boundary at or past the requested share
        i = int(np.searchsorted(cum, fraction * n))
        if i + 1 < uniq.size:
            return float((uniq[i] + uniq[i + 1]) / 2.0)
        return float(uniq[-1]) + 1.0

    c1 = cut_after(ratios[0])
    c2 = cut_after(ratios[0] + ratios[1])
    return SplitAssignment(cuts=(c1, c2), ratios=ratios, seed=int(seed))


def apply_split(dataset: Dataset, assignment: SplitAssignment,
                which: str) -> Dataset:
    """Dataset restricted to one split; spanning tracks are truncated."""
    if which not in ("train", "validation", "test"):
        raise ConfigError(f"unknown split {which!r}")
    lo = {"train": -math.inf, "validation": assignment.cuts[0],
          "test": assignment.cuts[1]}[which]
    hi = {"train": assignment.cuts[0], "validation": assignment.cuts[1],
          "test": math.inf}[which]
    tracks = {}
    for vid, tr in dataset.tracks.items():
        keep = (tr.t >= lo) & (tr.t < hi)
        if not keep.any():
            continue
        tracks[vid] = VehicleTrack(
            vehicle_id=vid, vclass=tr.vclass, length=tr.length,
            width=tr.width, t=tr.t[keep], x=tr.x[keep], y=tr.y[keep],
            lane_ids=tr.lane_ids[keep],
            gx=tr.gx[keep] if tr.gx is not None else None,
            gy=tr.gy[keep] if tr.gy is not None else None,
        )
    return Dataset(site=dataset.site, tracks=tracks,
                   sample_hz=dataset.sample_hz)


# ---------------------------------------------------------------------------
# site profile and analysis config files
# ---------------------------------------------------------------------------

def _read_kv(path: str, magic: str) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != magic:
            raise DataError(f"{path}: expected header {magic!r}, got {first!r}")
        out = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key = value")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
        return out


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip() != "")


def write_site_cfg(site: SiteProfile, path: str) -> None:
    lines = [SITE_MAGIC,
             f"site_id = {site.site_id}",
             f"raw_unit = {site.raw_unit}",
             "lane_boundaries = " + ",".join(_fmt(b) for b in site.lane_boundaries),
             "lane_ids = " + ",".join(str(i) for i in site.lane_ids),
             "lane_order = " + ",".join(str(i) for i in site.lane_order)]
    for lane in site.lane_ids:
        lines.append(f"role.{lane} = {site.lane_roles[lane].value}")
    if site.merge_zone is not None:
        lines.append("merge_zone = " + ",".join(_fmt(v) for v in site.merge_zone))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_site_cfg(path: str) -> SiteProfile:
    kv = _read_kv(path, SITE_MAGIC)
    try:
        lane_ids = _ints(kv["lane_ids"])
        roles = {}
        for lane in lane_ids:
            roles[lane] = LaneRole(kv[f"role.{lane}"])
        return SiteProfile(
            site_id=kv["site_id"], raw_unit=kv["raw_unit"],
            lane_boundaries=np.array(_floats(kv["lane_boundaries"])),
            lane_ids=lane_ids, lane_roles=roles,
            lane_order=_ints(kv["lane_order"]),
            merge_zone=(_floats(kv["merge_zone"])
                        if "merge_zone" in kv else None),
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing site key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


_CONFIG_TUPLES = {"lookbacks", "ttc_bin_edges", "lead_bin_range",
                  "rmse_horizons"}
_CONFIG_INTS = {"min_count"}


def write_config_file(config: AnalysisConfig, path: str) -> None:
    lines = [CONFIG_MAGIC]
    for key, val in config.to_dict().items():
        if isinstance(val, (list, tuple)):
            lines.append(f"{key} = " + ",".join(str(v) for v in val))
        else:
            lines.append(f"{key} = {val}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_config_file(path: str) -> AnalysisConfig:
    kv = _read_kv(path, CONFIG_MAGIC)
    d: dict = {}
    for key, val in kv.items():
        try:
            if key in _CONFIG_TUPLES:
                d[key] = _floats(val)
            elif key in _CONFIG_INTS:
                d[key] = int(val)
            else:
                d[key] = float(val)
        except ValueError as exc:
            raise DataError(f"{path}: bad value for {key}: {exc}") from exc
    try:
        return AnalysisConfig.from_dict(d)
    except (TypeError, ConfigError) as exc:
        raise DataError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# dataset directory
# ---------------------------------------------------------------------------

def write_dataset_dir(dataset: Dataset, out_dir: str,
                      split: SplitAssignment | None = None,
                      extra_meta: dict | None = None) -> dict:
    """Write dataset.csv + site.cfg (+ split.csv) + manifest.json.

    Returns the manifest. The manifest digest covers file contents and
    metadata but not the creation timestamp, so reruns on identical inputs
    are byte-identical apart from that field.
    """
    os.makedirs(out_dir, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"{DATA_MAGIC},site={dataset.site.site_id},"
              f"hz={_fmt(dataset.sample_hz)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["vehicle_id", "vclass", "length", "width", "t", "x", "y",
                "lane_id", "gx", "gy"])
    for tr in dataset.ordered_tracks():
        has_g = tr.has_global
        meta = [str(tr.vehicle_id), str(int(tr.vclass)), _fmt(tr.length),
                _fmt(tr.width)]
        for i in range(len(tr)):
            w.writerow(meta + [
                _fmt(tr.t[i]), _fmt(tr.x[i]), _fmt(tr.y[i]),
                str(int(tr.lane_ids[i])),
                _fmt(tr.gx[i]) if has_g else "",
                _fmt(tr.gy[i]) if has_g else "",
            ])
    data_text = buf.getvalue()
    with open(os.path.join(out_dir, "dataset.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(data_text)
    write_site_cfg(dataset.site, os.path.join(out_dir, "site.cfg"))
    files = {"dataset.csv": digest_payload(data_text)}
    with open(os.path.join(out_dir, "site.cfg"), "r", encoding="utf-8") as fh:
        files["site.cfg"] = digest_payload(fh.read())
    if split is not None:
        split_text = "\n".join([
            "boundary,value",
            f"train_validation,{_fmt(split.cuts[0])}",
            f"validation_test,{_fmt(split.cuts[1])}",
            f"ratios,{'|'.join(_fmt(r) for r in split.ratios)}",
            f"seed,{split.seed}",
        ]) + "\n"
        with open(os.path.join(out_dir, "split.csv"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(split_text)
        files["split.csv"] = digest_payload(split_text)
    meta = {
        "kind": "dataset",
        "site": dataset.site.site_id,
        "sample_hz": dataset.sample_hz,
        "n_tracks": len(dataset.tracks),
        "n_samples": dataset.n_samples,
        "files": files,
    }
    if extra_meta:
        meta.update(extra_meta)
    manifest = dict(meta)
    manifest["digest"] = digest_payload(meta)
    manifest["created_at"] = pd.Timestamp.utcnow().isoformat()
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_dataset_dir(path: str) -> tuple[Dataset, SplitAssignment | None]:
    data_path = os.path.join(path, "dataset.csv")
    site = parse_site_cfg(os.path.join(path, "site.cfg"))
    with open(data_path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        fields = first.split(",")
        if not fields or fields[0] != DATA_MAGIC:
            raise DataError(f"{data_path}: expected {DATA_MAGIC!r} header")
        header = dict(f.split("=", 1) for f in fields[1:] if "=" in f)
        hz = float(header.get("hz", "10.0"))
        reader = csv.reader(fh)
        cols = next(reader, None)
        if cols is None:
            raise DataError(f"{data_path}: missing column header")
        rows = list(reader)
    tracks: dict[int, VehicleTrack] = {}
    by_vehicle: dict[int, list] = {}
    for row in rows:
        by_vehicle.setdefault(int(row[0]), []).append(row)
    for vid, vrows in by_vehicle.items():
        has_g = vrows[0][8] != ""
        tracks[vid] = VehicleTrack(
            vehicle_id=vid, vclass=VehicleClass(int(vrows[0][1])),
            length=float(vrows[0][2]), width=float(vrows[0][3]),
            t=[float(r[4]) for r in vrows],
            x=[float(r[5]) for r in vrows],
            y=[float(r[6]) for r in vrows],
            lane_ids=[int(r[7]) for r in vrows],
            gx=[float(r[8]) for r in vrows] if has_g else None,
            gy=[float(r[9]) for r in vrows] if has_g else None,
        )
    dataset = Dataset(site=site, tracks=tracks, sample_hz=hz)
    split = None
    split_path = os.path.join(path, "split.csv")
    if os.path.exists(split_path):
        with open(split_path, "r", encoding="utf-8") as fh:
            kv = dict(line.strip().split(",", 1)
                      for line in fh if "," in line)
        split = SplitAssignment(
            cuts=(float(kv["train_validation"]), float(kv["validation_test"])),
            ratios=tuple(float(v) for v in kv["ratios"].split("|")),
            seed=int(kv["seed"]),
        )
    return dataset, split


# ---------------------------------------------------------------------------
# prediction requests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Request:
    request_id: str
    ego_id: int
    anchor_t: float
    ego_history: np.ndarray          # (n, 3) columns t, x, y
    neighbors: dict[int, np.ndarray]


def request_id_for(dataset: Dataset, ego_id: int, anchor_t: float) -> str:
    key = int(round(anchor_t * dataset.sample_hz))
    return f"q{ego_id}-{key}"


def _history_matrix(track: VehicleTrack, anchor_t: float) -> np.ndarray:
    idx = history_samples(track, anchor_t)
    return np.column_stack([track.t[idx], track.x[idx], track.y[idx]])


def build_request(dataset: Dataset, ego_id: int, anchor_t: float,
                  config: AnalysisConfig) -> Request | None:
    """None when the ego lacks the 8-sample history at the anchor."""
    ego = dataset.tracks.get(ego_id)
    if ego is None:
        raise DataError(f"unknown vehicle {ego_id}")
    if not history_ok(ego, anchor_t):
        return None
    i0 = ego.index_at(anchor_t)
    ex, ey = float(ego.x[i0]), float(ego.y[i0])
    neighbors = {}
    for vid in sorted(dataset.tracks):
        if vid == ego_id:
            continue
        tr = dataset.tracks[vid]
        j = tr.index_at(anchor_t)
        if j is None:
            continue
        if math.hypot(float(tr.x[j]) - ex, float(tr.y[j]) - ey) > \
                config.neighbor_radius:
            continue
        # neighbors may carry a shorter history; take what the lattice has
        stride = model_stride(tr.dt) if len(tr) > 1 else 1
        idx = np.arange(j - stride * (HISTORY_SAMPLES - 1), j + 1, stride)
        idx = idx[idx >= 0]
        neighbors[vid] = np.column_stack([tr.t[idx], tr.x[idx], tr.y[idx]])
    return Request(
        request_id=request_id_for(dataset, ego_id, anchor_t),
        ego_id=ego_id, anchor_t=float(anchor_t),
        ego_history=_history_matrix(ego, anchor_t), neighbors=neighbors,
    )


def write_prediction_requests(dataset: Dataset,
                              anchors: list[tuple[int, float]],
                              path: str, config: AnalysisConfig) -> int:
    """Write a bb-req v1 file; returns the number of skipped anchors."""
    skipped = 0
    seen: set[str] = set()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{REQ_MAGIC},config={config.digest()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["request_id", "ego_id", "anchor_t", "role",
                    "neighbor_id", "t", "x", "y"])
        for ego_id, anchor_t in anchors:
            req = build_request(dataset, ego_id, anchor_t, config)
            if req is None:
                skipped += 1
                log.warning("anchor (%s, %s) skipped: insufficient history",
                            ego_id, anchor_t)
                continue
            if req.request_id in seen:
                continue
            seen.add(req.request_id)
            base = [req.request_id, str(req.ego_id), _fmt(req.anchor_t)]
            for t, x, y in req.ego_history:
                w.writerow(base + ["ego", "", _fmt(t), _fmt(x), _fmt(y)])
            for vid in sorted(req.neighbors):
                for t, x, y in req.neighbors[vid]:
                    w.writerow(base + ["neighbor", str(vid), _fmt(t),
                                       _fmt(x), _fmt(y)])
    return skipped


def read_prediction_requests(path: str) -> tuple[list[Request], str]:
    """Parse a bb-req file; returns (requests, config digest)."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        fields = first.split(",")
        if not fields or fields[0] != REQ_MAGIC:
            raise DataError(f"{path}: expected {REQ_MAGIC!r} header")
        header = dict(f.split("=", 1) for f in fields[1:] if "=" in f)
        reader = csv.reader(fh)
        cols = next(reader, None)
        groups: dict[str, dict] = {}
        order: list[str] = []
        for row in reader:
            rid, ego_id, anchor_t, role, nid, t, x, y = row
            if rid not in groups:
                groups[rid] = {"ego_id": int(ego_id),
                               "anchor_t": float(anchor_t),
                               "ego": [], "neighbors": {}}
                order.append(rid)
            g = groups[rid]
            sample = (float(t), float(x), float(y))
            if role == "ego":
                g["ego"].append(sample)
            elif role == "neighbor":
                g["neighbors"].setdefault(int(nid), []).append(sample)
            else:
                raise DataError(f"{path}: unknown role {role!r}")
    out = []
    for rid in order:
        g = groups[rid]
        out.append(Request(
            request_id=rid, ego_id=g["ego_id"], anchor_t=g["anchor_t"],
            ego_history=np.array(g["ego"], dtype=np.float64),
            neighbors={k: np.array(v, dtype=np.float64)
                       for k, v in g["neighbors"].items()},
        ))
    return out, header.get("config", "")


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------

def write_predictions(instances: list[PredictionInstance], path: str,
                      source: str, frame: str = "local",
                      config_digest: str = "",
                      request_ids: dict | None = None) -> None:
    """Write a bb-pred v1 file (used by tests and the bundled baseline)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{PRED_MAGIC},frame={frame},source={source}"
                 + (f",config={config_digest}" if config_digest else "")
                 + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["request_id", "ego_id", "anchor_t", "mode_index",
                    "mode_prob", "step", "x", "y"])
        for inst in instances:
            rid = inst.request_id or ""
            if request_ids and not rid:
                rid = request_ids.get((inst.vehicle_id, inst.anchor_t), "")
            for m, mode in enumerate(inst.modes):
                for s in range(mode.points.shape[0]):
                    w.writerow([rid, str(inst.vehicle_id), _fmt(inst.anchor_t),
                                str(m), _fmt(mode.probability), str(s + 1),
                                _fmt(mode.points[s, 0]),
                                _fmt(mode.points[s, 1])])


def parse_predictions(path: str, dataset: Dataset | None = None
                      ) -> PredictionSet:
    """Parse a bb-pred v1 file into a PredictionSet.

    When a dataset is supplied, instances naming vehicles absent from it are
    rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        fields = first.split(",")
        if not fields or fields[0] != PRED_MAGIC:
            raise DataError(f"{path}: expected {PRED_MAGIC!r} header")
        header = dict(f.split("=", 1) for f in fields[1:] if "=" in f)
        frame = header.get("frame", "local")
        source = header.get("source", os.path.basename(path))
        reader = csv.reader(fh)
        next(reader, None)
        rows = list(reader)
    groups: dict[tuple[int, float], dict] = {}
    order: list[tuple[int, float]] = []
    for row in rows:
        rid, ego_id, anchor_t, mode_index, mode_prob, step, x, y = row
        ego = int(ego_id)
        if dataset is not None and ego not in dataset.tracks:
            raise DataError(f"{path}: unknown vehicle_id {ego}")
        prob = float(mode_prob)
        if prob < 0:
            raise DataError(f"{path}: probability < 0 for vehicle {ego}")
        key = (ego, float(anchor_t))
        if key not in groups:
            groups[key] = {"rid": rid, "modes": {}}
            order.append(key)
        mode = groups[key]["modes"].setdefault(
            int(mode_index), {"prob": prob, "steps": {}})
        mode["steps"][int(step)] = (float(x), float(y))
    instances = []
    for key in order:
        g = groups[key]
        modes = []
        for m in sorted(g["modes"]):
            steps = g["modes"][m]["steps"]
            if sorted(steps) != list(range(1, 13)):
                raise DataError(
                    f"{path}: horizon mismatch for vehicle {key[0]} at "
                    f"t={key[1]:g} mode {m}: got {len(steps)} steps"
                )
            pts = np.array([steps[s] for s in range(1, 13)], dtype=np.float64)
            modes.append(PredictionMode(
                probability=g["modes"][m]["prob"], points=pts))
        instances.append(PredictionInstance(
            vehicle_id=key[0], anchor_t=key[1], modes=tuple(modes),
            request_id=g["rid"] or None))
    return PredictionSet(source=source, frame=frame,
                         instances=tuple(instances),
                         config_digest=header.get("config", ""))


# ---------------------------------------------------------------------------
# reference site profiles for the public NGSIM highway recordings
# ---------------------------------------------------------------------------

def ngsim_us101_site() -> SiteProfile:
    """US-101 (Hollywood Freeway): five mainline lanes, an auxiliary lane
    between the Ventura on-ramp and the Cahuenga off-ramp, and the two ramps.

    Boundaries are nominal 12 ft lanes; recorded lane ids take precedence, so
    the geometry only acts as a fallback for unlabeled samples.
    """
    w = 12.0 * FEET_TO_M
    return SiteProfile(
        site_id="us101",
        raw_unit="feet",
        lane_boundaries=np.arange(9) * w,
        lane_ids=(1, 2, 3, 4, 5, 6, 7, 8),
        lane_roles={
            1: LaneRole.MAINLINE,
            2: LaneRole.MAINLINE,
            3: LaneRole.MAINLINE,
            4: LaneRole.MAINLINE,
            5: LaneRole.OUTERMOST_MAINLINE,
            6: LaneRole.AUXILIARY,
            7: LaneRole.ONRAMP,
            8: LaneRole.OFFRAMP,
        },
        lane_order=(1, 2, 3, 4, 5),
    )


def ngsim_i80_site() -> SiteProfile:
    """I-80 (Emeryville): six mainline lanes and the Powell Street on-ramp.

    Lane 1 is the HOV lane. Boundaries are nominal 12 ft lanes; recorded lane
    ids take precedence as for the US-101 profile.
    """
    w = 12.0 * FEET_TO_M
    return SiteProfile(
        site_id="i80",
        raw_unit="feet",
        lane_boundaries=np.arange(8) * w,
        lane_ids=(1, 2, 3, 4, 5, 6, 7),
        lane_roles={
            1: LaneRole.MAINLINE,
            2: LaneRole.MAINLINE,
            3: LaneRole.MAINLINE,
            4: LaneRole.MAINLINE,
            5: LaneRole.MAINLINE,
            6: LaneRole.OUTERMOST_MAINLINE,
            7: LaneRole.ONRAMP,
        },
        lane_order=(1, 2, 3, 4, 5, 6),
    )
