"""Run directories: manifest, trajectories, set estimates and CSV reports.

Everything except the manifest timestamps is a pure function of the
config and seed, so two runs of the same campaign produce byte-identical
trajectory, set and report files.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import shutil
from pathlib import Path

from .errors import InvalidRunDir
from .metrics import CalibrationRecord, coverage, summarize
from .space import space_from_dict

RUN_SCHEMA = "pacreach.run/1"
MANIFEST = "manifest.json"
TRAJECTORIES = "trajectories.jsonl"
SETS = "sets.json"
REACH_DIR = "reach"
REPORT_DIR = "reports"

FINAL_STATUSES = ("ok", "invalid", "failed")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def tool_version() -> str:
    from . import __version__

    return __version__


class RunDir:
    def __init__(self, path, force: bool = False):
        self.path = Path(path)
        if self.path.exists() and any(self.path.iterdir()):
            if not (self.path / MANIFEST).exists():
                raise InvalidRunDir(f"{self.path} is not empty and is not a run directory")
            if not force:
                raise InvalidRunDir(f"{self.path} already holds a run; pass --force to overwrite it")
            shutil.rmtree(self.path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = {}

    def write_text(self, rel: str, text: str):
        p = self.path / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")

    def write_json(self, rel: str, obj):
        self.write_text(rel, dumps(obj))

    def start(self, command: str, config: dict, plan: dict, space: dict, guarantees: list):
        self.manifest = {
            "schema": RUN_SCHEMA,
            "command": command,
            "tool_version": tool_version(),
            "config": config,
            "space": space,
            "plan": plan,
            "guarantees": guarantees,
            "started": _now(),
            "finished": None,
            "status": "running",
        }
        self.write_json(MANIFEST, self.manifest)

    def finish(self, status: str, **extra):
        assert status in FINAL_STATUSES
        self.manifest.update(extra)
        self.manifest["status"] = status
        self.manifest["finished"] = _now()
        self.write_json(MANIFEST, self.manifest)

    def write_trajectories(self, records):
        """``records`` is an iterable of (state_index, traj_index, Trajectory)."""
        buf = io.StringIO()
        for i, j, tr in records:
            d = tr.to_dict()
            d["state"] = i
            d["index"] = j
            buf.write(json.dumps(d, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n")
        self.write_text(TRAJECTORIES, buf.getvalue())


def state_file(i: int) -> str:
    return f"{REACH_DIR}/state_{i:03d}.json"


def _labelled(space, bins) -> list:
    return [{"bin": b, "cell": space.describe_bin(b)} for b in sorted(bins)]


def reach_record(estimate, index: int) -> dict:
    from .systems import _jsonable

    d = estimate.to_dict()
    d["state"] = index
    d["x0"] = _jsonable(estimate.x0)
    for t, turn in enumerate(d["turns"]):
        turn["cells"] = [c["cell"] for c in _labelled(estimate.space, estimate.bins[t])]
    return d


def sets_record(kind: str, space, bins_per_turn, guarantees, per_state_files) -> dict:
    return {
        "kind": kind,
        "n_bins": space.n_bins,
        "turns": [
            {"turn": t + 1, "bins": sorted(b), "cells": [space.describe_bin(x) for x in sorted(b)]}
            for t, b in enumerate(bins_per_turn)
        ],
        "guarantees": guarantees,
        "per_state": per_state_files,
    }


# ---------------------------------------------------------------------------
# reports


def load_run(path):
    path = Path(path)
    mf = path / MANIFEST
    if not mf.exists():
        raise InvalidRunDir(f"{path} has no {MANIFEST}")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidRunDir(f"{mf} is not valid JSON: {exc}") from None
    if manifest.get("schema") != RUN_SCHEMA:
        raise InvalidRunDir(f"{mf} has schema {manifest.get('schema')!r}, expected {RUN_SCHEMA!r}")
    if manifest.get("status") != "ok":
        raise InvalidRunDir(f"run in {path} is not finalized successfully (status={manifest.get('status')!r})")
    return manifest


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else v for v in r])
    return buf.getvalue()


def _scalar(v):
    if isinstance(v, list) and len(v) == 1:
        return v[0]
    if isinstance(v, list):
        return " ".join(str(x) for x in v)
    return v


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def build_report(path) -> dict:
    """Regenerate all report tables from persisted artifacts; returns {filename: text}."""
    path = Path(path)
    manifest = load_run(path)
    space = space_from_dict(manifest["space"])
    out = {}

    sets_path = path / SETS
    if sets_path.exists():
        sets = json.loads(sets_path.read_text())
        per_state = [json.loads((path / f).read_text()) for f in sets["per_state"]]
        rows = []
        cov = []
        for turn in sets["turns"]:
            t = turn["turn"]
            in_set = set(turn["bins"])
            reaching = [set(s["turns"][t - 1]["bins"]) for s in per_state]
            for b in range(space.n_bins):
                n = sum(b in r for r in reaching)
                rows.append((t, b, space.describe_bin(b), int(b in in_set), n, len(reaching)))
            cov.append((t, len(in_set), space.n_bins, coverage(in_set, space)))
        out["controllable_sets.csv"] = _csv(rows, ["turn", "bin", "cell", "in_set", "states_reaching", "n_states"])
        out["coverage.csv"] = _csv(cov, ["turn", "bins_in_set", "n_bins", "coverage"])

    traj_path = path / TRAJECTORIES
    if traj_path.exists():
        scatter = []
        by_state = {}
        for line in traj_path.read_text().splitlines():
            tr = json.loads(line)
            u0 = _scalar(tr["inputs"][0])
            for t, y in enumerate(tr["measurements"], start=1):
                y = _scalar(y)
                tie = _is_number(u0) and _is_number(y) and float(u0) == float(y)
                scatter.append((tr["state"], tr["index"], t, u0, y, int(tie)))
            rec = by_state.setdefault(tr["state"], {"x0": tr["x0"], "u": [], "y": []})
            rec["u"].append(u0)
            rec["y"].append(_scalar(tr["measurements"][-1]))
        out["scatter.csv"] = _csv(scatter, ["state", "trajectory", "turn", "u0", "y", "tie"])

        metric_rows = []
        per_metric = {}
        for i in sorted(by_state):
            rec = by_state[i]
            x0 = rec["x0"] if not isinstance(rec["x0"], (list, dict)) else json.dumps(rec["x0"])
            if all(_is_number(v) for v in rec["u"] + rec["y"]):
                cal = CalibrationRecord(rec["x0"], rec["u"], rec["y"])
                metrics = cal.as_rows()
            else:
                hits = sum(str(a) == str(b) for a, b in zip(rec["u"], rec["y"]))
                metrics = [("accuracy", hits / len(rec["u"]))]
            for name, value in metrics:
                metric_rows.append((i, x0, name, value))
                per_metric.setdefault(name, []).append(value)
        out["metrics.csv"] = _csv(metric_rows, ["state", "x0", "metric", "value"])
        summary = []
        for name in sorted(per_metric):
            s = summarize(per_metric[name])
            summary.append((name, s["n"], len(per_metric[name]) - s["n"], s["q1"], s["median"], s["q3"]))
        out["metrics_summary.csv"] = _csv(summary, ["metric", "n", "n_unavailable", "q1", "median", "q3"])
    return out


def write_report(path) -> list:
    path = Path(path)
    tables = build_report(path)
    rdir = path / REPORT_DIR
    rdir.mkdir(exist_ok=True)
    written = []
    for name in sorted(tables):
        (rdir / name).write_text(tables[name], encoding="utf-8")
        written.append(rdir / name)
    return written
