"""Command-line pipeline: stages from raw logs to the analyst report.

Each subcommand materializes one stage's artifacts under the output
directory; ``pipeline`` runs them all in order.  Artifacts are written
atomically, every randomized stage takes an explicit seed (with fixed,
documented defaults), and a machine-readable manifest of input/output
hashes, seeds and versions is written per run.

Exit codes: 0 success, 2 missing input, 3 validation failure, 1 internal.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import namedtuple
from dataclasses import dataclass, field, fields
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text, read_csv_rows, require, rows_to_csv, sha256_file
from .cluster import (ClusteringConfig, cvi_report, kmedoids_l1)
from .errors import MissingInputError, ParseError, TraceLearnError, ValidationError
from .ingest import (CourseCalendar, EventCodeRegistry, default_rule_table,
                     ingest_lines, read_trace_log, rules_from_json, write_trace_log)
from .profiles import (build_profiles, cluster_profiles, grades_from_csv,
                       opinions_from_csv, profiles_to_csv, themes_from_csv)
from .report import check_links, emit_report, svg_dendrogram
from .risk import (CoursePlan, RiskModel, explain, feature_table, predict_week,
                   submissions_from_csv, train, FEATURE_NAMES)
from .sessions import sessionize, sessions_to_csv, vectors_to_csv
from .stats import compare_cluster, comparisons_to_csv, encode_opinion, format_bm
from .strategies import (assignments_to_csv, build_weekly_strategies,
                         cluster_strategy_types, fomm_dot, heuristic_net,
                         heuristic_net_dot)
from .synth import ArchetypeSpec, generate, write_cohort
from .tactics import detect_tactics, tactic_report_csv, tactic_report_html

_SessionStub = namedtuple("_SessionStub", ["student", "week_index", "start", "session_id"])


@dataclass
class PipelineConfig:
    """Stage knobs; defaults are the method's shipped constants."""

    out_dir: Path = Path("out")
    gap_cutoff_minutes: float = 25.0
    k_sessions: int = 12
    k_low: int = 3
    k_high: int = 9
    k_profiles: int = 5
    risk_threshold: float = 0.5
    seed: int = 7
    synth_seed: int = 42
    history_seed: int = 1042
    feature_mode: str = "transitions"
    kmedoids_restarts: int = 5
    em_restarts: int = 10
    include_dropouts: bool = True
    tz: str = "UTC"
    cvi_scan: str | None = None
    cvi_sample: int = 1500
    permutation_below: int = 8   # use permuted tests when a side is smaller
    resamples: int = 10_000
    raw_log: Path | None = None
    calendar: Path | None = None
    rules: Path | None = None
    registry: Path | None = None
    submissions: Path | None = None
    grades: Path | None = None
    themes: Path | None = None
    opinions: Path | None = None
    plan: Path | None = None
    history_dir: Path | None = None
    synth: bool = False

    def resolve(self, explicit: Path | None, *candidates: str) -> Path:
        if explicit is not None:
            return require(explicit)
        for c in candidates:
            p = self.out_dir / c
            if p.exists():
                return p
        raise MissingInputError(self.out_dir / candidates[0])


def _load_registry(cfg: PipelineConfig) -> EventCodeRegistry:
    if cfg.registry is not None:
        return EventCodeRegistry.from_json(require(cfg.registry).read_text(encoding="utf-8"))
    return EventCodeRegistry.default()


def _load_calendar(cfg: PipelineConfig) -> CourseCalendar:
    path = cfg.resolve(cfg.calendar, "synth/calendar.csv", "calendar.csv")
    return CourseCalendar.from_csv(path.read_text(encoding="utf-8"), tz=cfg.tz)


def _load_plan(cfg: PipelineConfig) -> CoursePlan:
    path = cfg.resolve(cfg.plan, "synth/plan.json", "plan.json")
    return CoursePlan.from_json(path.read_text(encoding="utf-8"))


def _scan_range(cfg: PipelineConfig) -> list[int] | None:
    if not cfg.cvi_scan:
        return None
    lo, _, hi = cfg.cvi_scan.partition(":")
    return list(range(int(lo), int(hi) + 1))


class StageIO:
    """Records the files a stage read and wrote, for the run manifest."""

    def __init__(self, name: str):
        self.name = name
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def read(self, path: Path) -> Path:
        self.inputs.append(Path(path))
        return Path(path)

    def wrote(self, path: Path, text: str) -> Path:
        atomic_write_text(path, text)
        self.outputs.append(Path(path))
        return Path(path)


def stage_synth(cfg: PipelineConfig) -> StageIO:
    io = StageIO("synth")
    spec = ArchetypeSpec(seed=cfg.synth_seed, tz=cfg.tz)
    cohort = generate(spec)
    for path in write_cohort(cohort, cfg.out_dir / "synth").values():
        io.outputs.append(path)
    history_spec = ArchetypeSpec(seed=cfg.history_seed, tz=cfg.tz)
    history = generate(history_spec)
    for path in write_cohort(history, cfg.out_dir / "history").values():
        io.outputs.append(path)
    return io


def stage_ingest(cfg: PipelineConfig) -> StageIO:
    io = StageIO("ingest")
    raw_path = io.read(cfg.resolve(cfg.raw_log, "synth/raw.log", "raw.log"))
    registry = _load_registry(cfg)
    calendar = _load_calendar(cfg)
    rules = default_rule_table()
    if cfg.rules is not None:
        rules = rules_from_json(io.read(require(cfg.rules)).read_text(encoding="utf-8"))
    lines = raw_path.read_text(encoding="utf-8").splitlines()
    events = ingest_lines(lines, registry, calendar, rules)
    out = cfg.out_dir / "trace.log"
    write_trace_log(events, out)  # already newline-exact; atomicity via rewrite
    io.outputs.append(out)
    return io


def stage_sessionize(cfg: PipelineConfig) -> StageIO:
    io = StageIO("sessionize")
    trace_path = io.read(cfg.resolve(None, "trace.log"))
    registry = _load_registry(cfg)
    calendar = _load_calendar(cfg)
    events = read_trace_log(trace_path)
    sessions, matrix = sessionize(
        events, registry, calendar, timedelta(minutes=cfg.gap_cutoff_minutes))
    io.wrote(cfg.out_dir / "sessions.csv", sessions_to_csv(sessions))
    io.wrote(cfg.out_dir / "vectors.csv", vectors_to_csv(sessions, matrix, registry))
    return io


def _read_vectors(path: Path, registry: EventCodeRegistry) -> tuple[list[str], np.ndarray]:
    rows = read_csv_rows(path)
    ids = [r["session_id"] for r in rows]
    X = np.array([[float(r[c]) for c in registry.codes] for r in rows]) \
        if rows else np.zeros((0, len(registry)))
    return ids, X


def stage_tactics(cfg: PipelineConfig) -> StageIO:
    io = StageIO("tactics")
    registry = _load_registry(cfg)
    ids, X = _read_vectors(io.read(cfg.resolve(None, "vectors.csv")), registry)
    if len(X) < cfg.k_sessions:
        raise ValidationError(
            f"{len(X)} sessions cannot support k={cfg.k_sessions} tactics")
    config = ClusteringConfig(k=cfg.k_sessions, seed=cfg.seed,
                              restarts=cfg.kmedoids_restarts)
    tactics, labels, assignment = detect_tactics(X, registry, config)
    io.wrote(cfg.out_dir / "tactic_labels.csv", rows_to_csv(
        ["session_id", "tactic"], [[sid, int(lab)] for sid, lab in zip(ids, labels)]))
    io.wrote(cfg.out_dir / "tactics.csv", tactic_report_csv(tactics, registry))
    io.wrote(cfg.out_dir / "tactics.html", tactic_report_html(tactics, registry))

    ks = _scan_range(cfg)
    if ks:
        rng = np.random.default_rng(cfg.seed)
        idx = (rng.choice(len(X), size=cfg.cvi_sample, replace=False)
               if len(X) > cfg.cvi_sample else np.arange(len(X)))
        sample = X[np.sort(idx)]
        assignments = {
            k: kmedoids_l1(sample, ClusteringConfig(k=k, seed=cfg.seed, restarts=2))
            for k in ks if k <= len(sample)
        }
        io.wrote(cfg.out_dir / "cvi_sessions.csv",
                 cvi_report(sample, assignments, "kmedoids").to_csv())
    else:
        io.wrote(cfg.out_dir / "cvi_sessions.csv",
                 cvi_report(X, {cfg.k_sessions: assignment}, "kmedoids").to_csv())
    return io


def _history_feature_slices(cfg: PipelineConfig, io: StageIO):
    hist_dir = cfg.history_dir or (cfg.out_dir / "history")
    submissions = submissions_from_csv(
        io.read(require(hist_dir / "submissions.csv")).read_text(encoding="utf-8"))
    labels_rows = read_csv_rows(io.read(require(hist_dir / "labels.csv")))
    dropped = {r["student"]: r["dropped"] == "1" for r in labels_rows}
    cal_path = hist_dir / "calendar.csv"
    calendar = (CourseCalendar.from_csv(cal_path.read_text(encoding="utf-8"), tz=cfg.tz)
                if cal_path.exists() else _load_calendar(cfg))
    plan_path = hist_dir / "plan.json"
    plan = (CoursePlan.from_json(plan_path.read_text(encoding="utf-8"))
            if plan_path.exists() else _load_plan(cfg))
    students = sorted(dropped)
    table = feature_table(submissions, plan, calendar, students=students)
    history = {}
    for week in range(1, calendar.week_count + 1):
        X = np.stack([table[(s, week)] for s in students])
        y = np.array([1.0 if dropped[s] else 0.0 for s in students])
        history[week] = (X, y)
    return history


def stage_risk_train(cfg: PipelineConfig) -> StageIO:
    io = StageIO("risk-train")
    history = _history_feature_slices(cfg, io)
    model = train(history, seed=cfg.seed)
    io.wrote(cfg.out_dir / "model.json", model.to_json())
    return io


def stage_risk_score(cfg: PipelineConfig) -> StageIO:
    io = StageIO("risk-score")
    model = RiskModel.from_json(
        io.read(cfg.resolve(None, "model.json")).read_text(encoding="utf-8"))
    submissions = submissions_from_csv(
        io.read(cfg.resolve(cfg.submissions, "synth/submissions.csv",
                            "submissions.csv")).read_text(encoding="utf-8"))
    calendar = _load_calendar(cfg)
    plan = _load_plan(cfg)
    sessions_path = cfg.out_dir / "sessions.csv"
    pairs: list[tuple[str, int]]
    if sessions_path.exists():
        rows = read_csv_rows(io.read(sessions_path))
        pairs = sorted({(r["student"], int(r["week"])) for r in rows})
        students = sorted({s for s, _ in pairs})
    else:
        students = sorted({s.student for s in submissions})
        pairs = [(s, w) for s in students
                 for w in range(1, calendar.week_count + 1)]
    table = feature_table(submissions, plan, calendar, students=students)
    risk_rows = []
    exp_rows = []
    for student, week in pairs:
        x = table[(student, week)]
        p = predict_week(model, x, week)
        risk_rows.append([student, week, repr(p)])
        e = explain(model, x, week)
        for name, value, contribution in zip(FEATURE_NAMES, x, e.contributions):
            exp_rows.append([student, week, name, repr(float(value)),
                             repr(contribution), repr(e.baseline), repr(e.logit),
                             repr(e.probability)])
    io.wrote(cfg.out_dir / "risk.csv",
             rows_to_csv(["student", "week", "p_drop"], risk_rows))
    io.wrote(cfg.out_dir / "explanations.csv", rows_to_csv(
        ["student", "week", "feature", "value", "contribution",
         "baseline", "logit", "probability"], exp_rows))
    return io


def stage_strategies(cfg: PipelineConfig) -> StageIO:
    io = StageIO("strategies")
    session_rows = read_csv_rows(io.read(cfg.resolve(None, "sessions.csv")))
    label_rows = read_csv_rows(io.read(cfg.resolve(None, "tactic_labels.csv")))
    labels = {r["session_id"]: int(r["tactic"]) for r in label_rows}
    stubs, tactic_labels = [], []
    for r in session_rows:
        if r["session_id"] not in labels:
            raise ValidationError(f"session {r['session_id']} has no tactic label")
        stubs.append(_SessionStub(r["student"], int(r["week"]), r["start"],
                                  r["session_id"]))
        tactic_labels.append(labels[r["session_id"]])
    from .strategies import weekly_sequences

    sequences = weekly_sequences(stubs, tactic_labels)
    doc = {
        "n_tactics": cfg.k_sessions,
        "strategies": [
            {"student": s, "week": w, "sequence": list(seq)}
            for (s, w), seq in sorted(sequences.items())
        ],
    }
    io.wrote(cfg.out_dir / "strategies.json", json.dumps(doc, indent=2))
    return io


def _load_strategies(cfg: PipelineConfig, io: StageIO):
    doc = json.loads(io.read(cfg.resolve(None, "strategies.json"))
                     .read_text(encoding="utf-8"))
    risk_rows = read_csv_rows(io.read(cfg.resolve(None, "risk.csv")))
    risk = {(r["student"], int(r["week"])): float(r["p_drop"]) for r in risk_rows}
    stubs, labels = [], []
    for rec in doc["strategies"]:
        for i, t in enumerate(rec["sequence"]):
            stubs.append(_SessionStub(rec["student"], rec["week"], (rec["week"], i),
                                      f"{rec['student']}|{rec['week']}|{i}"))
            labels.append(int(t))
    strategies = build_weekly_strategies(stubs, labels, doc["n_tactics"], risk)
    return strategies, int(doc["n_tactics"])


def stage_cluster_strategies(cfg: PipelineConfig) -> StageIO:
    io = StageIO("cluster-strategies")
    strategies, n_tactics = _load_strategies(cfg, io)
    clusters = cluster_strategy_types(
        strategies, n_tactics, k_low=cfg.k_low, k_high=cfg.k_high,
        threshold=cfg.risk_threshold, seed=cfg.seed,
        feature_mode=cfg.feature_mode, restarts=cfg.em_restarts)
    io.wrote(cfg.out_dir / "strategy_types.csv", assignments_to_csv(clusters))

    tactic_rows = read_csv_rows(io.read(cfg.resolve(None, "tactics.csv")))
    tactic_names = [r["code"] for r in tactic_rows]
    by_key = {(a.student, a.week_index): a for a in clusters.assignments}
    members: dict[tuple[str, int], list] = {}
    for s in strategies:
        a = by_key[(s.student, s.week_index)]
        members.setdefault((a.risk_partition, a.cluster_index), []).append(s)
    for (partition, ci), group in sorted(members.items()):
        net = heuristic_net(group)
        io.wrote(cfg.out_dir / "nets" / f"net_{partition}_{ci:02d}.dot",
                 heuristic_net_dot(net, tactic_names))
    for s in strategies:
        io.wrote(cfg.out_dir / "fomms" / f"fomm_{s.student}_w{s.week_index:02d}.dot",
                 fomm_dot(s.fomm, tactic_names))

    from .strategies import strategy_features
    records = []
    for partition, assignment in (("low", clusters.low), ("high", clusters.high)):
        if assignment is None:
            continue
        side = [s for s in strategies
                if by_key[(s.student, s.week_index)].risk_partition == partition]
        X = strategy_features(side, n_tactics, cfg.feature_mode)
        rep = cvi_report(X, {assignment.k: assignment}, "em")
        r = rep.records[0]
        records.append([partition, r.k,
                        "" if r.silhouette is None else repr(r.silhouette),
                        "" if r.davies_bouldin is None else repr(r.davies_bouldin),
                        "" if r.calinski_harabasz is None else repr(r.calinski_harabasz),
                        "" if r.bic is None else repr(r.bic)])
    io.wrote(cfg.out_dir / "cvi_strategies.csv", rows_to_csv(
        ["partition", "k", "silhouette", "davies_bouldin", "calinski_harabasz", "bic"],
        records))
    return io


def _load_assignments(cfg: PipelineConfig, io: StageIO):
    from .strategies import StrategyTypeAssignment

    rows = read_csv_rows(io.read(cfg.resolve(None, "strategy_types.csv")))
    out = []
    for r in rows:
        out.append(StrategyTypeAssignment(
            student=r["student"], week_index=int(r["week"]), risk_partition=r["risk"],
            cluster_index=int(r["cluster_index"]), type_id=int(r["type_id"]),
            display_name=r["type_name"], p_drop=float(r["p_drop"])))
    return out


def stage_profiles(cfg: PipelineConfig) -> StageIO:
    io = StageIO("profiles")
    assignments = _load_assignments(cfg, io)
    n_types = cfg.k_low + cfg.k_high
    profiles = build_profiles(assignments, n_types)
    grades = grades_from_csv(
        io.read(cfg.resolve(cfg.grades, "synth/grades.csv", "grades.csv"))
        .read_text(encoding="utf-8"))
    themes_path = cfg.themes or _first_existing(cfg, "synth/themes.csv", "themes.csv")
    themes = themes_from_csv(io.read(themes_path).read_text(encoding="utf-8")) \
        if themes_path else []
    opinions_path = cfg.opinions or _first_existing(cfg, "synth/opinions.csv", "opinions.csv")
    opinions = opinions_from_csv(io.read(opinions_path).read_text(encoding="utf-8")) \
        if opinions_path else {}

    clusters, tree, assignment = cluster_profiles(
        profiles, k=cfg.k_profiles, grades=grades,
        strategy_assignments=assignments, themes=themes, opinions=opinions)

    from .strategies import StrategyClusters
    type_names = StrategyClusters([], None, None, cfg.k_low, cfg.k_high).type_names()
    io.wrote(cfg.out_dir / "profiles.csv", profiles_to_csv(profiles, type_names))
    rows = []
    for c in clusters:
        for s in c.members:
            rows.append([s, c.cluster_index, c.display_name])
    rows.sort(key=lambda r: (r[1], r[0]))
    io.wrote(cfg.out_dir / "profile_clusters.csv",
             rows_to_csv(["student", "cluster", "cluster_name"], rows))
    summary_rows = []
    for c in clusters:
        s = c.summary
        summary_rows.append([
            c.cluster_index, c.display_name, s.n_students,
            "" if s.median_task_pct is None else repr(s.median_task_pct),
            "" if s.median_exam_pct is None else repr(s.median_exam_pct),
            "" if s.median_grade is None else repr(s.median_grade),
            "" if s.mean_p_drop is None else repr(s.mean_p_drop),
            "; ".join(s.majority_themes), s.n_respondents,
            s.opinion_counts["positive"], s.opinion_counts["neutral"],
            s.opinion_counts["negative"],
        ])
    io.wrote(cfg.out_dir / "profile_summaries.csv", rows_to_csv(
        ["cluster", "cluster_name", "n_students", "median_task_pct",
         "median_exam_pct", "median_grade", "mean_p_drop", "majority_themes",
         "n_respondents", "opinion_positive", "opinion_neutral", "opinion_negative"],
        summary_rows))
    leaf_names = [p.student for p in profiles]
    io.wrote(cfg.out_dir / "merge_tree.json", tree.to_json())
    io.wrote(cfg.out_dir / "dendrogram.dot", tree.to_dot(leaf_names))
    io.wrote(cfg.out_dir / "dendrogram.svg", svg_dendrogram(tree, leaf_names))

    X = np.stack([p.values for p in profiles])
    from .cluster import ClusterAssignment
    assignments_by_k = {}
    for k in range(2, min(9, len(profiles))):
        labels = tree.cut(k)
        assignments_by_k[k] = ClusterAssignment(labels=labels, centers=np.zeros((k, X.shape[1])),
                                                objective=0.0)
    io.wrote(cfg.out_dir / "cvi_profiles.csv",
             cvi_report(X, assignments_by_k, "agglomerative").to_csv())
    return io


def _first_existing(cfg: PipelineConfig, *names: str) -> Path | None:
    for n in names:
        p = cfg.out_dir / n
        if p.exists():
            return p
    return None


def stage_stats(cfg: PipelineConfig) -> StageIO:
    io = StageIO("stats")
    cluster_rows = read_csv_rows(io.read(cfg.resolve(None, "profile_clusters.csv")))
    grades = grades_from_csv(
        io.read(cfg.resolve(cfg.grades, "synth/grades.csv", "grades.csv"))
        .read_text(encoding="utf-8"))
    type_rows = read_csv_rows(io.read(cfg.resolve(None, "strategy_types.csv")))
    opinions_path = cfg.opinions or _first_existing(cfg, "synth/opinions.csv", "opinions.csv")
    opinions = opinions_from_csv(opinions_path.read_text(encoding="utf-8")) \
        if opinions_path else {}
    labels_path = _first_existing(cfg, "synth/labels.csv")
    dropped = {}
    if labels_path is not None:
        dropped = {r["student"]: r["dropped"] == "1"
                   for r in read_csv_rows(labels_path)}

    members_by_cluster: dict[int, set[str]] = {}
    names_by_cluster: dict[int, str] = {}
    all_students: set[str] = set()
    for r in cluster_rows:
        ci = int(r["cluster"])
        members_by_cluster.setdefault(ci, set()).add(r["student"])
        names_by_cluster[ci] = r["cluster_name"]
        all_students.add(r["student"])

    def grade_pool(students: set[str]) -> list[float]:
        pool = []
        for s in sorted(students):
            if not cfg.include_dropouts and dropped.get(s, False):
                continue
            if s in grades:
                pool.append(grades[s].grade)
        return pool

    p_by_student: dict[str, list[float]] = {}
    for r in type_rows:
        p_by_student.setdefault(r["student"], []).append(float(r["p_drop"]))

    comparisons = []
    lines = []
    for ci in sorted(members_by_cluster):
        members = members_by_cluster[ci]
        rest = all_students - members
        for variable in ("grade", "p_drop", "opinion"):
            if variable == "grade":
                mv, rv = grade_pool(members), grade_pool(rest)
            elif variable == "p_drop":
                mv = [p for s in sorted(members) for p in p_by_student.get(s, [])]
                rv = [p for s in sorted(rest) for p in p_by_student.get(s, [])]
            else:
                mv = [encode_opinion(opinions[s]) for s in sorted(members) if s in opinions]
                rv = [encode_opinion(opinions[s]) for s in sorted(rest) if s in opinions]
                mv = [v for v in mv if v is not None]
                rv = [v for v in rv if v is not None]
            mode = "permutation" if min(len(mv), len(rv)) < cfg.permutation_below \
                else "analytic"
            comp = compare_cluster(mv, rv, ci, variable, mode=mode,
                                   resamples=cfg.resamples, seed=cfg.seed)
            comparisons.append(comp)
            label = f"cluster {ci} ({names_by_cluster[ci]}) vs rest, {variable}"
            if comp.result is None:
                lines.append(f"{label}: not computable ({comp.reason})")
            else:
                lines.append(f"{label}: {format_bm(comp.result)}")
    io.wrote(cfg.out_dir / "stats.csv", comparisons_to_csv(comparisons))
    io.wrote(cfg.out_dir / "stats.txt", "\n".join(lines) + "\n")
    return io


def stage_report(cfg: PipelineConfig) -> StageIO:
    io = StageIO("report")
    for name in ("sessions.csv", "tactics.csv", "strategy_types.csv",
                 "explanations.csv", "profile_clusters.csv",
                 "profile_summaries.csv", "stats.csv"):
        io.read(cfg.resolve(None, name))
    report_dir = emit_report(cfg.out_dir)
    dangling = check_links(report_dir)
    if dangling:
        raise ValidationError("dangling report links: " + "; ".join(dangling))
    for page in sorted(report_dir.rglob("*")):
        if page.is_file():
            io.outputs.append(page)
    return io


PIPELINE_ORDER = [
    "ingest", "sessionize", "tactics", "risk-train", "risk-score",
    "strategies", "cluster-strategies", "profiles", "stats", "report",
]

STAGES = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "sessionize": stage_sessionize,
    "tactics": stage_tactics,
    "risk-train": stage_risk_train,
    "risk-score": stage_risk_score,
    "strategies": stage_strategies,
    "cluster-strategies": stage_cluster_strategies,
    "profiles": stage_profiles,
    "stats": stage_stats,
    "report": stage_report,
}


def _write_manifest(cfg: PipelineConfig, command: str, stage_ios: list[StageIO]) -> None:
    def rel(p: Path) -> str:
        try:
            return str(p.resolve().relative_to(cfg.out_dir.resolve()))
        except ValueError:
            return str(p)

    doc = {
        "command": command,
        "version": __version__,
        "seeds": {"clustering": cfg.seed, "synth": cfg.synth_seed,
                  "history": cfg.history_seed},
        "config": {
            "gap_cutoff_minutes": cfg.gap_cutoff_minutes,
            "k_sessions": cfg.k_sessions, "k_low": cfg.k_low,
            "k_high": cfg.k_high, "k_profiles": cfg.k_profiles,
            "risk_threshold": cfg.risk_threshold,
            "feature_mode": cfg.feature_mode,
        },
        "stages": [
            {
                "name": s.name,
                "inputs": {rel(p): sha256_file(p) for p in sorted(set(s.inputs))},
                "outputs": {rel(p): sha256_file(p) for p in sorted(set(s.outputs))},
            }
            for s in stage_ios
        ],
    }
    atomic_write_text(cfg.out_dir / "manifest.json",
                      json.dumps(doc, indent=2, sort_keys=True))


def run_subcommand(name: str, cfg: PipelineConfig) -> int:
    """Run one stage (or the whole pipeline) and write the run manifest."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    stage_ios: list[StageIO] = []
    if name == "pipeline":
        if cfg.synth:
            stage_ios.append(stage_synth(cfg))
        for stage in PIPELINE_ORDER:
            stage_ios.append(STAGES[stage](cfg))
    else:
        stage_ios.append(STAGES[name](cfg))
    _write_manifest(cfg, name, stage_ios)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracelearn",
        description="Mine learning tactics, weekly strategies and dropout-risk "
                    "profiles from VLE trace logs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "sessionize", "tactics", "strategies", "risk-train",
                 "risk-score", "cluster-strategies", "profiles", "stats",
                 "synth", "report", "pipeline"):
        p = sub.add_parser(name)
        p.add_argument("--out", type=Path, default=Path("out"),
                       help="output directory (default: out)")
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config file; its values override flags")
        p.add_argument("--gap-cutoff", type=float, default=25.0,
                       help="session split cutoff in minutes (default 25)")
        p.add_argument("--k-sessions", type=int, default=12)
        p.add_argument("--k-low", type=int, default=3)
        p.add_argument("--k-high", type=int, default=9)
        p.add_argument("--k-profiles", type=int, default=5)
        p.add_argument("--risk-threshold", type=float, default=0.5)
        p.add_argument("--seed", type=int, default=7,
                       help="clustering/statistics seed (default 7)")
        p.add_argument("--synth-seed", type=int, default=42)
        p.add_argument("--history-seed", type=int, default=1042)
        p.add_argument("--feature-mode", choices=("transitions", "frequencies"),
                       default="transitions")
        p.add_argument("--kmedoids-restarts", type=int, default=5)
        p.add_argument("--em-restarts", type=int, default=10)
        p.add_argument("--tz", default="UTC")
        p.add_argument("--cvi-scan", default=None, metavar="LO:HI")
        p.add_argument("--cvi-sample", type=int, default=1500)
        p.add_argument("--resamples", type=int, default=10_000)
        p.add_argument("--include-dropouts", dest="include_dropouts",
                       action="store_true", default=True)
        p.add_argument("--exclude-dropouts", dest="include_dropouts",
                       action="store_false")
        for flag in ("raw-log", "calendar", "rules", "registry", "submissions",
                     "grades", "themes", "opinions", "plan", "history-dir"):
            p.add_argument(f"--{flag}", type=Path, default=None)
        if name == "pipeline":
            p.add_argument("--synth", action="store_true",
                           help="generate the default synthetic cohort first")
    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig(
        out_dir=args.out,
        gap_cutoff_minutes=args.gap_cutoff,
        k_sessions=args.k_sessions,
        k_low=args.k_low,
        k_high=args.k_high,
        k_profiles=args.k_profiles,
        risk_threshold=args.risk_threshold,
        seed=args.seed,
        synth_seed=args.synth_seed,
        history_seed=args.history_seed,
        feature_mode=args.feature_mode,
        kmedoids_restarts=args.kmedoids_restarts,
        em_restarts=args.em_restarts,
        include_dropouts=args.include_dropouts,
        tz=args.tz,
        cvi_scan=args.cvi_scan,
        cvi_sample=args.cvi_sample,
        resamples=args.resamples,
        raw_log=args.raw_log,
        calendar=args.calendar,
        rules=args.rules,
        registry=args.registry,
        submissions=args.submissions,
        grades=args.grades,
        themes=args.themes,
        opinions=args.opinions,
        plan=args.plan,
        history_dir=args.history_dir,
        synth=getattr(args, "synth", False),
    )
    if args.config is not None:
        doc = json.loads(require(args.config).read_text(encoding="utf-8"))
        known = {f.name for f in fields(PipelineConfig)}
        for key, value in doc.items():
            if key not in known:
                raise ValidationError(f"unknown config key {key!r}")
            if key in ("out_dir", "raw_log", "calendar", "rules", "registry",
                       "submissions", "grades", "themes", "opinions", "plan",
                       "history_dir"):
                value = Path(value)
            setattr(cfg, key, value)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return run_subcommand(args.command, cfg)
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except TraceLearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
