"""Weekly learning strategies as First-Order Markov Models over tactics.

Tactic-labeled sessions are grouped per (student, week) into time-ordered
tactic sequences; each sequence yields a FOMM whose transition rows are
normalized bigram counts over START + sequence + END.  Strategies inherit
the student's weekly dropout probability, are partitioned into low/high
risk at a threshold, and each partition is clustered with diagonal EM over
flattened transition matrices.  Heuristic nets summarize each cluster's
pooled tactic successions.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cluster import ClusterAssignment, ClusteringConfig, gmm_em_diagonal
from .errors import ValidationError
from .sessions import Session

START = "START"
END = "END"

DEFAULT_RISK_THRESHOLD = 0.5
DEFAULT_K_LOW = 3
DEFAULT_K_HIGH = 9
DEFAULT_DEPENDENCY_THRESHOLD = 0.9
DEFAULT_FREQUENCY_THRESHOLD = 0.05

# Stock display names for the default 3 low-risk + 9 high-risk clusters.
LOW_RISK_TYPE_NAMES = (
    "Task-oriented, focused on performance",
    "Seeking understanding",
    "Resource-focused, more time on materials than tasks",
)
HIGH_RISK_TYPE_NAMES = (
    "Falling behind, realizing struggle too late",
    "Attempting with examples",
    "Low engagement",
    "Late reliance on model answers",
    "Slow start, finding study pace",
    "Struggling to understand, needing help",
    "Superficial review, stuck on a single resource",
    "Browsing materials with sporadic task attempts",
    "Risky focus on mandatory tasks only",
)


@dataclass
class WeeklyStrategy:
    student: str
    week_index: int
    tactic_sequence: tuple[int, ...]
    fomm: dict[object, dict[object, float]]  # rows: START + tactics; cols: tactics + END
    p_drop: float | None = None
    tactic_frequencies: np.ndarray | None = None


def weekly_sequences(
    sessions: Sequence[Session],
    tactic_labels: Sequence[int],
) -> dict[tuple[str, int], tuple[int, ...]]:
    """Per (student, week) tactic sequences, ordered by session start time.

    Weeks with no sessions yield no entry.  The session order is recovered
    from timestamps, so a shuffled input produces identical sequences.
    """
    if len(sessions) != len(tactic_labels):
        raise ValidationError("one tactic label per session required")
    buckets: dict[tuple[str, int], list[tuple]] = {}
    for s, lab in zip(sessions, tactic_labels):
        buckets.setdefault((s.student, s.week_index), []).append((s.start, int(lab)))
    out: dict[tuple[str, int], tuple[int, ...]] = {}
    for key in sorted(buckets):
        out[key] = tuple(lab for _, lab in sorted(buckets[key]))
    return out


def fomm_from_sequence(sequence: Sequence[int]) -> dict[object, dict[object, float]]:
    """Transition probabilities from normalized bigram counts over START..END."""
    if len(sequence) == 0:
        raise ValidationError("cannot build a transition model from an empty sequence")
    chain = [START, *sequence, END]
    counts: dict[object, dict[object, int]] = {}
    for a, b in zip(chain, chain[1:]):
        counts.setdefault(a, {}).setdefault(b, 0)
        counts[a][b] += 1
    fomm: dict[object, dict[object, float]] = {}
    for a, row in counts.items():
        total = sum(row.values())
        fomm[a] = {b: c / total for b, c in row.items()}
    return fomm


def fomm_feature_vector(
    fomm: Mapping[object, Mapping[object, float]], n_tactics: int
) -> np.ndarray:
    """Flatten a FOMM to a fixed (T+1)x(T+1) row-major vector.

    Rows are [START, tactic 0..T-1], columns [tactic 0..T-1, END]; rows with
    no observed transitions encode as zeros.  The encoding is a bijection
    given the state ordering (see :func:`fomm_from_feature_vector`).
    """
    mat = np.zeros((n_tactics + 1, n_tactics + 1))
    row_index = {START: 0, **{t: t + 1 for t in range(n_tactics)}}
    col_index = {**{t: t for t in range(n_tactics)}, END: n_tactics}
    for a, row in fomm.items():
        for b, p in row.items():
            mat[row_index[a], col_index[b]] = p
    return mat.reshape(-1)


def fomm_from_feature_vector(values: np.ndarray, n_tactics: int) -> dict[object, dict[object, float]]:
    """Inverse of :func:`fomm_feature_vector` (zero rows stay absent)."""
    mat = np.asarray(values).reshape(n_tactics + 1, n_tactics + 1)
    row_states = [START, *range(n_tactics)]
    col_states = [*range(n_tactics), END]
    fomm: dict[object, dict[object, float]] = {}
    for i, a in enumerate(row_states):
        row = {b: float(mat[i, j]) for j, b in enumerate(col_states) if mat[i, j] != 0.0}
        if row:
            fomm[a] = row
    return fomm


def tactic_frequency_vector(sequence: Sequence[int], n_tactics: int) -> np.ndarray:
    freq = np.zeros(n_tactics)
    for t in sequence:
        freq[t] += 1.0
    return freq / len(sequence)


def build_weekly_strategies(
    sessions: Sequence[Session],
    tactic_labels: Sequence[int],
    n_tactics: int,
    risk_scores: Mapping[tuple[str, int], float] | None = None,
) -> list[WeeklyStrategy]:
    """Assemble strategies for every (student, week) with observed sessions.

    ``risk_scores`` maps (student, week) to that week's dropout probability;
    strategies without a score keep ``p_drop=None`` and must be scored before
    partitioning.
    """
    strategies = []
    for (student, week), seq in weekly_sequences(sessions, tactic_labels).items():
        p = None if risk_scores is None else risk_scores.get((student, week))
        strategies.append(WeeklyStrategy(
            student=student,
            week_index=week,
            tactic_sequence=seq,
            fomm=fomm_from_sequence(seq),
            p_drop=p,
            tactic_frequencies=tactic_frequency_vector(seq, n_tactics),
        ))
    return strategies


def partition_by_risk(
    strategies: Sequence[WeeklyStrategy],
    threshold: float = DEFAULT_RISK_THRESHOLD,
) -> tuple[list[WeeklyStrategy], list[WeeklyStrategy]]:
    """Split strategies into (low, high) risk; p_drop <= threshold is low."""
    low, high = [], []
    for s in strategies:
        if s.p_drop is None:
            raise ValidationError(
                f"strategy {s.student} week {s.week_index} has no dropout score"
            )
        (low if s.p_drop <= threshold else high).append(s)
    return low, high


@dataclass(frozen=True)
class StrategyTypeAssignment:
    student: str
    week_index: int
    risk_partition: str  # "low" | "high"
    cluster_index: int   # within the partition
    type_id: int         # global: low clusters first, then high
    display_name: str
    p_drop: float


@dataclass
class StrategyClusters:
    assignments: list[StrategyTypeAssignment]
    low: ClusterAssignment | None
    high: ClusterAssignment | None
    k_low: int
    k_high: int

    @property
    def n_types(self) -> int:
        return self.k_low + self.k_high

    def type_names(self) -> list[str]:
        names = []
        for i in range(self.k_low):
            names.append(_type_name("low", i, self.k_low, self.k_high))
        for i in range(self.k_high):
            names.append(_type_name("high", i, self.k_low, self.k_high))
        return names


def _type_name(partition: str, index: int, k_low: int, k_high: int) -> str:
    if partition == "low":
        if k_low == len(LOW_RISK_TYPE_NAMES):
            return LOW_RISK_TYPE_NAMES[index]
        return f"Low-risk type {index + 1}"
    if k_high == len(HIGH_RISK_TYPE_NAMES):
        return HIGH_RISK_TYPE_NAMES[index]
    return f"High-risk type {index + 1}"


def strategy_features(
    strategies: Sequence[WeeklyStrategy], n_tactics: int, mode: str = "transitions"
) -> np.ndarray:
    """Feature matrix for clustering: flattened FOMMs (default) or tactic mixes."""
    if mode == "transitions":
        return np.stack([fomm_feature_vector(s.fomm, n_tactics) for s in strategies])
    if mode == "frequencies":
        return np.stack([s.tactic_frequencies for s in strategies])
    raise ValidationError(f"unknown feature mode {mode!r}")


def cluster_strategy_types(
    strategies: Sequence[WeeklyStrategy],
    n_tactics: int,
    k_low: int = DEFAULT_K_LOW,
    k_high: int = DEFAULT_K_HIGH,
    threshold: float = DEFAULT_RISK_THRESHOLD,
    seed: int = 0,
    feature_mode: str = "transitions",
    restarts: int | None = None,
) -> StrategyClusters:
    """Partition strategies by risk, then cluster each side with diagonal EM.

    Strategies keep their identity through (student, week); type ids are
    global with low-risk clusters first.
    """
    low, high = partition_by_risk(strategies, threshold)
    results: list[StrategyTypeAssignment] = []
    parts: dict[str, ClusterAssignment | None] = {"low": None, "high": None}
    for name, subset, k, offset in (
        ("low", low, k_low, 0),
        ("high", high, k_high, k_low),
    ):
        if not subset:
            continue
        if len(subset) < k:
            raise ValidationError(
                f"{name}-risk partition has {len(subset)} strategies, fewer than k={k}"
            )
        X = strategy_features(subset, n_tactics, feature_mode)
        assignment = gmm_em_diagonal(
            X, ClusteringConfig(k=k, seed=seed, restarts=restarts)
        )
        parts[name] = assignment
        for s, c in zip(subset, assignment.labels):
            results.append(StrategyTypeAssignment(
                student=s.student,
                week_index=s.week_index,
                risk_partition=name,
                cluster_index=int(c),
                type_id=offset + int(c),
                display_name=_type_name(name, int(c), k_low, k_high),
                p_drop=float(s.p_drop),
            ))
    results.sort(key=lambda a: (a.student, a.week_index))
    return StrategyClusters(results, parts["low"], parts["high"], k_low, k_high)


@dataclass(frozen=True)
class HeuristicNet:
    nodes: tuple[tuple[int, int], ...]          # (tactic, occurrence count)
    edges: tuple[tuple[int, int, float, int], ...]  # (a, b, dependency, count)
    dependency_threshold: float
    frequency_threshold: float


def heuristic_net(
    member_strategies: Sequence[WeeklyStrategy],
    dependency_threshold: float = DEFAULT_DEPENDENCY_THRESHOLD,
    frequency_threshold: float = DEFAULT_FREQUENCY_THRESHOLD,
) -> HeuristicNet:
    """Dependency graph over pooled tactic successions of a cluster.

    dependency(a,b) = (|a>b| - |b>a|) / (|a>b| + |b>a| + 1) over the pooled
    directly-follows counts; an edge is retained when its dependency meets
    ``dependency_threshold`` and its share of all successions meets
    ``frequency_threshold``.
    """
    if not member_strategies:
        raise ValidationError("heuristic net needs at least one member strategy")
    follows: dict[tuple[int, int], int] = {}
    occurrences: dict[int, int] = {}
    for s in member_strategies:
        for t in s.tactic_sequence:
            occurrences[t] = occurrences.get(t, 0) + 1
        for a, b in zip(s.tactic_sequence, s.tactic_sequence[1:]):
            follows[(a, b)] = follows.get((a, b), 0) + 1
    total = sum(follows.values())
    edges = []
    for (a, b), n_ab in sorted(follows.items()):
        n_ba = follows.get((b, a), 0)
        dep = (n_ab - n_ba) / (n_ab + n_ba + 1)
        rel = n_ab / total if total else 0.0
        if dep >= dependency_threshold and rel >= frequency_threshold:
            edges.append((a, b, dep, n_ab))
    nodes = tuple(sorted(occurrences.items()))
    return HeuristicNet(nodes, tuple(edges), dependency_threshold, frequency_threshold)


def heuristic_net_dot(net: HeuristicNet, tactic_names: Sequence[str] | None = None) -> str:
    def label(t: int) -> str:
        return tactic_names[t] if tactic_names is not None else f"tactic {t}"

    lines = ["digraph heuristic_net {", "  rankdir=LR;"]
    for t, count in net.nodes:
        lines.append(f'  t{t} [shape=box, label="{label(t)}\\n({count})"];')
    for a, b, dep, count in net.edges:
        lines.append(f'  t{a} -> t{b} [label="{dep:.2f} ({count})"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def fomm_dot(
    fomm: Mapping[object, Mapping[object, float]],
    tactic_names: Sequence[str] | None = None,
) -> str:
    def label(state) -> str:
        if state in (START, END):
            return str(state)
        return tactic_names[state] if tactic_names is not None else f"tactic {state}"

    def node_id(state) -> str:
        return "s_start" if state == START else "s_end" if state == END else f"t{state}"

    states: list[object] = []
    for a, row in fomm.items():
        for st in (a, *row):
            if st not in states:
                states.append(st)
    lines = ["digraph fomm {", "  rankdir=LR;"]
    for st in states:
        shape = "circle" if st in (START, END) else "box"
        lines.append(f'  {node_id(st)} [shape={shape}, label="{label(st)}"];')
    for a in fomm:
        for b, p in sorted(fomm[a].items(), key=lambda kv: str(kv[0])):
            lines.append(f'  {node_id(a)} -> {node_id(b)} [label="{p:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def assignments_to_csv(clusters: StrategyClusters) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student", "week", "risk", "type_id", "type_name", "p_drop",
                "cluster_index"])
    for a in clusters.assignments:
        w.writerow([a.student, a.week_index, a.risk_partition, a.type_id,
                    a.display_name, repr(a.p_drop), a.cluster_index])
    return buf.getvalue()
