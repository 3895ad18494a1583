"""Interpreting session clusters as learning tactics.

Sessions are clustered by their event-frequency vectors with l1 k-medoids;
each cluster becomes a tactic with a per-code proportion profile.  Display
names are defaults for human interpretation, not outputs of the math: with
twelve clusters the stock labels are used, otherwise names are derived from
each tactic's dominant codes.
"""

from __future__ import annotations

import csv
import html
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cluster import ClusterAssignment, ClusteringConfig, kmedoids_l1
from .ingest import EventCodeRegistry

DEFAULT_K_SESSIONS = 12

# Stock display names applied when k = 12, in descending-size order.
TWELVE_TACTIC_NAMES = (
    "F_CourseMat_Examples",
    "F_Lec_Engaged",
    "F_Lec_Video",
    "F_CurTasks_Intro",
    "F_CurTasks_Core_Attempt",
    "F_CurTasks_Core_Correct",
    "F_CurTasks_Basic_Attempt",
    "F_CurTasks_Basic_Correct",
    "F_CurTasks_Extra",
    "TA_Sess",
    "F_PrevTasks_Basic",
    "F_PrevTasks_Deep",
)


@dataclass(frozen=True)
class Tactic:
    id: int
    display_name: str
    session_count: int
    event_proportions: np.ndarray  # mean relative frequency per registry code

    def top_codes(self, registry: EventCodeRegistry, n: int = 5) -> list[tuple[str, float]]:
        order = np.argsort(-self.event_proportions, kind="stable")[:n]
        return [(registry.codes[i], float(self.event_proportions[i])) for i in order
                if self.event_proportions[i] > 0]


def _auto_name(tactic_index: int, proportions: np.ndarray, registry: EventCodeRegistry) -> str:
    top = int(np.argmax(proportions))
    code = registry.codes[top].replace(":", "_").replace("-", "_")
    return f"T{tactic_index + 1}_{code}"


def detect_tactics(
    vectors: np.ndarray,
    registry: EventCodeRegistry,
    config: ClusteringConfig | None = None,
) -> tuple[list[Tactic], np.ndarray, ClusterAssignment]:
    """Cluster session vectors into tactics, largest cluster first.

    Returns the tactics, per-session tactic labels aligned with ``vectors``,
    and the raw clustering assignment.  Ids are stable across reruns with
    identical inputs and seeds.
    """
    if config is None:
        config = ClusteringConfig(k=DEFAULT_K_SESSIONS)
    assignment = kmedoids_l1(vectors, config)
    X = np.asarray(vectors, dtype=np.float64)

    sizes = np.bincount(assignment.labels, minlength=config.k)
    # Reorder cluster ids by descending size; ties keep the original order.
    order = np.argsort(-sizes, kind="stable")
    remap = np.empty(config.k, dtype=np.int64)
    remap[order] = np.arange(config.k)
    labels = remap[assignment.labels]

    tactics: list[Tactic] = []
    for new_id in range(config.k):
        members = X[labels == new_id]
        proportions = members.mean(axis=0)
        if config.k == len(TWELVE_TACTIC_NAMES):
            name = TWELVE_TACTIC_NAMES[new_id]
        else:
            name = _auto_name(new_id, proportions, registry)
        tactics.append(Tactic(new_id, name, len(members), proportions))
    return tactics, labels, assignment


def tactic_report(
    tactics: Sequence[Tactic], registry: EventCodeRegistry, top_n: int = 5
) -> list[dict]:
    """Rows of code / N / description / example codes, one per tactic."""
    rows = []
    for t in tactics:
        examples = [c for c, _ in t.top_codes(registry, top_n)]
        rows.append({
            "code": t.display_name,
            "N": t.session_count,
            "description": f"dominant events: {', '.join(examples[:2])}" if examples else "",
            "example_codes": " ".join(examples),
        })
    return rows


def tactic_report_csv(tactics: Sequence[Tactic], registry: EventCodeRegistry) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["code", "N", "description", "example_codes"])
    for row in tactic_report(tactics, registry):
        w.writerow([row["code"], row["N"], row["description"], row["example_codes"]])
    return buf.getvalue()


def tactic_report_html(tactics: Sequence[Tactic], registry: EventCodeRegistry) -> str:
    rows = tactic_report(tactics, registry)
    out = ["<table class=\"tactics\">",
           "<tr><th>Code</th><th>N</th><th>Description</th><th>Example codes</th></tr>"]
    for r in rows:
        out.append(
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>".format(
                html.escape(r["code"]), r["N"],
                html.escape(r["description"]), html.escape(r["example_codes"]),
            )
        )
    out.append("</table>")
    return "\n".join(out)
