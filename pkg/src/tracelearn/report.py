"""Static analyst report: HTML pages over the pipeline's CSV/DOT artifacts.

The bundle is file-only (no server) and fully deterministic: pages carry no
timestamps, and every number shown is read from, or also written to, a CSV
artifact in the output directory.  Each strategy-type page exposes the
cluster's median dropout probability, median grade, combined self-report
codes, combined heuristic net, and per-strategy performance data, transition
model links and prediction-decomposition tables; profile pages mirror the
cluster summaries.
"""

from __future__ import annotations

import html
import json
from html.parser import HTMLParser
from pathlib import Path
from statistics import median
from typing import Sequence

from ._io import atomic_write_text, read_csv_rows, require, rows_to_csv
from .cluster import MergeTree

_CSS = (
    "body{font-family:sans-serif;margin:2em;max-width:70em}"
    "table{border-collapse:collapse;margin:1em 0}"
    "td,th{border:1px solid #999;padding:.25em .6em;text-align:left}"
    "h1,h2{color:#223}.note{color:#666;font-style:italic}"
)


def _page(title: str, body: str) -> str:
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{html.escape(title)}</title><style>{_CSS}</style></head>\n"
        f"<body>\n<h1>{html.escape(title)}</h1>\n{body}\n</body></html>\n"
    )


def _table(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    out = ["<table>", "<tr>" + "".join(f"<th>{html.escape(str(h))}</th>" for h in header) + "</tr>"]
    for row in rows:
        out.append("<tr>" + "".join(f"<td>{html.escape(str(c))}</td>" for c in row) + "</tr>")
    out.append("</table>")
    return "\n".join(out)


def _fmt(x: float | None, digits: int = 3) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def svg_dendrogram(tree: MergeTree, leaf_names: Sequence[str]) -> str:
    """Horizontal dendrogram; leaf labels left, merge distance to the right."""
    n = tree.leaf_count
    children: dict[int, tuple[int, int]] = {}
    dist: dict[int, float] = {i: 0.0 for i in range(n)}
    for t, (a, b, d) in enumerate(tree.merges):
        children[n + t] = (a, b)
        dist[n + t] = d
    root = n + len(tree.merges) - 1 if tree.merges else 0

    order: list[int] = []

    def walk(node: int) -> None:
        if node < n:
            order.append(node)
            return
        a, b = children[node]
        walk(a)
        walk(b)

    walk(root)
    ys = {leaf: 30 + 16 * i for i, leaf in enumerate(order)}
    dmax = max(dist.values()) or 1.0
    x0, plot_w = 150, 480

    def x_of(node: int) -> float:
        return x0 + (dist[node] / dmax) * plot_w

    lines: list[str] = []

    def place(node: int) -> float:
        if node < n:
            return float(ys[node])
        a, b = children[node]
        ya, yb = place(a), place(b)
        xa, xb, xn = x_of(a), x_of(b), x_of(node)
        lines.append(f'<path d="M {xa:.1f} {ya:.1f} H {xn:.1f} V {yb:.1f} H {xb:.1f}" '
                     'fill="none" stroke="#346" stroke-width="1"/>')
        return (ya + yb) / 2.0

    place(root)
    height = 40 + 16 * n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{x0 + plot_w + 60}" height="{height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for leaf in order:
        parts.append(
            f'<text x="{x0 - 8}" y="{ys[leaf] + 4}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{html.escape(leaf_names[leaf])}</text>'
        )
    parts.extend(lines)
    parts.append(f'<text x="{x0}" y="{height - 6}" font-size="10" '
                 f'font-family="sans-serif">merge distance 0 .. {dmax:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _group(rows: list[dict], key: str) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for r in rows:
        out.setdefault(r[key], []).append(r)
    return out


def emit_report(out_dir: str | Path) -> Path:
    """Assemble the report bundle from the artifacts in ``out_dir``."""
    out = Path(out_dir)
    report = out / "report"
    report.mkdir(parents=True, exist_ok=True)

    sessions = read_csv_rows(out / "sessions.csv")
    tactics = read_csv_rows(out / "tactics.csv")
    types_rows = read_csv_rows(out / "strategy_types.csv")
    explanations = read_csv_rows(out / "explanations.csv")
    profile_rows = read_csv_rows(out / "profile_clusters.csv")
    profile_summaries = read_csv_rows(out / "profile_summaries.csv")
    stats_rows = read_csv_rows(out / "stats.csv")
    grades = {r["student"]: r for r in read_csv_rows(out / "synth" / "grades.csv")} \
        if (out / "synth" / "grades.csv").exists() else {}
    if not grades and (out / "grades.csv").exists():
        grades = {r["student"]: r for r in read_csv_rows(out / "grades.csv")}
    themes_path = out / "synth" / "themes.csv" if (out / "synth" / "themes.csv").exists() \
        else out / "themes.csv"
    themes = read_csv_rows(themes_path) if themes_path.exists() else []
    themes_by_student: dict[str, list[str]] = {}
    for r in themes:
        themes_by_student.setdefault(r["student"], []).append(r["theme"])

    exp_by_strategy: dict[tuple[str, str], list[dict]] = {}
    for r in explanations:
        exp_by_strategy.setdefault((r["student"], r["week"]), []).append(r)

    # Strategy-type pages.
    by_type = _group(types_rows, "type_id")
    type_summary_rows = []
    type_links = []
    (report / "types").mkdir(exist_ok=True)
    for type_id in sorted(by_type, key=int):
        members = by_type[type_id]
        name = members[0]["type_name"]
        risk = members[0]["risk"]
        p_drops = [float(m["p_drop"]) for m in members]
        member_students = sorted({m["student"] for m in members})
        member_grades = [float(grades[s]["grade"]) for s in member_students if s in grades]
        md_p = median(p_drops)
        md_g = median(member_grades) if member_grades else None
        combined_themes: dict[str, int] = {}
        for s in member_students:
            for t in themes_by_student.get(s, ()):
                combined_themes[t] = combined_themes.get(t, 0) + 1
        type_summary_rows.append([type_id, name, risk, len(members),
                                  repr(md_p), "" if md_g is None else repr(md_g)])

        body = [f"<p>Risk partition: <b>{html.escape(risk)}</b>; "
                f"{len(members)} weekly strategies; "
                f"median dropout probability {md_p:.3f}; "
                f"median grade {_fmt(md_g, 1) or 'n/a'}.</p>"]
        net_rel = f"../../nets/net_{risk}_{int(members[0]['cluster_index']):02d}.dot"
        body.append(f'<p>Combined heuristic net: <a href="{net_rel}">DOT</a></p>')
        if combined_themes:
            body.append("<h2>Combined self-report codes</h2>")
            body.append(_table(["theme", "mentions"],
                               sorted(combined_themes.items(), key=lambda kv: (-kv[1], kv[0]))))
        else:
            body.append('<p class="note">No self-reports among members.</p>')
        body.append("<h2>Member strategies</h2>")
        rows = []
        for m in sorted(members, key=lambda r: (r["student"], int(r["week"]))):
            fomm_rel = f"../../fomms/fomm_{m['student']}_w{int(m['week']):02d}.dot"
            rows.append([m["student"], m["week"], f"{float(m['p_drop']):.3f}",
                         f'<a href="{fomm_rel}">FOMM</a>'])
        out_rows = ["<table>", "<tr><th>student</th><th>week</th><th>p_drop</th>"
                    "<th>transition model</th></tr>"]
        for r in rows:
            out_rows.append("<tr>" + "".join(
                f"<td>{c if c.startswith('<a ') else html.escape(str(c))}</td>" for c in r
            ) + "</tr>")
        out_rows.append("</table>")
        body.append("\n".join(out_rows))
        body.append("<h2>Per-strategy performance and prediction decomposition</h2>")
        for m in sorted(members, key=lambda r: (r["student"], int(r["week"]))):
            key = (m["student"], m["week"])
            rows = exp_by_strategy.get(key, [])
            if not rows:
                continue
            body.append(f"<h3>{html.escape(m['student'])}, week {m['week']}</h3>")
            base = float(rows[0]["baseline"])
            logit = float(rows[0]["logit"])
            ordered = sorted(rows, key=lambda r: (-abs(float(r["contribution"])), r["feature"]))
            body.append(_table(
                ["feature", "value", "contribution (logit)"],
                [[r["feature"], f"{float(r['value']):.4f}",
                  f"{float(r['contribution']):+.4f}"] for r in ordered],
            ))
            body.append(f"<p>baseline {base:.4f} + contributions = logit {logit:.4f}; "
                        f"p_drop {float(rows[0]['probability']):.3f} "
                        f'(<a href="../../explanations.csv">source</a>)</p>')
        atomic_write_text(report / "types" / f"type_{int(type_id):02d}.html",
                          _page(f"Strategy type {type_id}: {name}", "\n".join(body)))
        type_links.append((type_id, name, risk, len(members)))

    atomic_write_text(report / "types_summary.csv", rows_to_csv(
        ["type_id", "type_name", "risk", "n_strategies", "median_p_drop", "median_grade"],
        type_summary_rows))

    # Profile pages.
    (report / "profiles").mkdir(exist_ok=True)
    by_cluster = _group(profile_rows, "cluster")
    profile_links = []
    for cluster in sorted(by_cluster, key=int):
        members = by_cluster[cluster]
        name = members[0]["cluster_name"]
        summary = next((s for s in profile_summaries if s["cluster"] == cluster), None)
        body = []
        if summary:
            body.append(_table(
                ["N students", "Md weekly-task %", "Md exam %", "Md grade",
                 "mean p_drop", "respondents"],
                [[summary["n_students"],
                  _fmt(float(summary["median_task_pct"]) * 100, 1) if summary["median_task_pct"] else "",
                  _fmt(float(summary["median_exam_pct"]) * 100, 1) if summary["median_exam_pct"] else "",
                  summary["median_grade"],
                  _fmt(float(summary["mean_p_drop"]), 3) if summary["mean_p_drop"] else "",
                  summary["n_respondents"]]],
            ))
            majority = summary["majority_themes"]
            if majority:
                body.append("<p>Majority themes: " + html.escape(majority) + "</p>")
            if int(summary["n_respondents"]) == 0:
                body.append('<p class="note">This cluster does not include any '
                            "students with self-reports.</p>")
            else:
                body.append(_table(
                    ["opinion", "count"],
                    [["positive", summary["opinion_positive"]],
                     ["neutral", summary["opinion_neutral"]],
                     ["negative", summary["opinion_negative"]]],
                ))
        body.append("<h2>Members</h2>")
        body.append(_table(["student"], [[m["student"]] for m in
                                         sorted(members, key=lambda r: r["student"])]))
        atomic_write_text(report / "profiles" / f"cluster_{int(cluster)}.html",
                          _page(f"Profile cluster {cluster}: {name}", "\n".join(body)))
        profile_links.append((cluster, name, len(members)))

    # Tactic page.
    body = [_table(["code", "N", "description", "example codes"],
                   [[t["code"], t["N"], t["description"], t["example_codes"]]
                    for t in tactics]),
            '<p><a href="../tactics.csv">tactics.csv</a></p>']
    atomic_write_text(report / "tactics.html", _page("Learning tactics", "\n".join(body)))

    # Stats page.
    body = [_table([c for c in (stats_rows[0].keys() if stats_rows else
                                ["cluster", "variable"])],
                   [list(r.values()) for r in stats_rows]),
            '<p><a href="../stats.csv">stats.csv</a>, '
            '<a href="../stats.txt">formatted test reports</a></p>']
    atomic_write_text(report / "stats.html", _page("Group comparisons", "\n".join(body)))

    # Index.
    body = [
        f"<p>{len(sessions)} study sessions; {len(types_rows)} weekly strategies; "
        f"{len(profile_rows)} student profiles.</p>",
        '<h2>Artifacts</h2><ul>'
        '<li><a href="tactics.html">Learning tactics</a></li>'
        '<li><a href="stats.html">Group comparisons</a></li>'
        '<li><a href="../dendrogram.svg">Profile dendrogram (SVG)</a></li>'
        '<li><a href="../merge_tree.json">Profile merge tree (JSON)</a></li>'
        '<li><a href="types_summary.csv">Strategy type summary (CSV)</a></li>'
        "</ul>",
        "<h2>Strategy types</h2>",
        "<ul>" + "".join(
            f'<li><a href="types/type_{int(t):02d}.html">{html.escape(n)}</a> '
            f"({r}, N={c})</li>" for t, n, r, c in type_links) + "</ul>",
        "<h2>Student profiles</h2>",
        "<ul>" + "".join(
            f'<li><a href="profiles/cluster_{int(c)}.html">{html.escape(n)}</a> '
            f"(N={k})</li>" for c, n, k in profile_links) + "</ul>",
    ]
    cvi_files = sorted(p.name for p in out.glob("cvi_*.csv"))
    if cvi_files:
        body.append("<h2>Cluster validation tables</h2><ul>" + "".join(
            f'<li><a href="../{name}">{name}</a></li>' for name in cvi_files) + "</ul>")
    atomic_write_text(report / "index.html", _page("Course behavior report", "\n".join(body)))
    return report


class _LinkCollector(HTMLParser):
    def __init__(self):
        super().__init__()
        self.links: list[str] = []

    def handle_starttag(self, tag, attrs):
        for key, value in attrs:
            if key in ("href", "src") and value and not value.startswith(
                    ("http:", "https:", "mailto:", "#")):
                self.links.append(value)


def check_links(report_dir: str | Path) -> list[str]:
    """Return dangling references in the bundle (empty list = intact)."""
    report = Path(require(report_dir))
    dangling = []
    for page in sorted(report.rglob("*.html")):
        collector = _LinkCollector()
        collector.feed(page.read_text(encoding="utf-8"))
        for link in collector.links:
            target = (page.parent / link).resolve()
            if not target.exists():
                dangling.append(f"{page.relative_to(report)}: {link}")
    return dangling
