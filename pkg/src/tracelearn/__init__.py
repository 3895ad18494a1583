"""Learning-analytics pipeline over virtual-learning-environment trace logs.

The package mines study sessions from raw logs, clusters them into learning
tactics, models weekly strategies as first-order Markov chains over tactics,
scores weekly dropout risk from task performance, groups strategies into
risk-stratified types, and profiles students over their strategy use, with
rank-based statistics for group comparisons.  A synthetic-cohort generator
with planted ground truth backs the test suite, and a CLI orchestrates the
stages into a static analyst report.
"""

__version__ = "0.1.0"

from .cluster import (
    ClusterAssignment,
    ClusteringConfig,
    CVIReport,
    MergeTree,
    adjusted_rand_index,
    agglomerative_complete_l1,
    cvi_report,
    gmm_em,
    gmm_em_diagonal,
    kmedoids_l1,
)
from .errors import MissingInputError, ParseError, TraceLearnError, ValidationError
from .ingest import (
    CourseCalendar,
    EventCodeRegistry,
    RawLogLine,
    TraceEvent,
    ingest_lines,
    merge_consecutive,
    parse_raw_line,
    parse_trace_line,
    format_trace_line,
    recode_action,
    relativize_week,
)
from .profiles import StudentProfile, build_profiles, cluster_profiles
from .risk import (
    CoursePlan,
    Explanation,
    RiskModel,
    SubmissionRecord,
    explain,
    extract_features,
    predict_week,
    roc_auc,
    train,
)
from .sessions import Session, filter_sessions, frequency_vector, sessionize, split_sessions
from .stats import BMTestResult, brunner_munzel, compare_cluster, format_bm, stochastic_superiority
from .strategies import (
    HeuristicNet,
    WeeklyStrategy,
    build_weekly_strategies,
    cluster_strategy_types,
    fomm_from_sequence,
    heuristic_net,
    partition_by_risk,
    weekly_sequences,
)
from .synth import ArchetypeSpec, GroundTruth, generate, score_recovery, write_cohort
from .tactics import Tactic, detect_tactics, tactic_report

__all__ = [name for name in dir() if not name.startswith("_")]
