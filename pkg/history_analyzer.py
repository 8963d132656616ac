"""
history_analyzer.py

Repository size vs commit-diff size over a history, in tokens.
One point per commit: the token count of every filtered file at that commit,
and the token count of the rendered diff against its first parent (the
empty tree for a root commit).
"""

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone

import pandas as pd

from diff_engine import diff_filesets
from filesets import FileSet
from repo_source import ALL_FILES, RepoRef, log_commits, snapshot
from token_meter import BYTE_HEURISTIC, count_tokens
from utils import get_logger

log = get_logger("history_analyzer")


# ================= CONFIG =================

MAX_WORKERS = 4
CSV_COLUMNS = ["commit", "timestamp", "repo_tokens", "diff_tokens"]


@dataclass(frozen=True)
class CommitSizePoint:
    commit: str
    timestamp: int          # unix seconds, committer time
    repo_tokens: int
    diff_tokens: int
    parent: str | None = None

    @property
    def iso_time(self):
        return datetime.fromtimestamp(self.timestamp, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _measure(repo_path, commit, ts, parent, file_filter, spec):
    files = snapshot(RepoRef(repo_path, commit), file_filter)
    before = snapshot(RepoRef(repo_path, parent), file_filter) if parent else FileSet()

    repo_tokens = sum(count_tokens(e.text, spec) for e in files.entries)
    diff_tokens = count_tokens(diff_filesets(before, files).render(), spec)
    return CommitSizePoint(commit, ts, repo_tokens, diff_tokens, parent)


def analyze(repo_path, file_filter=ALL_FILES, spec=BYTE_HEURISTIC, first_parent=True, ref="HEAD", workers=MAX_WORKERS):
    commits = log_commits(repo_path, ref, first_parent)
    log.info(f"history: {len(commits)} commits in {repo_path}")

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_measure, repo_path, sha, ts, parent, file_filter, spec) for sha, ts, parent in commits]
        points = [f.result() for f in futures]

    return points


def points_frame(points):
    return pd.DataFrame(
        [{"commit": p.commit, "timestamp": p.iso_time, "repo_tokens": p.repo_tokens, "diff_tokens": p.diff_tokens} for p in points],
        columns=CSV_COLUMNS,
    )


def emit_csv(points, sep=","):
    """CSV text (header commit,timestamp,repo_tokens,diff_tokens); sep="\\t" gives TSV for gnuplot."""
    buf = io.StringIO()
    points_frame(points).to_csv(buf, index=False, sep=sep, lineterminator="\n")
    return buf.getvalue()
