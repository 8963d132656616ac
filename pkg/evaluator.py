"""
evaluator.py

Two ways of scoring a migration:

  run_tests    the project's own test suite, run as a subprocess on a copy
               of the project with the migrated files laid over it
  match_edits  line-level comparison of the candidate's change blocks with
               a reference migration (location and exact matches)

plus the union of matches over several runs and CSV/JSON report writers.
Generated code is never imported here; it only runs inside the runner
subprocess.
"""

import json
import os
import re
import shlex
import shutil
import subprocess
import tempfile
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from diff_engine import change_blocks
from errors import ParseFailure, RunnerNotFound, RunnerTimeout
from utils import get_logger, write_frame

log = get_logger("evaluator")


# ================= CONFIG =================

RUNNER_TIMEOUT = 600    # seconds

DEFAULT_PATTERNS = {
    "passed": r"(?P<passed>\d+) passed",
    "failed": r"(?P<failed>\d+) failed",
    "error": r"(?P<error>\d+) errors?\b",
    "collected": r"collected (?P<collected>\d+) items?",
}

OVERLAY_SKIP = ("run.json",)


# ================= TEST RUNS =================

@dataclass(frozen=True)
class ParseSpec:
    kind: str = "regex"             # regex | junit
    patterns: dict = field(default_factory=lambda: dict(DEFAULT_PATTERNS))
    junit_path: str = "report.xml"  # relative to the project copy


@dataclass(frozen=True)
class TestReport:
    passed: int = 0
    failed: int = 0
    errored: int = 0
    collected: int = 0
    log_path: str = ""
    returncode: int | None = None
    duration_s: float = 0.0

    __test__ = False    # not a pytest class

    def to_dict(self):
        return {
            "passed": self.passed,
            "failed": self.failed,
            "errored": self.errored,
            "collected": self.collected,
            "returncode": self.returncode,
            "duration_s": round(self.duration_s, 3),
            "log_path": self.log_path,
        }


def _last_int(pattern, name, text):
    value = None
    for m in re.finditer(pattern, text):
        value = int(m.group(name))
    return value


def parse_counts(text, patterns=None):
    """(passed, failed, errored, collected); None when nothing matched."""
    patterns = patterns or DEFAULT_PATTERNS
    passed = _last_int(patterns["passed"], "passed", text)
    failed = _last_int(patterns["failed"], "failed", text)
    errored = _last_int(patterns["error"], "error", text)
    collected = _last_int(patterns["collected"], "collected", text) if "collected" in patterns else None

    if passed is None and failed is None and errored is None:
        return None

    passed, failed, errored = passed or 0, failed or 0, errored or 0
    total = passed + failed + errored
    if collected is None or collected < total:
        collected = total
    return passed, failed, errored, collected


def parse_junit(path):
    try:
        root = ET.parse(path).getroot()
    except (OSError, ET.ParseError) as e:
        raise ValueError(f"cannot read results file {path}: {e}")

    suites = [root] if root.tag == "testsuite" else root.iter("testsuite")
    tests = failures = errors = skipped = 0
    for suite in suites:
        tests += int(suite.get("tests", 0))
        failures += int(suite.get("failures", 0))
        errors += int(suite.get("errors", 0))
        skipped += int(suite.get("skipped", 0))

    return tests - failures - errors - skipped, failures, errors, tests


def _keep_log(output, log_dir):
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        fd, path = tempfile.mkstemp(prefix="tests-", suffix=".log", dir=log_dir)
    else:
        fd, path = tempfile.mkstemp(prefix="diffmigrate-tests-", suffix=".log")
    with os.fdopen(fd, "w", encoding="utf-8") as f:
        f.write(output)
    return path


def _copy_project(project_dir, overlay_dir, work):
    target = os.path.join(work, "project")
    shutil.copytree(project_dir, target, ignore=shutil.ignore_patterns(".git"))
    if overlay_dir:
        shutil.copytree(overlay_dir, target, dirs_exist_ok=True, ignore=shutil.ignore_patterns(*OVERLAY_SKIP))
    return target


def run_tests(project_dir, runner_command, parse_spec=None, timeout=RUNNER_TIMEOUT, overlay_dir=None, log_dir=None):
    """
    Run the project's test command on an isolated copy of project_dir,
    optionally with a migration run's files laid over it.
    """
    parse_spec = parse_spec or ParseSpec()
    cmd = shlex.split(runner_command) if isinstance(runner_command, str) else list(runner_command)
    if not os.path.isdir(project_dir):
        raise RunnerNotFound(f"project directory {project_dir} does not exist")

    work = tempfile.mkdtemp(prefix="diffmigrate-eval-")
    try:
        cwd = _copy_project(project_dir, overlay_dir, work)
        t0 = time.time()
        try:
            proc = subprocess.run(cmd, cwd=cwd, capture_output=True, text=True, timeout=timeout)
        except FileNotFoundError:
            raise RunnerNotFound(f"test runner {cmd[0]!r} not found")
        except subprocess.TimeoutExpired as e:
            output = (e.stdout or "") if isinstance(e.stdout, str) else (e.stdout or b"").decode("utf-8", "replace")
            path = _keep_log(output, log_dir)
            raise RunnerTimeout(f"{' '.join(cmd)} exceeded {timeout}s (log: {path})")
        duration = time.time() - t0

        output = proc.stdout + proc.stderr
        log_path = _keep_log(output, log_dir)

        if parse_spec.kind == "junit":
            try:
                counts = parse_junit(os.path.join(cwd, parse_spec.junit_path))
            except ValueError as e:
                log.warning(str(e))
                counts = None
        else:
            counts = parse_counts(output, parse_spec.patterns)
    finally:
        shutil.rmtree(work, ignore_errors=True)

    if counts is None:
        report = TestReport(0, 0, 0, 0, log_path, proc.returncode, duration)
        raise ParseFailure(f"no test counts in runner output (log: {log_path})", report)

    passed, failed, errored, collected = counts
    report = TestReport(passed, failed, errored, collected, log_path, proc.returncode, duration)
    log.info(f"tests: {passed} passed, {failed} failed, {errored} errors of {collected} ({duration:.1f}s)")
    return report


def mean_passed(reports):
    """Mean number of tests passed over candidate runs."""
    if not reports:
        return None
    return float(np.mean([r.passed for r in reports]))


# ================= EDIT MATCHING =================

@dataclass(frozen=True)
class EditMatchReport:
    reference_blocks: int
    candidate_blocks: int
    matched_exact: int
    matched_location: int
    recall: float | None = None
    precision: float | None = None
    exact_ids: frozenset = field(default=frozenset(), repr=False)
    location_ids: frozenset = field(default=frozenset(), repr=False)

    @property
    def location_accuracy(self):
        if not self.reference_blocks:
            return None
        return self.matched_location / self.reference_blocks

    def to_dict(self):
        return {
            "reference_blocks": self.reference_blocks,
            "candidate_blocks": self.candidate_blocks,
            "matched_exact": self.matched_exact,
            "matched_location": self.matched_location,
            "recall": self.recall,
            "precision": self.precision,
            "location_accuracy": self.location_accuracy,
        }


def make_report(reference_blocks, candidate_blocks, exact_ids, location_ids, with_precision=True):
    exact_ids, location_ids = frozenset(exact_ids), frozenset(location_ids)
    recall = len(exact_ids) / reference_blocks if reference_blocks else None
    precision = None
    if with_precision and candidate_blocks:
        precision = len(exact_ids) / candidate_blocks
    return EditMatchReport(
        reference_blocks, candidate_blocks, len(exact_ids), len(location_ids),
        recall, precision, exact_ids, location_ids,
    )


def _drop_ignored(blocks, ignore):
    if not ignore:
        return blocks
    out = []
    for b in blocks:
        removed = tuple(l for l in b.removed if not any(rx.search(l) for rx in ignore))
        added = tuple(l for l in b.added if not any(rx.search(l) for rx in ignore))
        if removed or added:
            out.append(type(b)(b.old_range, b.new_range, removed, added))
    return out


def _old_interval(block):
    start, end = block.old_range
    return (start, end + 1) if end >= start else (start, start + 1)


def _overlaps(a, b):
    (a0, a1), (b0, b1) = _old_interval(a), _old_interval(b)
    return a0 < b1 and b0 < a1


def _same_change(a, b):
    return [l.rstrip() for l in a.added] == [l.rstrip() for l in b.added]


def _match_file(ref_blocks, cand_blocks):
    """Greedy one-to-one matching by ascending reference start, exact matches first."""
    used = set()
    exact, location = [], []
    for ref in sorted(ref_blocks, key=lambda b: b.old_range):
        options = [
            (not _same_change(ref, cand), cand.old_range[0], i)
            for i, cand in enumerate(cand_blocks)
            if i not in used and _overlaps(ref, cand)
        ]
        if not options:
            continue
        not_exact, _, i = min(options)
        used.add(i)
        location.append(ref)
        if not not_exact:
            exact.append(ref)
    return exact, location


def match_edits(original, reference, candidate, ignore=()):
    """Change blocks of candidate vs reference, both taken against original."""
    ignore = [re.compile(p) if isinstance(p, str) else p for p in ignore]

    ref_paths = set(original.paths()) | set(reference.paths())
    cand_paths = set(candidate.paths())
    if cand_paths != set(reference.paths()):
        log.warning(
            f"PathMismatch: missing from candidate {sorted(set(reference.paths()) - cand_paths)}, "
            f"extra in candidate {sorted(cand_paths - set(reference.paths()))}"
        )

    n_ref = n_cand = 0
    exact_ids, location_ids = set(), set()

    for path in sorted(ref_paths | cand_paths):
        old = original.get(path)
        ref = reference.get(path)
        cand = candidate.get(path)

        ref_blocks = _drop_ignored(change_blocks(old, ref), ignore)
        cand_blocks = _drop_ignored(change_blocks(old, cand), ignore) if cand is not None else []
        n_ref += len(ref_blocks)
        n_cand += len(cand_blocks)

        exact, location = _match_file(ref_blocks, cand_blocks)
        exact_ids.update((path, *b.old_range) for b in exact)
        location_ids.update((path, *b.old_range) for b in location)

    return make_report(n_ref, n_cand, exact_ids, location_ids)


def union_runs(reports):
    """Cumulative report after runs 1..k for every k; matched sets are unions of block ids."""
    if not reports:
        raise ValueError("union_runs needs at least one run")

    out = []
    exact, location = set(), set()
    candidates = 0
    for r in reports:
        exact |= r.exact_ids
        location |= r.location_ids
        candidates += r.candidate_blocks
        out.append(make_report(reports[0].reference_blocks, candidates, exact, location, with_precision=False))
    return out


def evaluate_runs(original, reference, candidates, ignore=()):
    """(per-run reports, cumulative reports) for a list of candidate FileSets."""
    per_run = [match_edits(original, reference, c, ignore) for c in candidates]
    return per_run, union_runs(per_run)


# ================= REPORTS =================

def edit_reports_frame(per_run, cumulative):
    rows = []
    for k, (r, c) in enumerate(zip(per_run, cumulative), 1):
        rows.append({
            "run": k,
            "reference_blocks": r.reference_blocks,
            "candidate_blocks": r.candidate_blocks,
            "matched_exact": r.matched_exact,
            "matched_location": r.matched_location,
            "recall": r.recall,
            "precision": r.precision,
            "location_accuracy": r.location_accuracy,
            "cumulative_exact": c.matched_exact,
            "cumulative_location": c.matched_location,
            "cumulative_recall": c.recall,
            "cumulative_location_accuracy": c.location_accuracy,
        })
    return pd.DataFrame(rows)


def write_edit_reports(per_run, cumulative, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    write_frame(edit_reports_frame(per_run, cumulative), os.path.join(out_dir, "edit_match.csv"))
    with open(os.path.join(out_dir, "edit_match.json"), "w", encoding="utf-8") as f:
        json.dump({
            "runs": [r.to_dict() for r in per_run],
            "cumulative": [c.to_dict() for c in cumulative],
        }, f, indent=2)


def write_test_reports(reports, out_dir, labels=None):
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i, r in enumerate(reports):
        row = {"run": labels[i] if labels else i + 1}
        row.update(r.to_dict())
        rows.append(row)
    write_frame(pd.DataFrame(rows), os.path.join(out_dir, "tests.csv"))
    with open(os.path.join(out_dir, "tests.json"), "w", encoding="utf-8") as f:
        json.dump({"runs": rows, "mean_passed": mean_passed(reports)}, f, indent=2)
