"""
benchcomp.py

Diff-comprehension benchmark: does a model count injected errors better from
two full files or from one file plus a diff?

Each question concatenates 5 functions sampled from a corpus (FileA), the
same functions with k of them swapped for known-buggy alternates (FileB) and
the unified diff between the two (FileC). The model is asked for k, once
with FileA+FileB ("baseline") and once with FileA+FileC ("default").
"""

import ast
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pandas as pd

from diff_engine import render_unified
from errors import CorpusTooSmall, LengthMismatch, LlmError
from filesets import FileEntry
from llm_client import ChatRequest
from prompt_builder import Trial, build_bench_prompt
from utils import get_logger, write_frame

log = get_logger("benchcomp")


# ================= CONFIG =================

FUNCTIONS_PER_QUESTION = 5
DIGITS = ("0", "1", "2", "3", "4", "5")
DEFAULT_FLOOR = 0.5
DEFAULT_CONTEXT = 3

# result-table names for the two trials
TRIAL_LABELS = {
    Trial.CODE_PAIR: "baseline",
    Trial.DIFF_PAIR: "default",
}

ANSWER_RE = re.compile(r"\b([0-5])\b")


# ================= CORPUS =================

@dataclass(frozen=True)
class CorpusItem:
    id: str
    correct: str
    alternate: str
    erroneous: bool


@dataclass(frozen=True)
class FunctionGroup:
    id: str
    correct: str
    correct_alternates: tuple = ()
    erroneous_alternates: tuple = ()


@dataclass(frozen=True)
class FunctionCorpus:
    items: tuple = ()

    @classmethod
    def load(cls, path):
        items = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                row = json.loads(line)
                try:
                    items.append(CorpusItem(row["id"], row["correct"], row["alternate"], bool(row["erroneous"])))
                except KeyError as e:
                    raise ValueError(f"{path}:{lineno}: missing field {e}")
        return cls(tuple(items))

    def groups(self):
        """Per function id, in first-seen order."""
        order = []
        correct, good, bad = {}, {}, {}
        for item in self.items:
            if item.id not in correct:
                order.append(item.id)
                correct[item.id] = item.correct
                good[item.id], bad[item.id] = [], []
            (bad if item.erroneous else good)[item.id].append(item.alternate)
        return [FunctionGroup(i, correct[i], tuple(good[i]), tuple(bad[i])) for i in order]

    def eligible(self):
        return [g for g in self.groups() if g.erroneous_alternates]


# ================= DOCSTRINGS =================

def _docstring_node(node):
    body = getattr(node, "body", None)
    if not body:
        return None
    first = body[0]
    if isinstance(first, ast.Expr) and isinstance(first.value, ast.Constant) and isinstance(first.value.value, str):
        return first
    return None


@lru_cache(maxsize=4096)
def strip_docstrings(source):
    """Drop module, class and function docstrings; a docstring-only body becomes `pass`."""
    tree = ast.parse(source)
    lines = source.splitlines(keepends=True)
    edits = []
    for node in ast.walk(tree):
        if not isinstance(node, (ast.Module, ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            continue
        doc = _docstring_node(node)
        if doc is None:
            continue
        replacement = []
        if len(node.body) == 1 and not isinstance(node, ast.Module):
            replacement = [" " * doc.col_offset + "pass\n"]
        edits.append((doc.lineno, doc.end_lineno, replacement))

    for start, end, replacement in sorted(edits, reverse=True):
        lines[start - 1:end] = replacement
    return "".join(lines)


def has_docstring(source):
    tree = ast.parse(source)
    return any(
        _docstring_node(node) is not None
        for node in ast.walk(tree)
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef))
    )


def function_names(source):
    tree = ast.parse(source)
    return [n.name for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]


# ================= QUESTIONS =================

@dataclass(frozen=True)
class BenchQuestion:
    qid: int
    file_a: str
    file_b: str
    file_c: str
    true_count: int
    seed: int
    function_ids: tuple = ()
    erroneous_positions: tuple = ()


def _join(parts):
    return "\n\n".join(p.strip("\n") for p in parts) + "\n"


def make_question(groups, qid, seed, context=DEFAULT_CONTEXT):
    rng = np.random.default_rng([seed, qid])
    picked = [groups[int(i)] for i in rng.choice(len(groups), FUNCTIONS_PER_QUESTION, replace=False)]
    k = int(rng.integers(0, FUNCTIONS_PER_QUESTION + 1))
    bad = sorted(int(p) for p in rng.choice(FUNCTIONS_PER_QUESTION, k, replace=False))

    a_parts, b_parts = [], []
    for pos, group in enumerate(picked):
        a_parts.append(strip_docstrings(group.correct))
        if pos in bad:
            alt = group.erroneous_alternates[int(rng.integers(0, len(group.erroneous_alternates)))]
        elif group.correct_alternates:
            alt = group.correct_alternates[int(rng.integers(0, len(group.correct_alternates)))]
        else:
            alt = group.correct
        b_parts.append(strip_docstrings(alt))

    file_a, file_b = _join(a_parts), _join(b_parts)
    file_c = render_unified(FileEntry("FileA.py", file_a), FileEntry("FileB.py", file_b), context)
    return BenchQuestion(qid, file_a, file_b, file_c, k, seed, tuple(g.id for g in picked), tuple(bad))


def generate_questions(corpus, n, seed):
    """n questions, reproducible from (corpus, n, seed); question i depends only on (seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    groups = corpus.eligible()
    if len(groups) < FUNCTIONS_PER_QUESTION:
        raise CorpusTooSmall(
            f"{len(groups)} functions with a buggy alternate; need at least {FUNCTIONS_PER_QUESTION}"
        )
    return [make_question(groups, i, seed) for i in range(n)]


def write_questions(questions, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for q in questions:
            f.write(json.dumps(asdict(q)) + "\n")


def read_questions(path):
    with open(path, encoding="utf-8") as f:
        rows = [json.loads(line) for line in f if line.strip()]
    return [
        BenchQuestion(**{**r, "function_ids": tuple(r["function_ids"]), "erroneous_positions": tuple(r["erroneous_positions"])})
        for r in rows
    ]


# ================= ANSWERS =================

def weighted_answer(token_probs, floor=DEFAULT_FLOOR):
    """
    Σ t·p(t) over the digit tokens 0-5, renormalized to the digit mass.
    None when the digit mass is below floor.
    """
    mass = {}
    for token, p in token_probs:
        if p < 0:
            raise ValueError("negative probability")
        t = (token or "").strip()
        if t in DIGITS:
            mass[t] = mass.get(t, Fraction(0)) + Fraction(p)

    total = sum(mass.values(), Fraction(0))
    if total == 0 or total < Fraction(floor):
        return None
    return float(sum(int(t) * p for t, p in mass.items()) / total)


def parse_answer(text):
    m = ANSWER_RE.search(text or "")
    return int(m.group(1)) if m else None


def ask(question, trial, client, model, floor=DEFAULT_FLOOR, temperature=1.0):
    """
    One answer: weighted over token probabilities when the provider gives them
    (None below the digit-mass floor), parsed from the text otherwise.
    """
    trial = Trial(trial)
    second = question.file_b if trial is Trial.CODE_PAIR else question.file_c
    system, user = build_bench_prompt(trial, question.file_a, second)
    req = ChatRequest(
        model=model,
        system=system,
        user=user,
        temperature=temperature,
        max_output_tokens=8,
        want_token_probs=True,
    )
    resp = client.complete(req, case="bench", method=TRIAL_LABELS[trial])

    if resp.token_probs:
        return weighted_answer(resp.token_probs, floor), resp.text
    return parse_answer(resp.text), resp.text


def run_trials(questions, client, model, trials=(Trial.CODE_PAIR, Trial.DIFF_PAIR), floor=DEFAULT_FLOOR):
    """{trial label: [answer or None per question]}; provider errors count as invalid answers."""
    out = {}
    for trial in trials:
        trial = Trial(trial)
        label = TRIAL_LABELS[trial]
        answers = []
        for q in questions:
            try:
                answer, _ = ask(q, trial, client, model, floor)
            except LlmError as e:
                log.warning(f"{label} q{q.qid}: {type(e).__name__}: {e}")
                answer = None
            answers.append(answer)
        out[label] = answers
        log.info(f"{model} {label}: {sum(a is not None for a in answers)}/{len(answers)} valid answers")
    return out


# ================= SCORING =================

@dataclass(frozen=True)
class BenchScore:
    answers: tuple
    mae: float | None
    accuracy: float | None
    invalid_rate: float
    abs_errors: tuple = field(default=(), repr=False)


def round_half_up(x):
    return int(math.floor(x + 0.5))


def score(questions, answers):
    if len(questions) != len(answers):
        raise LengthMismatch(f"{len(questions)} questions but {len(answers)} answers")
    if not questions:
        return BenchScore((), None, None, 0.0)

    truths = np.array([q.true_count for q in questions], dtype=float)
    valid = np.array([a is not None for a in answers])
    values = np.array([a if a is not None else np.nan for a in answers], dtype=float)
    errors = np.abs(values - truths)

    invalid_rate = float(1.0 - valid.mean())
    if not valid.any():
        return BenchScore(tuple(answers), None, None, invalid_rate, tuple(errors.tolist()))

    mae = float(errors[valid].mean())
    hits = [round_half_up(a) == q.true_count for q, a in zip(questions, answers) if a is not None]
    accuracy = float(np.mean(hits))
    return BenchScore(tuple(answers), mae, accuracy, invalid_rate, tuple(errors.tolist()))


def score_table(model, results, questions):
    """Rows in the (tested, algorithm, MAE, accuracy) layout, one per trial label."""
    rows = []
    for label, answers in results.items():
        s = score(questions, answers)
        rows.append({
            "tested": model,
            "algorithm": label,
            "MAE": None if s.mae is None else round(s.mae, 3),
            "accuracy": None if s.accuracy is None else round(s.accuracy, 3),
            "invalid_rate": round(s.invalid_rate, 3),
        })
    return pd.DataFrame(rows, columns=["tested", "algorithm", "MAE", "accuracy", "invalid_rate"])


def per_question_frame(model, results, questions):
    """Absolute error per question and trial, for paired tests downstream."""
    rows = []
    for label, answers in results.items():
        s = score(questions, answers)
        for q, a, err in zip(questions, answers, s.abs_errors):
            rows.append({
                "tested": model,
                "algorithm": label,
                "qid": q.qid,
                "true_count": q.true_count,
                "answer": a,
                "abs_error": None if a is None else err,
            })
    return pd.DataFrame(rows)


def write_scores(model, results, questions, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    write_frame(score_table(model, results, questions), os.path.join(out_dir, "bench_scores.csv"))
    write_frame(per_question_frame(model, results, questions), os.path.join(out_dir, "bench_errors.csv"))
