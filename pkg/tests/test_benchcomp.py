import os
from collections import Counter

import pytest

from benchcomp import (
    BenchQuestion,
    CorpusItem,
    FunctionCorpus,
    ask,
    function_names,
    generate_questions,
    has_docstring,
    parse_answer,
    read_questions,
    round_half_up,
    run_trials,
    score,
    score_table,
    strip_docstrings,
    weighted_answer,
    write_questions,
    write_scores,
)
from diff_engine import apply, parse_unified, render_unified
from errors import CorpusTooSmall, LengthMismatch
from filesets import FileEntry, FileSet
from llm_client import MockTransport, UsageLedger
from prompt_builder import Trial

CORPUS_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "bench_corpus.jsonl")


@pytest.fixture(scope="module")
def corpus():
    return FunctionCorpus.load(CORPUS_PATH)


def parts(file_text):
    return file_text.rstrip("\n").split("\n\n")


def q(true_count, qid=0):
    return BenchQuestion(qid, "", "", "", true_count, 0)


# ================= CORPUS =================

def test_shipped_corpus(corpus):
    groups = corpus.groups()
    assert len(groups) == 20
    assert len(corpus.eligible()) == 20
    assert any(g.correct_alternates for g in groups)


def test_corpus_rows_need_every_field(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "f", "correct": "def f(): pass\\n"}\n', encoding="utf-8")
    with pytest.raises(ValueError):
        FunctionCorpus.load(str(path))


def test_too_small_corpus():
    items = tuple(CorpusItem(f"f{i}", f"def f{i}():\n    return {i}\n", f"def f{i}():\n    return -1\n", True) for i in range(4))
    with pytest.raises(CorpusTooSmall):
        generate_questions(FunctionCorpus(items), 1, 0)


# ================= DOCSTRINGS =================

def test_strip_docstrings():
    src = 'def f():\n    """Doc."""\n    return 1\n'
    assert strip_docstrings(src) == "def f():\n    return 1\n"


def test_docstring_only_body_becomes_pass():
    src = 'def f():\n    """Only\n    a docstring.\n    """\n'
    assert strip_docstrings(src) == "def f():\n    pass\n"


def test_module_and_class_docstrings():
    src = '"""Module."""\nclass A:\n    """A."""\n    x = 1\n'
    out = strip_docstrings(src)
    assert out == "class A:\n    x = 1\n"
    assert not has_docstring(out)


# ================= GENERATION =================

def test_generation_is_deterministic(corpus):
    assert generate_questions(corpus, 20, 7) == generate_questions(corpus, 20, 7)
    assert generate_questions(corpus, 20, 7) != generate_questions(corpus, 20, 8)


def test_question_depends_only_on_seed_and_index(corpus):
    assert generate_questions(corpus, 10, 3)[:5] == generate_questions(corpus, 5, 3)


def test_question_structure(corpus):
    groups = {g.id: g for g in corpus.eligible()}
    for question in generate_questions(corpus, 200, 11):
        ids = list(question.function_ids)
        assert len(set(ids)) == 5
        assert function_names(question.file_a) == function_names(question.file_b) == ids
        assert not has_docstring(question.file_a)
        assert not has_docstring(question.file_b)
        assert question.true_count == len(question.erroneous_positions)

        for pos, part in enumerate(parts(question.file_b)):
            g = groups[ids[pos]]
            buggy = {strip_docstrings(t).strip("\n") for t in g.erroneous_alternates}
            fine = {strip_docstrings(t).strip("\n") for t in (g.correct, *g.correct_alternates)}
            assert part in (buggy if pos in question.erroneous_positions else fine)


def test_zero_error_question_uses_correct_code_only(corpus):
    groups = {g.id: g for g in corpus.eligible()}
    zero = [x for x in generate_questions(corpus, 200, 5) if x.true_count == 0]
    assert zero
    for question in zero:
        for fid, part in zip(question.function_ids, parts(question.file_b)):
            g = groups[fid]
            assert part not in {strip_docstrings(t).strip("\n") for t in g.erroneous_alternates}


def test_file_c_is_the_diff_of_a_and_b(corpus):
    for question in generate_questions(corpus, 100, 21):
        expected = render_unified(FileEntry("FileA.py", question.file_a), FileEntry("FileB.py", question.file_b), 3)
        assert question.file_c == expected
        if question.file_c:
            rebuilt = apply(parse_unified(question.file_c), FileSet.from_texts({"FileA.py": question.file_a}))
            assert rebuilt.get("FileB.py").text == question.file_b


def test_error_counts_are_uniform(corpus):
    counts = Counter(x.true_count for x in generate_questions(corpus, 6000, 2024))
    assert set(counts) == {0, 1, 2, 3, 4, 5}
    assert all(880 <= counts[k] <= 1120 for k in range(6))


def test_questions_file(corpus, tmp_path):
    questions = generate_questions(corpus, 3, 1)
    path = str(tmp_path / "q.jsonl")
    write_questions(questions, path)
    assert read_questions(path) == questions


# ================= ANSWERS =================

def test_weighted_answer_one_hot():
    assert weighted_answer([("3", 1.0)]) == 3.0


def test_weighted_answer_uniform():
    assert weighted_answer([(str(t), 1 / 6) for t in range(6)]) == 2.5


def test_weighted_answer_mixture():
    assert weighted_answer([("2", 0.9), ("4", 0.1)]) == pytest.approx(2.2)


def test_weighted_answer_renormalizes_digit_mass():
    assert weighted_answer([(" 1", 0.3), ("3", 0.3), ("three", 0.4)]) == pytest.approx(2.0)


def test_weighted_answer_below_floor():
    assert weighted_answer([("3", 0.3), ("The", 0.7)]) is None
    assert weighted_answer([("The", 1.0)]) is None
    assert weighted_answer([("9", 1.0)]) is None


def test_weighted_answer_rejects_negative_mass():
    with pytest.raises(ValueError):
        weighted_answer([("1", -0.1)])


@pytest.mark.parametrize("text, expected", [
    ("3", 3),
    ("There are 2 functions with errors.", 2),
    ("12", None),
    ("none of them", None),
    ("", None),
])
def test_parse_answer(text, expected):
    assert parse_answer(text) == expected


# ================= SCORING =================

def test_round_half_up():
    assert [round_half_up(x) for x in (0.49, 0.5, 1.5, 2.5, 4.99)] == [0, 1, 2, 3, 5]


def test_exact_answers_score_perfectly():
    s = score([q(1), q(4), q(0)], [1, 4, 0])
    assert (s.mae, s.accuracy, s.invalid_rate) == (0.0, 1.0, 0.0)


def test_hand_worked_score():
    s = score([q(0), q(5)], [1.0, 4.0])
    assert s.mae == 1.0
    assert s.accuracy == 0.0


def test_weighted_answers_round_for_accuracy():
    s = score([q(3), q(2)], [2.6, 2.4])
    assert s.accuracy == 1.0
    assert s.mae == pytest.approx(0.4)


def test_invalid_answers_are_excluded():
    s = score([q(2), q(3)], [2, None])
    assert (s.mae, s.accuracy, s.invalid_rate) == (0.0, 1.0, 0.5)

    s = score([q(2)], [None])
    assert s.mae is None and s.accuracy is None and s.invalid_rate == 1.0


def test_score_length_mismatch():
    with pytest.raises(LengthMismatch):
        score([q(1)], [1, 2])


def test_score_ignores_question_order():
    questions = [q(k, i) for i, k in enumerate([0, 3, 5, 2, 1])]
    answers = [0.4, 2.5, 4.0, None, 1.2]
    forward = score(questions, answers)
    backward = score(questions[::-1], answers[::-1])
    assert forward.mae == pytest.approx(backward.mae)
    assert forward.accuracy == backward.accuracy


def test_score_table_layout(tmp_path):
    questions = [q(1), q(2)]
    table = score_table("gpt-4o", {"baseline": [1, 3], "default": [1, 2]}, questions)
    assert list(table.columns) == ["tested", "algorithm", "MAE", "accuracy", "invalid_rate"]
    assert table.loc[1, "MAE"] == 0.0 and table.loc[1, "accuracy"] == 1.0
    assert table.loc[0, "MAE"] == 0.5

    write_scores("gpt-4o", {"baseline": [1, 3]}, questions, str(tmp_path))
    assert (tmp_path / "bench_scores.csv").exists()
    assert (tmp_path / "bench_errors.csv").read_text(encoding="utf-8").startswith("tested,algorithm,qid,")


# ================= TRIALS =================

def test_ask_uses_token_probabilities(corpus, make_client):
    question = generate_questions(corpus, 1, 0)[0]
    transport = MockTransport(reply="3", token_probs=[("3", 0.6), ("2", 0.4)])
    answer, text = ask(question, Trial.DIFF_PAIR, make_client(transport), "gpt-4o")
    assert answer == pytest.approx(2.6)
    assert text == "3"
    user = transport.calls[0]["payload"]["messages"][-1]["content"]
    assert question.file_c in user
    assert transport.calls[0]["payload"]["messages"][0]["role"] == "system"


def test_ask_low_digit_mass_is_invalid(corpus, make_client):
    question = generate_questions(corpus, 1, 0)[0]
    transport = MockTransport(reply="The answer is 3", token_probs=[("The", 0.9), ("3", 0.1)])
    answer, text = ask(question, Trial.DIFF_PAIR, make_client(transport), "gpt-4o")
    assert answer is None
    assert text == "The answer is 3"


def test_ask_falls_back_to_text(corpus, make_client):
    question = generate_questions(corpus, 1, 0)[0]
    transport = MockTransport(reply="I count 4.")
    answer, _ = ask(question, Trial.CODE_PAIR, make_client(transport), "gpt-4o")
    assert answer == 4
    assert question.file_b in transport.calls[0]["payload"]["messages"][-1]["content"]


def test_run_trials_labels_and_errors(corpus, make_client):
    questions = generate_questions(corpus, 3, 0)
    ledger = UsageLedger()
    transport = MockTransport(reply="2", failures=[401])
    results = run_trials(questions, make_client(transport, ledger=ledger), "gpt-4o")

    assert list(results) == ["baseline", "default"]
    assert results["baseline"] == [None, 2, 2]
    assert results["default"] == [2, 2, 2]
    assert {r.method for r in ledger.records()} == {"baseline", "default"}
