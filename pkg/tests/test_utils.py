import logging

import pandas as pd

from filesets import FileEntry, FileSet, count_lines, split_lines
from utils import append_csv, get_logger, make_session, setup_logging, sha256_text


def test_append_csv_writes_header_once(tmp_path):
    path = str(tmp_path / "nested" / "rows.csv")
    append_csv(path, {"b": 2, "a": 1}, ["a", "b"])
    append_csv(path, {"a": 3, "b": 4}, ["a", "b"])
    df = pd.read_csv(path)
    assert list(df.columns) == ["a", "b"]
    assert df.values.tolist() == [[1, 2], [3, 4]]


def test_sha256_separates_parts():
    assert sha256_text("ab", "c") != sha256_text("a", "bc")
    assert sha256_text("x") == sha256_text("x")


def test_session_does_not_retry_in_adapter():
    session = make_session()
    assert session.get_adapter("https://llm.test").max_retries.total == 0


def test_setup_logging_is_idempotent():
    root = setup_logging()
    setup_logging(verbose=True)
    handlers = [h for h in root.handlers if getattr(h, "_diffmigrate", False)]
    assert len(handlers) == 1
    assert root.level == logging.DEBUG
    assert get_logger("x").name == "diffmigrate.x"


def test_split_lines():
    assert split_lines("") == []
    assert split_lines("a\nb") == ["a\n", "b"]
    assert split_lines("a\n\n") == ["a\n", "\n"]
    assert split_lines("a\r\nb\n") == ["a\r\n", "b\n"]


def test_file_entries():
    assert count_lines(b"") == 0
    assert count_lines(b"a\nb") == 2
    entry = FileEntry("x.py", "é\n")
    assert entry.content == "é\n".encode("utf-8")
    assert entry.line_count == 1

    files = FileSet.from_texts({"b.py": "b\n", "a.py": "a\n"})
    assert files.paths() == ["a.py", "b.py"]
    assert files.get("missing.py") is None
    assert files.total_bytes == 4
