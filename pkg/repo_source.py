"""
repo_source.py

Reads a dependency repository at two git refs into filtered file sets and
builds the single cross-version diff handed to the model.

Git is driven through its plumbing commands (rev-parse, ls-tree, cat-file);
the diff itself is computed by diff_engine on the extracted blobs.
"""

import os
import re
import subprocess
from dataclasses import dataclass
from functools import lru_cache

from diff_engine import UnifiedDiff, diff_filesets
from errors import IoFailure, NotARepository, UnresolvedRef
from filesets import FileEntry, FileSet
from utils import get_logger

log = get_logger("repo_source")

__all__ = [
    "RepoRef", "FileFilter", "FileEntry", "FileSet",
    "resolve", "snapshot", "snapshot_dir", "library_diff", "log_commits",
]


# ================= CONFIG =================

GIT_TIMEOUT = 60    # seconds per git call


# ================= TYPES =================

@dataclass(frozen=True)
class RepoRef:
    repo_path: str
    ref: str = "HEAD"


@dataclass(frozen=True)
class FileFilter:
    include: tuple = ()
    exclude: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "include", tuple(self.include or ()))
        object.__setattr__(self, "exclude", tuple(self.exclude or ()))
        for pattern in self.include + self.exclude:
            _compile_glob(pattern)

    def accepts(self, path):
        if any(_glob_match(path, p) for p in self.exclude):
            return False
        if not self.include:
            return True
        return any(_glob_match(path, p) for p in self.include)


ALL_FILES = FileFilter()


# ================= GLOBS =================

@lru_cache(maxsize=512)
def _compile_glob(pattern):
    """
    '*' and '?' stay inside one path component, '**' crosses them,
    '**/' also matches zero directories.
    """
    if not pattern or not pattern.strip("/"):
        raise ValueError(f"invalid glob pattern {pattern!r}")

    pat = pattern.strip("/")
    out = []
    i = 0
    while i < len(pat):
        c = pat[i]
        if pat.startswith("**/", i):
            out.append("(?:.*/)?")
            i += 3
        elif pat.startswith("**", i):
            out.append(".*")
            i += 2
        elif c == "*":
            out.append("[^/]*")
            i += 1
        elif c == "?":
            out.append("[^/]")
            i += 1
        elif c == "[":
            j = pat.find("]", i + 2)
            if j < 0:
                raise ValueError(f"invalid glob pattern {pattern!r}: unclosed '['")
            body = pat[i + 1:j]
            if body.startswith("!"):
                body = "^" + body[1:]
            out.append("[" + body.replace("\\", "\\\\") + "]")
            i = j + 1
        else:
            out.append(re.escape(c))
            i += 1

    try:
        return re.compile("".join(out) + r"\Z")
    except re.error as e:
        raise ValueError(f"invalid glob pattern {pattern!r}: {e}")


def _glob_match(path, pattern):
    """Whole repo-relative path; recursion only through '**' ('**/*.py', 'docs/**')."""
    return _compile_glob(pattern).match(path) is not None


# ================= GIT =================

def _run_git(repo_path, *args, stdin=None):
    """Run a git command against a local clone, returning stdout bytes."""
    try:
        result = subprocess.run(
            ["git", "-C", repo_path, *args],
            input=stdin,
            capture_output=True,
            timeout=GIT_TIMEOUT,
        )
    except FileNotFoundError:
        raise IoFailure("git executable not found on PATH")
    except subprocess.TimeoutExpired:
        raise IoFailure(f"git {args[0]} timed out after {GIT_TIMEOUT}s")

    if result.returncode != 0:
        raise IoFailure(f"git {args[0]} failed: {result.stderr.decode('utf-8', 'replace').strip()}")
    return result.stdout


def _check_repo(repo_path):
    if not os.path.exists(os.path.join(repo_path, ".git")):
        raise NotARepository(f"{repo_path} has no .git directory")


def resolve(ref):
    """Commit hash the ref points at."""
    _check_repo(ref.repo_path)
    try:
        out = _run_git(ref.repo_path, "rev-parse", "--verify", "--quiet", f"{ref.ref}^{{commit}}")
    except IoFailure:
        raise UnresolvedRef(f"{ref.ref!r} does not name a commit in {ref.repo_path}")

    sha = out.decode("ascii").strip()
    if not sha:
        raise UnresolvedRef(f"{ref.ref!r} does not name a commit in {ref.repo_path}")
    return sha


def _list_blobs(repo_path, commit):
    out = _run_git(repo_path, "ls-tree", "-r", "-z", "--full-name", commit)
    blobs = []
    for record in out.split(b"\0"):
        if not record:
            continue
        meta, _, path = record.partition(b"\t")
        _mode, kind, sha = meta.split(b" ")
        if kind != b"blob":
            continue
        blobs.append((path.decode("utf-8", "surrogateescape"), sha.decode("ascii")))
    return blobs


def _read_blobs(repo_path, shas):
    if not shas:
        return []
    out = _run_git(repo_path, "cat-file", "--batch", stdin="".join(f"{s}\n" for s in shas).encode("ascii"))

    contents = []
    pos = 0
    for sha in shas:
        eol = out.index(b"\n", pos)
        header = out[pos:eol].split(b" ")
        if len(header) != 3:
            raise IoFailure(f"cat-file: unexpected header for {sha}: {out[pos:eol]!r}")
        size = int(header[2])
        start = eol + 1
        contents.append(out[start:start + size])
        pos = start + size + 1
    return contents


def _is_text(path, content):
    if b"\0" in content:
        log.warning(f"Skipping binary file {path}")
        return False
    try:
        content.decode("utf-8")
    except UnicodeDecodeError:
        log.warning(f"Skipping non-UTF-8 file {path}")
        return False
    return True


# ================= SNAPSHOTS =================

def snapshot(ref, file_filter=ALL_FILES):
    """Every text file at the commit that passes the filter, sorted by path."""
    commit = resolve(ref)
    selected = [(p, s) for p, s in _list_blobs(ref.repo_path, commit) if file_filter.accepts(p)]
    contents = _read_blobs(ref.repo_path, [s for _, s in selected])

    entries = [
        FileEntry(path, content)
        for (path, _), content in zip(selected, contents)
        if _is_text(path, content)
    ]
    log.debug(f"snapshot {ref.ref} ({commit[:10]}): {len(entries)} files")
    return FileSet(tuple(entries))


def snapshot_dir(root, file_filter=ALL_FILES):
    """Same as snapshot, over a plain directory tree (.git skipped)."""
    if not os.path.isdir(root):
        raise IoFailure(f"{root} is not a directory")

    entries = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d != ".git")
        for name in filenames:
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, root).replace(os.sep, "/")
            if not file_filter.accepts(rel):
                continue
            try:
                with open(full, "rb") as f:
                    content = f.read()
            except OSError as e:
                raise IoFailure(f"cannot read {full}: {e}")
            if _is_text(rel, content):
                entries.append(FileEntry(rel, content))

    return FileSet(tuple(entries))


def library_diff(old, new, file_filter=ALL_FILES, context=3):
    """One multi-file unified diff of the filtered files between two refs of one repository."""
    if os.path.realpath(old.repo_path) != os.path.realpath(new.repo_path):
        raise ValueError("library_diff needs both refs in the same repository")

    before = snapshot(old, file_filter)
    after = snapshot(new, file_filter)

    if not len(before) and not len(after):
        log.warning(f"EmptySelection: filter {file_filter} matches no files at {old.ref} or {new.ref}")
        return UnifiedDiff((), context)

    diff = diff_filesets(before, after, context)
    log.info(f"library diff {old.ref} -> {new.ref}: {len(diff.files)} changed files")
    return diff


# ================= HISTORY =================

def log_commits(repo_path, ref="HEAD", first_parent=True):
    """[(sha, committer unix time, first parent or None)], oldest first."""
    _check_repo(repo_path)
    args = ["log", "--reverse", "--format=%H%x09%ct%x09%P"]
    if first_parent:
        args.append("--first-parent")
    try:
        out = _run_git(repo_path, *args, ref).decode("utf-8")
    except IoFailure:
        raise UnresolvedRef(f"{ref!r} does not name a commit in {repo_path}")

    commits = []
    for line in out.splitlines():
        if not line.strip():
            continue
        sha, ts, parents = (line.split("\t") + [""])[:3]
        parent = parents.split()[0] if parents.strip() else None
        commits.append((sha, int(ts), parent))
    return commits
