"""
diff_engine.py

Line-level edit scripts (Myers greedy shortest-edit-script), unified diff
render / parse / apply, and change-block extraction for edit matching.

Lines keep their "\\n" terminator; a final line without one is rendered with
the "\\ No newline at end of file" marker and parsed back to a bare line.
"""

import re
from dataclasses import dataclass, field
from enum import Enum

from errors import ContextMismatch, LineCountMismatch, MalformedHunkHeader
from filesets import FileEntry, FileSet, split_lines
from utils import get_logger

log = get_logger("diff_engine")


# ================= CONFIG =================

DEFAULT_CONTEXT = 3
NO_NEWLINE_MARKER = "\\ No newline at end of file"
DEV_NULL = "/dev/null"

HUNK_HEADER = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


# ================= TYPES =================

class Op(Enum):
    KEEP = " "
    DELETE = "-"
    INSERT = "+"


@dataclass(frozen=True)
class EditScript:
    ops: tuple
    lcs_length: int

    def old_items(self):
        return [item for op, item in self.ops if op is not Op.INSERT]

    def new_items(self):
        return [item for op, item in self.ops if op is not Op.DELETE]

    def kept(self):
        return [item for op, item in self.ops if op is Op.KEEP]


@dataclass(frozen=True)
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: tuple


@dataclass(frozen=True)
class FileDiff:
    old_path: str | None
    new_path: str | None
    hunks: tuple = ()

    @property
    def path(self):
        return self.new_path if self.new_path is not None else self.old_path


@dataclass(frozen=True)
class UnifiedDiff:
    files: tuple = ()
    context_width: int = field(default=DEFAULT_CONTEXT, compare=False)

    def is_empty(self):
        return not self.files

    def render(self):
        return render_diff(self)


@dataclass(frozen=True)
class ChangeBlock:
    old_range: tuple
    new_range: tuple
    removed: tuple
    added: tuple

    @property
    def old_start(self):
        return self.old_range[0]


# ================= MYERS =================

def _step(prev, k, n, m):
    """
    Pick the predecessor for diagonal k from the previous frontier.
    Returns (x, moved_down) or None when neither neighbour stays on the grid.
    """
    x_down = prev.get(k + 1)
    if x_down is not None and x_down - k > m:
        x_down = None

    x_right = prev.get(k - 1)
    if x_right is not None:
        x_right += 1
        if x_right > n:
            x_right = None

    if x_down is None and x_right is None:
        return None
    if x_right is None or (x_down is not None and x_down >= x_right):
        return x_down, True
    return x_right, False


def _shortest_edit(a, b):
    n, m = len(a), len(b)

    x = 0
    while x < n and x < m and a[x] == b[x]:
        x += 1
    v = {0: x}
    trace = [v]
    if x >= n and x >= m:
        return trace

    for d in range(1, n + m + 1):
        prev = v
        v = {}
        for k in range(-d, d + 1, 2):
            choice = _step(prev, k, n, m)
            if choice is None:
                continue
            x = choice[0]
            y = x - k
            while x < n and y < m and a[x] == b[y]:
                x += 1
                y += 1
            v[k] = x
            if x >= n and y >= m:
                trace.append(v)
                return trace
        trace.append(v)

    return trace


def _backtrack(trace, a, b):
    n, m = len(a), len(b)
    x, y = n, m
    ops = []

    for d in range(len(trace) - 1, 0, -1):
        prev = trace[d - 1]
        k = x - y
        start_x, down = _step(prev, k, n, m)
        prev_k = k + 1 if down else k - 1
        prev_x = prev[prev_k]
        prev_y = prev_x - prev_k

        mid_x = start_x
        mid_y = start_x - k
        while x > mid_x and y > mid_y:
            ops.append((Op.KEEP, a[x - 1]))
            x -= 1
            y -= 1

        if down:
            ops.append((Op.INSERT, b[prev_y]))
        else:
            ops.append((Op.DELETE, a[prev_x]))
        x, y = prev_x, prev_y

    while x > 0 and y > 0:
        ops.append((Op.KEEP, a[x - 1]))
        x -= 1
        y -= 1

    ops.reverse()
    return ops


def _canonical(ops):
    """Within every run of changes, deletions come before insertions."""
    out = []
    deleted, inserted = [], []
    for op, item in ops:
        if op is Op.KEEP:
            out.extend(deleted)
            out.extend(inserted)
            deleted, inserted = [], []
            out.append((op, item))
        elif op is Op.DELETE:
            deleted.append((op, item))
        else:
            inserted.append((op, item))
    out.extend(deleted)
    out.extend(inserted)
    return out


def myers_diff(old, new):
    """Minimal insert/delete edit script between two sequences of hashable items."""
    old, new = list(old), list(new)

    prefix = 0
    while prefix < len(old) and prefix < len(new) and old[prefix] == new[prefix]:
        prefix += 1
    suffix = 0
    while (suffix < len(old) - prefix and suffix < len(new) - prefix
           and old[-1 - suffix] == new[-1 - suffix]):
        suffix += 1

    a = old[prefix:len(old) - suffix]
    b = new[prefix:len(new) - suffix]

    if not a:
        middle = [(Op.INSERT, item) for item in b]
    elif not b:
        middle = [(Op.DELETE, item) for item in a]
    else:
        middle = _backtrack(_shortest_edit(a, b), a, b)

    ops = [(Op.KEEP, item) for item in old[:prefix]]
    ops += middle
    ops += [(Op.KEEP, item) for item in old[len(old) - suffix:]]
    ops = _canonical(ops)

    return EditScript(tuple(ops), sum(1 for op, _ in ops if op is Op.KEEP))


# Patience diff would slot in here.
ALGORITHMS = {
    "myers": myers_diff,
}


def edit_script(old, new, algorithm="myers"):
    try:
        fn = ALGORITHMS[algorithm]
    except KeyError:
        raise ValueError(f"unknown diff algorithm {algorithm!r}; known: {sorted(ALGORITHMS)}")
    return fn(old, new)


# ================= HUNKS =================

def _as_text(entry):
    if entry is None:
        return ""
    if isinstance(entry, FileEntry):
        return entry.text
    if isinstance(entry, bytes):
        return entry.decode("utf-8")
    return entry


def _hunks(ops, context):
    # change runs as [i, j) slices of ops
    runs = []
    i = 0
    while i < len(ops):
        if ops[i][0] is Op.KEEP:
            i += 1
            continue
        j = i
        while j < len(ops) and ops[j][0] is not Op.KEEP:
            j += 1
        runs.append((i, j))
        i = j

    groups = []
    for run in runs:
        if groups and run[0] - groups[-1][-1][1] <= 2 * context:
            groups[-1].append(run)
        else:
            groups.append([run])

    # 0-based old/new positions before each op
    old_pos, new_pos = [], []
    o = n = 0
    for op, _ in ops:
        old_pos.append(o)
        new_pos.append(n)
        if op is not Op.INSERT:
            o += 1
        if op is not Op.DELETE:
            n += 1

    hunks = []
    for group in groups:
        lo = max(0, group[0][0] - context)
        hi = min(len(ops), group[-1][1] + context)
        lines = tuple((op.value, item) for op, item in ops[lo:hi])
        old_len = sum(1 for tag, _ in lines if tag != "+")
        new_len = sum(1 for tag, _ in lines if tag != "-")
        old_start = old_pos[lo] + 1 if old_len else old_pos[lo]
        new_start = new_pos[lo] + 1 if new_len else new_pos[lo]
        hunks.append(Hunk(old_start, old_len, new_start, new_len, lines))

    return tuple(hunks)


def diff_entries(old, new, context=DEFAULT_CONTEXT, algorithm="myers"):
    """FileDiff between two entries; either side may be None (created / deleted file)."""
    if context < 0:
        raise ValueError("context must be >= 0")
    script = edit_script(split_lines(_as_text(old)), split_lines(_as_text(new)), algorithm)
    return FileDiff(
        old.path if old is not None else None,
        new.path if new is not None else None,
        _hunks(script.ops, context),
    )


def diff_filesets(old, new, context=DEFAULT_CONTEXT, algorithm="myers"):
    """One multi-file diff; file sections ordered by path, identical files skipped."""
    files = []
    for path in sorted(set(old.paths()) | set(new.paths())):
        a, b = old.get(path), new.get(path)
        if a is not None and b is not None and a.content == b.content:
            continue
        files.append(diff_entries(a, b, context, algorithm))
    return UnifiedDiff(tuple(files), context)


# ================= RENDER =================

def _range(start, length):
    if length == 1:
        return f"{start}"
    return f"{start},{length}"


def _render_file(fd):
    out = [
        f"--- {'a/' + fd.old_path if fd.old_path is not None else DEV_NULL}\n",
        f"+++ {'b/' + fd.new_path if fd.new_path is not None else DEV_NULL}\n",
    ]
    for h in fd.hunks:
        out.append(f"@@ -{_range(h.old_start, h.old_len)} +{_range(h.new_start, h.new_len)} @@\n")
        for tag, text in h.lines:
            out.append(tag + text)
            if not text.endswith("\n"):
                out.append("\n" + NO_NEWLINE_MARKER + "\n")
    return "".join(out)


def render_diff(diff):
    parts = []
    for fd in diff.files:
        # an identical pair has nothing to say; created/deleted empty files keep their headers
        if not fd.hunks and fd.old_path is not None and fd.new_path is not None:
            continue
        parts.append(_render_file(fd))
    return "".join(parts)


def render_unified(old, new, context=DEFAULT_CONTEXT):
    """Unified diff text of one file pair; "" when identical."""
    fd = diff_entries(old, new, context)
    if not fd.hunks:
        return ""
    return _render_file(fd)


# ================= PARSE =================

def _header_path(raw, prefix):
    path = raw.rstrip("\n").split("\t", 1)[0].rstrip()
    if path == DEV_NULL:
        return None
    if path.startswith(prefix):
        path = path[len(prefix):]
    return path


def _parse_hunk(lines, i):
    header = lines[i]
    m = HUNK_HEADER.match(header)
    if not m:
        raise MalformedHunkHeader(f"line {i + 1}: {header.rstrip()!r}")

    old_start = int(m.group(1))
    old_len = int(m.group(2)) if m.group(2) is not None else 1
    new_start = int(m.group(3))
    new_len = int(m.group(4)) if m.group(4) is not None else 1
    i += 1

    body = []
    old_seen = new_seen = 0
    while old_seen < old_len or new_seen < new_len:
        if i >= len(lines):
            raise LineCountMismatch(f"hunk {header.rstrip()!r} ends early")
        line = lines[i]
        if line.startswith("\\"):
            if body:
                tag, text = body[-1]
                body[-1] = (tag, text.rstrip("\n"))
            i += 1
            continue
        if line == "\n":
            line = " \n"
        tag = line[:1]
        if tag not in (" ", "-", "+"):
            raise LineCountMismatch(f"line {i + 1}: unexpected {line.rstrip()!r} inside hunk {header.rstrip()!r}")
        if tag != "+":
            old_seen += 1
        if tag != "-":
            new_seen += 1
        if old_seen > old_len or new_seen > new_len:
            raise LineCountMismatch(f"hunk {header.rstrip()!r} body exceeds its header counts")
        body.append((tag, line[1:]))
        i += 1

    if i < len(lines) and lines[i].startswith("\\") and body:
        tag, text = body[-1]
        body[-1] = (tag, text.rstrip("\n"))
        i += 1

    return Hunk(old_start, old_len, new_start, new_len, tuple(body)), i


def parse_unified(text, context=DEFAULT_CONTEXT):
    lines = split_lines(text)
    files = []
    i = 0

    while i < len(lines):
        line = lines[i]

        if line.startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ "):
            old_path = _header_path(line[4:], "a/")
            new_path = _header_path(lines[i + 1][4:], "b/")
            i += 2
            hunks = []
            while i < len(lines) and lines[i].startswith("@@"):
                hunk, i = _parse_hunk(lines, i)
                hunks.append(hunk)
            files.append(FileDiff(old_path, new_path, tuple(hunks)))
            continue

        if line.startswith("@@"):
            raise MalformedHunkHeader(f"line {i + 1}: hunk header outside a file section")
        if line[:1] in (" ", "-", "+", "\\"):
            raise LineCountMismatch(f"line {i + 1}: {line.rstrip()!r} is outside every hunk")

        # preamble such as "diff --git" / "index ..." lines
        i += 1

    return UnifiedDiff(tuple(files), context)


# ================= APPLY =================

def _apply_hunks(text, hunks, path):
    lines = split_lines(text)
    out = []
    pos = 0

    for h in hunks:
        start = h.old_start - 1 if h.old_len else h.old_start
        if start < pos or start > len(lines):
            raise ContextMismatch(f"{path}: hunk at -{h.old_start} is out of order or past end of file")
        out.extend(lines[pos:start])
        pos = start
        for tag, line in h.lines:
            if tag != "+":
                if pos >= len(lines) or lines[pos] != line:
                    raise ContextMismatch(f"{path}: line {pos + 1} does not match hunk at -{h.old_start}")
                pos += 1
            if tag != "-":
                out.append(line)

    out.extend(lines[pos:])
    return "".join(out)


def apply(diff, old):
    """Apply a multi-file diff to a FileSet and return the new FileSet."""
    files = old.as_texts()

    for fd in diff.files:
        if fd.old_path is None:
            if fd.new_path in files:
                raise ContextMismatch(f"{fd.new_path}: diff creates a file that already exists")
            source = ""
        else:
            if fd.old_path not in files:
                raise ContextMismatch(f"{fd.old_path}: file missing from the old side")
            source = files.pop(fd.old_path)

        result = _apply_hunks(source, fd.hunks, fd.path)
        if fd.new_path is not None:
            files[fd.new_path] = result

    return FileSet.from_texts(files)


# ================= CHANGE BLOCKS =================

def change_blocks(old, new, algorithm="myers"):
    """Maximal runs of consecutive changed lines, with 1-based inclusive ranges.

    A pure insertion before old line p has old_range (p, p - 1); a pure
    deletion has the matching empty new_range.
    """
    script = edit_script(split_lines(_as_text(old)), split_lines(_as_text(new)), algorithm)

    blocks = []
    old_no = new_no = 1
    removed, added = [], []
    run_old = run_new = None

    def flush():
        if removed or added:
            blocks.append(ChangeBlock(
                (run_old, run_old + len(removed) - 1),
                (run_new, run_new + len(added) - 1),
                tuple(removed),
                tuple(added),
            ))

    for op, line in script.ops:
        if op is Op.KEEP:
            flush()
            removed, added = [], []
            run_old = run_new = None
            old_no += 1
            new_no += 1
            continue
        if run_old is None:
            run_old, run_new = old_no, new_no
        if op is Op.DELETE:
            removed.append(line)
            old_no += 1
        else:
            added.append(line)
            new_no += 1
    flush()

    return blocks
