"""
prompt_builder.py

Templates with named {slot} placeholders and the prompt assembly for the
three migration strategies and the two diff-comprehension trials.

Default bodies are embedded below; any of them can be replaced by a template
file whose first line declares its slots:

    #slots: library, library alias, code
    Refactor ... {code}
"""

import re
from dataclasses import dataclass
from enum import Enum

from errors import ArtifactForbidden, ArtifactRequired, MissingSlot, TemplateError, UnknownSlot
from filesets import FileEntry
from utils import get_logger

log = get_logger("prompt_builder")

SLOT_RE = re.compile(r"\{\{|\}\}|\{([^{}\n]+)\}")
SLOTS_HEADER = "#slots:"


class MigrationStrategy(Enum):
    BLACK_BOX = "black_box"
    WITH_CODE = "with_code"
    WITH_DIFF = "with_diff"


class Trial(Enum):
    CODE_PAIR = "code_pair"
    DIFF_PAIR = "diff_pair"


@dataclass(frozen=True)
class LibraryMeta:
    name: str
    alias: str
    v_from: str
    v_to: str


# ================= TEMPLATES =================

def slots_of(body):
    """Slot names in order of first appearance."""
    seen = []
    for m in SLOT_RE.finditer(body):
        name = m.group(1)
        if name is not None and name not in seen:
            seen.append(name)
    return seen


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    required_slots: frozenset = None

    def __post_init__(self):
        found = frozenset(slots_of(self.body))
        if self.required_slots is None:
            object.__setattr__(self, "required_slots", found)
            return
        declared = frozenset(self.required_slots)
        if declared != found:
            raise TemplateError(
                f"template {self.name!r}: declared slots {sorted(declared)} "
                f"but body uses {sorted(found)}"
            )
        object.__setattr__(self, "required_slots", declared)


def render(template, bindings):
    for key in bindings:
        if key not in template.required_slots:
            raise UnknownSlot(key)
    for slot in slots_of(template.body):
        if slot not in bindings:
            raise MissingSlot(slot)

    def sub(m):
        if m.group(1) is None:
            return m.group(0)[0]
        return bindings[m.group(1)]

    return SLOT_RE.sub(sub, template.body)


def load_template(path, name=None):
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise TemplateError(f"cannot read template {path}: {e}")

    header, _, body = text.partition("\n")
    if not header.startswith(SLOTS_HEADER):
        raise TemplateError(f"{path}: first line must be '{SLOTS_HEADER} a, b, c'")

    declared = frozenset(s.strip() for s in header[len(SLOTS_HEADER):].split(",") if s.strip())
    return PromptTemplate(name or path, body, declared)


BLACK_BOX_BODY = (
    "Refactor the code below to work with {library} ({library alias}). Currently the "
    "code works with version {legacy version} but needs to be updated to work with version {target version}.\n"
    "Maintain the same style, functionality, and structure as the original code.\n"
    "\n"
    "{code}\n"
    "\n"
    "Refactored code:"
)

WITH_CODE_BODY = (
    "Below is some code for the {library} ({library alias}) library:\n"
    "\n"
    "{library code}\n"
    "\n"
    "Please refactor the code below to be compatible with the {library} library.\n"
    "Maintain the same style, functionality, and structure as the original code.\n"
    "\n"
    "{code}\n"
    "\n"
    "Refactored code:"
)

WITH_DIFF_BODY = (
    "Here is the diff information for an update to the  {library} ({library alias}) library:\n"
    "{diff}\n"
    "\n"
    "Please refactor the code below to maintain compatibility with the {library} library.\n"
    "Maintain the same style, functionality, and structure as the original code.\n"
    "\n"
    "{code}\n"
    "\n"
    "Refactored code:"
)

BENCH_SYSTEM = (
    "You are an expert software engineer. Your task is to compare changes to functions "
    "and count how many functions now have errors."
)

_BENCH_HEAD = "Here is a python file with 5 functions.\n\n```python\n{original file}\n```\n\n"
_BENCH_TAIL = (
    "\n\nYour task is to count how many of the functions now have at least one error in them. "
    "Answer with ONLY the number of functions that have errors [0-5]."
)

CODE_PAIR_BODY = (
    _BENCH_HEAD
    + "Here is a python file with the same 5 functions written by someone else, "
      "but now there may be errors.\n\n```python\n{modified file}\n```"
    + _BENCH_TAIL
)

DIFF_PAIR_BODY = (
    _BENCH_HEAD
    + "Here is a diff file comparing the original file to a another file with the same 5 functions "
      "written by someone else, but now there may be errors:\n\n```python\n{diff file}\n```"
    + _BENCH_TAIL
)

# no system message is shown for migration prompts
MIGRATION_SYSTEM = ""

DEFAULT_TEMPLATES = {
    MigrationStrategy.BLACK_BOX: PromptTemplate("black_box", BLACK_BOX_BODY),
    MigrationStrategy.WITH_CODE: PromptTemplate("with_code", WITH_CODE_BODY),
    MigrationStrategy.WITH_DIFF: PromptTemplate("with_diff", WITH_DIFF_BODY),
}

BENCH_TEMPLATES = {
    Trial.CODE_PAIR: PromptTemplate("code_pair", CODE_PAIR_BODY),
    Trial.DIFF_PAIR: PromptTemplate("diff_pair", DIFF_PAIR_BODY),
}


def load_templates(paths):
    """{strategy tag: template file path} -> defaults with those strategies overridden."""
    templates = dict(DEFAULT_TEMPLATES)
    for tag, path in (paths or {}).items():
        strategy = MigrationStrategy(tag)
        templates[strategy] = load_template(path, name=tag)
    return templates


# ================= PROMPTS =================

def build_migration_prompt(strategy, file, lib, artifact=None, templates=None):
    """(system, user) prompt for one project file."""
    strategy = MigrationStrategy(strategy)
    code = file.text if isinstance(file, FileEntry) else file

    if strategy is MigrationStrategy.BLACK_BOX:
        if artifact is not None:
            raise ArtifactForbidden("black_box prompts take no library code or diff")
    elif artifact is None:
        raise ArtifactRequired(f"{strategy.value} needs the library {'code' if strategy is MigrationStrategy.WITH_CODE else 'diff'}")
    elif not artifact:
        log.warning(f"{strategy.value}: library artifact is empty, the prompt carries no library changes")

    available = {
        "library": lib.name,
        "library alias": lib.alias,
        "legacy version": lib.v_from,
        "target version": lib.v_to,
        "code": code,
    }
    if strategy is MigrationStrategy.WITH_CODE:
        available["library code"] = artifact
    elif strategy is MigrationStrategy.WITH_DIFF:
        available["diff"] = artifact

    template = (templates or DEFAULT_TEMPLATES)[strategy]
    bindings = {k: v for k, v in available.items() if k in template.required_slots}
    return MIGRATION_SYSTEM, render(template, bindings)


def build_bench_prompt(trial, file_a, file_b_or_c):
    trial = Trial(trial)
    template = BENCH_TEMPLATES[trial]
    second = "modified file" if trial is Trial.CODE_PAIR else "diff file"
    return BENCH_SYSTEM, render(template, {"original file": file_a, second: file_b_or_c})
