"""
migrator.py

The migration loop: for every project file build the strategy prompt, ask
the model, clean the reply and write the post-update file. A job can be run
several times; each run lands in its own dest_dir/run_<k>/ directory with a
run.json describing it.
"""

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime

from errors import ContextOverflow, IoFailure, LlmError, MigrationFailed
from filesets import FileEntry
from llm_client import ChatRequest, sanitize_code_reply
from prompt_builder import LibraryMeta, MigrationStrategy, build_migration_prompt
from repo_source import ALL_FILES, FileFilter, RepoRef, library_diff, snapshot
from token_meter import BYTE_HEURISTIC, DEFAULT_WINDOW, count_tokens, fits_context
from utils import get_logger, sha256_text

log = get_logger("migrator")


# ================= CONFIG =================

DEFAULT_WORKERS = 4
DEFAULT_TEMPERATURE = 1.0
DEFAULT_MAX_OUTPUT_TOKENS = 16_384

STATUS_OK = "ok"
STATUS_LLM_ERROR = "llm_error"
STATUS_WRITE_ERROR = "write_error"
STATUS_SKIPPED = "skipped"


# ================= TYPES =================

@dataclass(frozen=True)
class LibrarySpec:
    name: str
    alias: str
    ref_from: RepoRef
    ref_to: RepoRef

    def meta(self):
        return LibraryMeta(self.name, self.alias, self.ref_from.ref, self.ref_to.ref)


@dataclass(frozen=True)
class ExperimentSpec:
    model: str
    strategy: str
    case: str

    def __post_init__(self):
        for name in ("model", "strategy", "case"):
            if not getattr(self, name):
                raise ValueError(f"experiment {name} label is empty")

    def label(self):
        return f"{self.model}/{self.strategy}/{self.case}"


@dataclass(frozen=True)
class MigrationJob:
    source_dir: str
    dest_dir: str
    files: tuple
    lib: LibrarySpec
    strategy: MigrationStrategy
    model: str
    filter: FileFilter = ALL_FILES
    runs: int = 1
    parallel: bool = False
    die_on_error: bool = False
    case: str = ""
    workers: int = DEFAULT_WORKERS
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    window: int = DEFAULT_WINDOW
    tokenizer: object = BYTE_HEURISTIC
    templates: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "files", tuple(self.files))
        object.__setattr__(self, "strategy", MigrationStrategy(self.strategy))
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.files:
            raise ValueError("job lists no files")
        if os.path.realpath(self.source_dir) == os.path.realpath(self.dest_dir):
            raise ValueError("dest_dir must differ from source_dir")

    @property
    def experiment(self):
        return ExperimentSpec(self.model, self.strategy.value, self.case or self.lib.name)

    def validate(self):
        missing = [p for p in self.files if not os.path.isfile(os.path.join(self.source_dir, p))]
        if missing:
            raise IoFailure(f"files missing under {self.source_dir}: {', '.join(missing)}")


@dataclass
class FileResult:
    path: str
    status: str
    prompt_sha256: str = ""
    prompt_tokens: int = 0
    completion_tokens: int = 0
    retries: int = 0
    duration_s: float = 0.0
    error: str = ""


@dataclass
class RunResult:
    run_index: int
    run_dir: str
    files: list = field(default_factory=list)
    started: str = ""
    finished: str = ""
    duration_s: float = 0.0

    @property
    def statuses(self):
        return {f.path: f.status for f in self.files}

    @property
    def prompt_tokens(self):
        return sum(f.prompt_tokens for f in self.files)

    @property
    def completion_tokens(self):
        return sum(f.completion_tokens for f in self.files)

    @property
    def failed(self):
        return [f.path for f in self.files if f.status != STATUS_OK]


@dataclass(frozen=True)
class MigratedFile:
    text: str
    prompt_sha256: str
    prompt_tokens: int
    completion_tokens: int
    retries: int


# ================= ARTIFACT =================

def concat_library(files):
    """'# file: <path>' header before each file's content."""
    parts = []
    for entry in files.entries:
        text = entry.text
        if text and not text.endswith("\n"):
            text += "\n"
        parts.append(f"# file: {entry.path}\n{text}")
    return "".join(parts)


def prepare_artifact(job):
    """None for black_box, the target library code for with_code, the library diff for with_diff."""
    if job.strategy is MigrationStrategy.BLACK_BOX:
        return None

    if job.strategy is MigrationStrategy.WITH_CODE:
        artifact = concat_library(snapshot(job.lib.ref_to, job.filter))
    else:
        artifact = library_diff(job.lib.ref_from, job.lib.ref_to, job.filter).render()

    if not artifact:
        log.warning(f"{job.strategy.value}: empty library artifact for {job.lib.ref_from.ref} -> {job.lib.ref_to.ref}")
    else:
        log.info(f"{job.strategy.value} artifact: {count_tokens(artifact, job.tokenizer)} tokens")
    return artifact


# ================= ONE FILE =================

def _read_source(job, path):
    try:
        with open(os.path.join(job.source_dir, path), "rb") as f:
            return FileEntry(path, f.read())
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}")


def _prompt(file, artifact, job):
    return build_migration_prompt(job.strategy, file, job.lib.meta(), artifact, job.templates)


def migrate_file(file, artifact, job, client):
    """
    One request for one project file. The prompt must fit the window
    (prompt + reserved output); otherwise ContextOverflow is raised before
    anything is sent.
    """
    system, user = _prompt(file, artifact, job)
    needed = count_tokens(system, job.tokenizer) + count_tokens(user, job.tokenizer) + job.max_output_tokens
    fits, margin = fits_context(needed, job.window)
    if not fits:
        raise ContextOverflow(f"{file.path}: prompt needs {needed} tokens, {-margin} over the {job.window} window")

    req = ChatRequest(
        model=job.model,
        system=system,
        user=user,
        temperature=job.temperature,
        max_output_tokens=job.max_output_tokens,
    )
    exp = job.experiment
    resp = client.complete(req, case=exp.case, method=exp.strategy)

    text = sanitize_code_reply(resp.text)
    if file.text.endswith("\n"):
        text = text.rstrip("\n") + "\n"

    return MigratedFile(text, sha256_text(system, user), resp.prompt_tokens, resp.completion_tokens, resp.retries)


def _migrate_to(file, artifact, job, client, run_dir):
    t0 = time.time()
    result = FileResult(file.path, STATUS_OK)
    try:
        migrated = migrate_file(file, artifact, job, client)
    except LlmError as e:
        result.status = STATUS_LLM_ERROR
        result.error = f"{type(e).__name__}: {e}"
        result.duration_s = time.time() - t0
        log.warning(f"❌ {file.path}: {result.error}")
        return result

    result.prompt_sha256 = migrated.prompt_sha256
    result.prompt_tokens = migrated.prompt_tokens
    result.completion_tokens = migrated.completion_tokens
    result.retries = migrated.retries

    out = os.path.join(run_dir, file.path)
    try:
        os.makedirs(os.path.dirname(out), exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(migrated.text)
    except OSError as e:
        result.status = STATUS_WRITE_ERROR
        result.error = str(e)
        log.warning(f"❌ {file.path}: write failed: {e}")

    result.duration_s = time.time() - t0
    if result.status == STATUS_OK:
        log.info(f"✅ {file.path} ({result.prompt_tokens}+{result.completion_tokens} tokens, {result.duration_s:.1f}s)")
    return result


# ================= RUNS =================

def _write_run_json(job, result):
    exp = job.experiment
    meta = {
        "model": exp.model,
        "strategy": exp.strategy,
        "case": exp.case,
        "library": job.lib.name,
        "v_from": job.lib.ref_from.ref,
        "v_to": job.lib.ref_to.ref,
        "temperature": job.temperature,
        "run_index": result.run_index,
        "started": result.started,
        "finished": result.finished,
        "duration_s": round(result.duration_s, 3),
        "usage": {"prompt_tokens": result.prompt_tokens, "completion_tokens": result.completion_tokens},
        "files": [
            {
                "path": f.path,
                "status": f.status,
                "prompt_sha256": f.prompt_sha256,
                "prompt_tokens": f.prompt_tokens,
                "completion_tokens": f.completion_tokens,
                "retries": f.retries,
                "duration_s": round(f.duration_s, 3),
                "error": f.error,
            }
            for f in result.files
        ],
    }
    os.makedirs(result.run_dir, exist_ok=True)
    with open(os.path.join(result.run_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)


def _run_once(job, k, sources, artifact, client):
    result = RunResult(k, os.path.join(job.dest_dir, f"run_{k}"))
    result.started = datetime.now().isoformat(timespec="seconds")
    t0 = time.time()
    os.makedirs(result.run_dir, exist_ok=True)
    log.info(f"run {k}/{job.runs} [{job.experiment.label()}] -> {result.run_dir}")

    by_path = {}
    aborted = False

    if job.parallel:
        pool = ThreadPoolExecutor(max_workers=job.workers)
        futures = {pool.submit(_migrate_to, f, artifact, job, client, result.run_dir): f.path for f in sources}
        try:
            for fut, path in futures.items():
                by_path[path] = fut.result()
                if job.die_on_error and by_path[path].status != STATUS_OK:
                    aborted = True
                    break
        finally:
            pool.shutdown(wait=True, cancel_futures=aborted)
        if aborted:
            for fut, path in futures.items():
                if path not in by_path and fut.done() and not fut.cancelled():
                    by_path[path] = fut.result()
    else:
        for f in sources:
            by_path[f.path] = _migrate_to(f, artifact, job, client, result.run_dir)
            if job.die_on_error and by_path[f.path].status != STATUS_OK:
                aborted = True
                break

    result.files = [by_path.get(f.path) or FileResult(f.path, STATUS_SKIPPED) for f in sources]
    result.duration_s = time.time() - t0
    result.finished = datetime.now().isoformat(timespec="seconds")
    _write_run_json(job, result)
    return result, aborted


def run(job, client):
    """`runs` complete passes over job.files; raises MigrationFailed when die_on_error trips."""
    job.validate()
    sources = [_read_source(job, p) for p in job.files]
    artifact = prepare_artifact(job)

    results = []
    for k in range(1, job.runs + 1):
        result, aborted = _run_once(job, k, sources, artifact, client)
        results.append(result)
        if aborted:
            raise MigrationFailed(f"run {k}: {', '.join(result.failed)} failed; aborting", results)
        if result.failed:
            log.warning(f"run {k}: {len(result.failed)} of {len(result.files)} files failed")

    return results


def dry_run(job):
    """Per-file prompt sizes against the window; nothing is sent and nothing is written."""
    job.validate()
    artifact = prepare_artifact(job)
    rows = []
    for path in job.files:
        file = _read_source(job, path)
        system, user = _prompt(file, artifact, job)
        tokens = count_tokens(system, job.tokenizer) + count_tokens(user, job.tokenizer)
        fits, margin = fits_context(tokens + job.max_output_tokens, job.window)
        rows.append({"path": path, "prompt_tokens": tokens, "fits": fits, "margin": margin})
    return rows
