"""
cli.py

    python cli.py migrate --config job.toml [--dry-run] [--runs 4] ...
    python cli.py eval    --original src/ --reference ref/ --candidate out/run_1 ...
    python cli.py bench   generate|run|score ...
    python cli.py history --repo path/to/clone [--include '**/*.py'] ...
    python cli.py cost    --ledger out/usage.csv

Exit codes: 0 ok, 1 operational failure, 2 usage error.
Logs go to stderr, tables to stdout.
"""

import argparse
import json
import os
import re
import sys
from decimal import Decimal

try:
    import tomllib
except ImportError:     # Python < 3.11
    import tomli as tomllib

from dotenv import load_dotenv

import benchcomp
import evaluator
import history_analyzer
import migrator
from errors import ConfigError, DiffMigrateError
from llm_client import CostTable, HttpTransport, LlmClient, ProviderConfig, UsageLedger
from prompt_builder import MigrationStrategy, load_templates
from repo_source import FileFilter, RepoRef, snapshot_dir
from token_meter import BYTE_HEURISTIC, DEFAULT_WINDOW, TokenizerSpec
from utils import get_logger, setup_logging, write_frame

log = get_logger("cli")

ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


# ================= CONFIG =================

def _interpolate(value, where):
    if isinstance(value, str):
        def sub(m):
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"{where}: environment variable {name} is not set")
            return os.environ[name]
        return ENV_REF.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v, f"{where}.{k}") for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v, where) for v in value]
    return value


def load_config(path):
    """TOML with ${VAR} expansion; relative paths are taken from the config file's directory."""
    if not path:
        return {}, os.getcwd()
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}")
    return _interpolate(raw, "config"), os.path.dirname(os.path.abspath(path))


def _path(base, value):
    return value if os.path.isabs(value) else os.path.normpath(os.path.join(base, value))


def _existing(base, value, field, kind="any"):
    if not value:
        raise ConfigError(f"{field} is required")
    path = _path(base, value)
    ok = os.path.isdir(path) if kind == "dir" else os.path.isfile(path) if kind == "file" else os.path.exists(path)
    if not ok:
        raise ConfigError(f"{field}: {path} does not exist")
    return path


def _tokenizer(section, base):
    if not section or section.get("kind", "byte_heuristic") == "byte_heuristic":
        return BYTE_HEURISTIC
    vocab = _existing(base, section.get("vocab_path"), "tokenizer.vocab_path", "file")
    return TokenizerSpec("bpe_vocab", vocab, section.get("name", "o200k_base"), section.get("pattern"))


def _ledger(cfg, base, override=None):
    path = override or cfg.get("ledger", {}).get("path")
    return UsageLedger(_path(base, path) if path else None)


def _client(cfg, transport, ledger):
    prov = cfg.get("provider", {})
    key_env = prov.get("api_key_env", "OPENAI_API_KEY")
    config = ProviderConfig(
        base_url=prov.get("base_url", ProviderConfig.base_url),
        api_key=os.getenv(key_env),
        tokens_per_minute=prov.get("tokens_per_minute"),
        max_retries=int(prov.get("max_retries", ProviderConfig.max_retries)),
        backoff_base=float(prov.get("backoff_base", ProviderConfig.backoff_base)),
    )
    return LlmClient(config, transport or HttpTransport(), ledger, CostTable.from_config(cfg.get("costs")))


def _filter(section, include=None, exclude=None):
    return FileFilter(
        include=include if include else section.get("include", ()),
        exclude=exclude if exclude else section.get("exclude", ()),
    )


# ================= MIGRATE =================

def build_job(cfg, base, args):
    job = cfg.get("job", {})
    lib = cfg.get("library", {})
    prov = cfg.get("provider", {})

    strategy = MigrationStrategy(args.strategy or job.get("strategy", "with_diff"))
    source_dir = _existing(base, job.get("source_dir"), "job.source_dir", "dir")
    dest_dir = _path(base, args.out or job.get("dest_dir") or "")
    if not (args.out or job.get("dest_dir")):
        raise ConfigError("job.dest_dir is required")

    if strategy is MigrationStrategy.BLACK_BOX and not lib.get("repo"):
        repo = ""
    else:
        repo = _existing(base, lib.get("repo"), "library.repo", "dir")

    v_from = args.v_from or lib.get("v_from")
    v_to = args.v_to or lib.get("v_to")
    for name, value in (("library.v_from", v_from), ("library.v_to", v_to), ("library.name", lib.get("name"))):
        if not value:
            raise ConfigError(f"{name} is required")

    templates = {
        tag: _existing(base, p, f"templates.{tag}", "file")
        for tag, p in cfg.get("templates", {}).items()
    }

    files = job.get("files") or []
    if not files:
        raise ConfigError("job.files is required")

    return migrator.MigrationJob(
        source_dir=source_dir,
        dest_dir=dest_dir,
        files=tuple(files),
        lib=migrator.LibrarySpec(lib["name"], lib.get("alias", lib["name"]), RepoRef(repo, v_from), RepoRef(repo, v_to)),
        strategy=strategy,
        model=args.model or prov.get("model") or "gpt-4o",
        filter=_filter(lib, args.include, args.exclude),
        runs=args.runs or int(job.get("runs", 1)),
        parallel=args.parallel or bool(job.get("parallel", False)),
        die_on_error=args.die or bool(job.get("die", False)),
        case=job.get("case", ""),
        workers=int(job.get("workers", migrator.DEFAULT_WORKERS)),
        temperature=float(prov.get("temperature", migrator.DEFAULT_TEMPERATURE)),
        max_output_tokens=int(prov.get("max_output_tokens", migrator.DEFAULT_MAX_OUTPUT_TOKENS)),
        window=int(prov.get("window", DEFAULT_WINDOW)),
        tokenizer=_tokenizer(cfg.get("tokenizer"), base),
        templates=load_templates(templates),
    )


def cmd_migrate(args, transport):
    cfg, base = load_config(args.config)
    job = build_job(cfg, base, args)

    if args.dry_run:
        rows = migrator.dry_run(job)
        print("path\tprompt_tokens\tfits\tmargin")
        for r in rows:
            print(f"{r['path']}\t{r['prompt_tokens']}\t{r['fits']}\t{r['margin']}")
        return 0

    ledger = _ledger(cfg, base, os.path.join(job.dest_dir, "usage.csv") if not cfg.get("ledger") else None)
    client = _client(cfg, transport, ledger)
    results = migrator.run(job, client)

    for r in results:
        print(f"run_{r.run_index}\tok={len(r.files) - len(r.failed)}\tfailed={len(r.failed)}\t{r.duration_s:.1f}s")
    print(f"cost_usd\t{ledger.total().quantize(Decimal('0.01'))}")
    return 0


# ================= EVAL =================

def cmd_eval(args, transport):
    cfg, base = load_config(args.config)
    ev = cfg.get("evaluator", {})
    file_filter = _filter(ev, args.include, args.exclude)
    out_dir = args.out

    original_dir = _existing(os.getcwd(), args.original, "--original", "dir")
    candidates = [_existing(os.getcwd(), c, "--candidate", "dir") for c in args.candidate]

    if args.reference:
        reference_dir = _existing(os.getcwd(), args.reference, "--reference", "dir")
        original = snapshot_dir(original_dir, file_filter)
        reference = snapshot_dir(reference_dir, file_filter)
        # run metadata written next to migrated files
        cand_filter = FileFilter(file_filter.include, file_filter.exclude + evaluator.OVERLAY_SKIP)
        cand_sets = [snapshot_dir(c, cand_filter) for c in candidates]
        ignore = args.ignore or ev.get("ignore", [])

        per_run, cumulative = evaluator.evaluate_runs(original, reference, cand_sets, ignore)
        frame = evaluator.edit_reports_frame(per_run, cumulative)
        print(frame.to_csv(index=False, lineterminator="\n"), end="")
        if out_dir:
            evaluator.write_edit_reports(per_run, cumulative, out_dir)

    runner = args.runner or ev.get("runner")
    if runner:
        spec = evaluator.ParseSpec(kind=ev.get("parse", "regex"), junit_path=ev.get("junit_path", "report.xml"))
        timeout = int(ev.get("timeout", evaluator.RUNNER_TIMEOUT))
        reports = [
            evaluator.run_tests(original_dir, runner, spec, timeout, overlay_dir=c, log_dir=out_dir)
            for c in candidates
        ]
        for c, r in zip(candidates, reports):
            print(f"{c}\tpassed={r.passed}\tfailed={r.failed}\terrors={r.errored}\tcollected={r.collected}")
        print(f"mean_passed\t{evaluator.mean_passed(reports)}")
        if out_dir:
            evaluator.write_test_reports(reports, out_dir, labels=candidates)

    if not args.reference and not runner:
        raise ConfigError("eval needs --reference (edit matching) or a test runner (--runner / evaluator.runner)")
    return 0


# ================= BENCH =================

def cmd_bench_generate(args, transport):
    corpus = benchcomp.FunctionCorpus.load(_existing(os.getcwd(), args.corpus, "--corpus", "file"))
    questions = benchcomp.generate_questions(corpus, args.n, args.seed)
    benchcomp.write_questions(questions, args.out)
    log.info(f"wrote {len(questions)} questions to {args.out}")
    return 0


def cmd_bench_run(args, transport):
    cfg, base = load_config(args.config)
    questions = benchcomp.read_questions(_existing(os.getcwd(), args.questions, "--questions", "file"))
    model = args.model or cfg.get("provider", {}).get("model") or "gpt-4o"
    client = _client(cfg, transport, _ledger(cfg, base))

    results = benchcomp.run_trials(questions, client, model, floor=args.floor)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump({"model": model, "results": results}, f, indent=2)
    return 0


def cmd_bench_score(args, transport):
    questions = benchcomp.read_questions(_existing(os.getcwd(), args.questions, "--questions", "file"))
    with open(_existing(os.getcwd(), args.answers, "--answers", "file"), encoding="utf-8") as f:
        answers = json.load(f)

    table = benchcomp.score_table(answers["model"], answers["results"], questions)
    print(table.to_csv(index=False, lineterminator="\n"), end="")
    if args.out:
        benchcomp.write_scores(answers["model"], answers["results"], questions, args.out)
    return 0


# ================= HISTORY / COST =================

def cmd_history(args, transport):
    cfg, base = load_config(args.config)
    repo = _existing(os.getcwd(), args.repo, "--repo", "dir")
    file_filter = _filter(cfg.get("history", {}), args.include, args.exclude)

    points = history_analyzer.analyze(
        repo,
        file_filter,
        _tokenizer(cfg.get("tokenizer"), base),
        first_parent=not args.all,
        ref=args.ref,
    )
    text = history_analyzer.emit_csv(points, sep="\t" if args.tsv else ",")
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    else:
        print(text, end="")
    return 0


def cmd_cost(args, transport):
    cfg, base = load_config(args.config)
    path = args.ledger or cfg.get("ledger", {}).get("path")
    if not path:
        raise ConfigError("cost needs --ledger or ledger.path")
    ledger = UsageLedger.load(_existing(base if not args.ledger else os.getcwd(), path, "ledger.path", "file"))

    summary = ledger.summary()
    print(summary.to_string(index=False))
    print(f"TOTAL {ledger.total().quantize(Decimal('0.01'))}")
    if args.out:
        write_frame(summary, os.path.join(args.out, "cost_summary.csv"))
    return 0


# ================= PARSER =================

def build_parser():
    parser = argparse.ArgumentParser(prog="diffmigrate", description="Diff-driven library migration with an LLM.")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="TOML job file")
        p.add_argument("--include", action="append", help="glob to include (repeatable)")
        p.add_argument("--exclude", action="append", help="glob to exclude (repeatable)")
        p.add_argument("--out", help="output directory (or file for history)")

    p = sub.add_parser("migrate", help="migrate project files")
    common(p)
    p.add_argument("--v-from", dest="v_from", help="legacy library ref")
    p.add_argument("--v-to", dest="v_to", help="target library ref")
    p.add_argument("--model")
    p.add_argument("--strategy", choices=[s.value for s in MigrationStrategy])
    p.add_argument("--runs", type=int)
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--die", action="store_true", help="abort the run on the first failed file")
    p.add_argument("--dry-run", dest="dry_run", action="store_true", help="print prompt sizes, send nothing")
    p.set_defaults(func=cmd_migrate)

    p = sub.add_parser("eval", help="score candidate runs")
    common(p)
    p.add_argument("--original", required=True)
    p.add_argument("--reference")
    p.add_argument("--candidate", action="append", required=True)
    p.add_argument("--ignore", action="append", help="regex of lines to drop from change blocks")
    p.add_argument("--runner", help="test command run in a copy of --original with each candidate laid over it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="diff-comprehension benchmark")
    bench = p.add_subparsers(dest="bench_command")

    g = bench.add_parser("generate")
    g.add_argument("--corpus", default=os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "bench_corpus.jsonl"))
    g.add_argument("--n", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_bench_generate)

    r = bench.add_parser("run")
    r.add_argument("--config")
    r.add_argument("--questions", required=True)
    r.add_argument("--model")
    r.add_argument("--floor", type=float, default=benchcomp.DEFAULT_FLOOR)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_bench_run)

    s = bench.add_parser("score")
    s.add_argument("--questions", required=True)
    s.add_argument("--answers", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench_score)

    p = sub.add_parser("history", help="repo size vs commit diff size")
    common(p)
    p.add_argument("--repo", required=True)
    p.add_argument("--ref", default="HEAD")
    p.add_argument("--all", action="store_true", help="every commit instead of the first-parent chain")
    p.add_argument("--tsv", action="store_true")
    p.set_defaults(func=cmd_history)

    p = sub.add_parser("cost", help="summarize the usage ledger")
    p.add_argument("--config")
    p.add_argument("--ledger")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    return parser


def main(argv=None, transport=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 2

    setup_logging(args.verbose)
    load_dotenv()

    try:
        return args.func(args, transport)
    except DiffMigrateError as e:
        log.error(f"{type(e).__name__}: {e}")
        return 1
    except ValueError as e:
        log.error(f"invalid input: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
