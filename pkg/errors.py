class DiffMigrateError(Exception):
    """Base for every named failure the toolkit raises."""


# ================= REPOSITORIES =================

class NotARepository(DiffMigrateError):
    pass


class UnresolvedRef(DiffMigrateError):
    pass


class IoFailure(DiffMigrateError):
    pass


# ================= DIFFS =================

class MalformedHunkHeader(DiffMigrateError):
    pass


class LineCountMismatch(DiffMigrateError):
    pass


class ContextMismatch(DiffMigrateError):
    pass


# ================= TOKENS / PROMPTS =================

class VocabLoadError(DiffMigrateError):
    pass


class TemplateError(DiffMigrateError):
    pass


class MissingSlot(TemplateError):
    def __init__(self, slot):
        super().__init__(f"missing binding for slot {{{slot}}}")
        self.slot = slot


class UnknownSlot(TemplateError):
    def __init__(self, slot):
        super().__init__(f"binding {slot!r} is not a slot of this template")
        self.slot = slot


class ArtifactRequired(DiffMigrateError):
    pass


class ArtifactForbidden(DiffMigrateError):
    pass


# ================= LLM =================

class LlmError(DiffMigrateError):
    pass


class AuthError(LlmError):
    pass


class RateLimited(LlmError):
    pass


class ContextOverflow(LlmError):
    pass


class LlmTimeout(LlmError):
    pass


class UnknownModel(DiffMigrateError):
    pass


# ================= MIGRATION / EVALUATION =================

class MigrationFailed(DiffMigrateError):
    def __init__(self, message, results=None):
        super().__init__(message)
        self.results = results or []


class RunnerNotFound(DiffMigrateError):
    pass


class ParseFailure(DiffMigrateError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RunnerTimeout(DiffMigrateError):
    pass


# ================= BENCHMARK =================

class CorpusTooSmall(DiffMigrateError):
    pass


class LengthMismatch(DiffMigrateError):
    pass


# ================= CLI =================

class ConfigError(DiffMigrateError):
    pass
