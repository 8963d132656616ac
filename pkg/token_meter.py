import base64
from dataclasses import dataclass
from functools import lru_cache

from errors import VocabLoadError
from utils import get_logger

try:
    import tiktoken
except ImportError:     # bpe_vocab unavailable, heuristic still works
    tiktoken = None

log = get_logger("token_meter")


# ================= CONFIG =================

BYTES_PER_TOKEN = 4
DEFAULT_WINDOW = 128_000

# pre-tokenizer splits of the published vocabularies
O200K_PATTERN = "|".join([
    r"""[^\r\n\p{L}\p{N}]?[\p{Lu}\p{Lt}\p{Lm}\p{Lo}\p{M}]*[\p{Ll}\p{Lm}\p{Lo}\p{M}]+(?i:'s|'t|'re|'ve|'m|'ll|'d)?""",
    r"""[^\r\n\p{L}\p{N}]?[\p{Lu}\p{Lt}\p{Lm}\p{Lo}\p{M}]+[\p{Ll}\p{Lm}\p{Lo}\p{M}]*(?i:'s|'t|'re|'ve|'m|'ll|'d)?""",
    r"""\p{N}{1,3}""",
    r""" ?[^\s\p{L}\p{N}]+[\r\n/]*""",
    r"""\s*[\r\n]+""",
    r"""\s+(?!\S)""",
    r"""\s+""",
])
CL100K_PATTERN = r"""(?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+"""

SPLIT_PATTERNS = {
    "o200k_base": O200K_PATTERN,
    "cl100k_base": CL100K_PATTERN,
}

KINDS = ("byte_heuristic", "bpe_vocab")


@dataclass(frozen=True)
class TokenizerSpec:
    """
    bpe_vocab needs a vocabulary file and a pre-tokenizer split: either
    `pattern` or a `name` listed in SPLIT_PATTERNS.
    """
    kind: str = "byte_heuristic"
    vocab_path: str | None = None
    name: str = "bytes4"
    pattern: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown tokenizer kind {self.kind!r}")
        if self.kind == "bpe_vocab":
            if not self.vocab_path:
                raise ValueError("bpe_vocab tokenizer needs vocab_path")
            if self.split_pattern is None:
                raise ValueError(
                    f"no pre-tokenizer split known for {self.name!r}; "
                    f"set pattern or use one of {sorted(SPLIT_PATTERNS)}"
                )

    @property
    def split_pattern(self):
        return self.pattern or SPLIT_PATTERNS.get(self.name)


BYTE_HEURISTIC = TokenizerSpec()


def read_vocab(path):
    """Parse '<base64 token> <rank>' lines into {token bytes: rank}."""
    ranks = {}
    try:
        with open(path, "rb") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    token, rank = line.split()
                    ranks[base64.b64decode(token, validate=True)] = int(rank)
                except ValueError as e:
                    raise VocabLoadError(f"{path}:{lineno}: bad vocabulary line ({e})")
    except OSError as e:
        raise VocabLoadError(f"cannot read vocabulary {path}: {e}")

    if not ranks:
        raise VocabLoadError(f"{path}: empty vocabulary")
    return ranks


@lru_cache(maxsize=8)
def load_encoding(spec):
    if tiktoken is None:
        raise VocabLoadError("tiktoken is not installed")

    ranks = read_vocab(spec.vocab_path)
    try:
        enc = tiktoken.Encoding(
            name=spec.name,
            pat_str=spec.split_pattern,
            mergeable_ranks=ranks,
            special_tokens={},
        )
    except Exception as e:
        raise VocabLoadError(f"{spec.vocab_path}: {e}")

    log.debug(f"loaded {spec.name} vocabulary: {len(ranks)} tokens")
    return enc


def count_tokens(text, spec=BYTE_HEURISTIC):
    if not text:
        return 0
    if spec.kind == "byte_heuristic":
        n = len(text.encode("utf-8"))
        return (n + BYTES_PER_TOKEN - 1) // BYTES_PER_TOKEN
    return len(load_encoding(spec).encode_ordinary(text))


def fits_context(token_count, window=DEFAULT_WINDOW):
    """(fits, margin) where margin = window - token_count."""
    if window <= 0:
        raise ValueError("window must be > 0")
    margin = window - token_count
    return margin >= 0, margin
