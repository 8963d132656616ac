from dataclasses import dataclass, field


def split_lines(text):
    """Split on "\\n" only, keeping terminators; a final unterminated line stays bare."""
    if not text:
        return []
    parts = text.split("\n")
    lines = [p + "\n" for p in parts[:-1]]
    if parts[-1]:
        lines.append(parts[-1])
    return lines


def count_lines(content):
    if not content:
        return 0
    n = content.count(b"\n")
    return n if content.endswith(b"\n") else n + 1


@dataclass(frozen=True)
class FileEntry:
    path: str
    content: bytes
    line_count: int = -1

    def __post_init__(self):
        if isinstance(self.content, str):
            object.__setattr__(self, "content", self.content.encode("utf-8"))
        if self.line_count < 0:
            object.__setattr__(self, "line_count", count_lines(self.content))

    @property
    def text(self):
        return self.content.decode("utf-8")


@dataclass(frozen=True)
class FileSet:
    entries: tuple = ()
    total_bytes: int = field(default=0)
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        entries = tuple(sorted(self.entries, key=lambda e: e.path))
        paths = [e.path for e in entries]
        if len(set(paths)) != len(paths):
            raise ValueError("duplicate paths in file set")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "total_bytes", sum(len(e.content) for e in entries))
        object.__setattr__(self, "_index", {e.path: e for e in entries})

    @classmethod
    def from_texts(cls, mapping):
        """Build from {path: text-or-bytes}."""
        return cls(tuple(FileEntry(path, content) for path, content in mapping.items()))

    def get(self, path):
        return self._index.get(path)

    def paths(self):
        return [e.path for e in self.entries]

    def as_texts(self):
        return {e.path: e.text for e in self.entries}

    def __len__(self):
        return len(self.entries)
