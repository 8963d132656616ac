import os
import shutil
import subprocess

import pytest

from llm_client import LlmClient, MockTransport, ProviderConfig

BASE_TIME = 1_700_000_000


class GitRepo:
    """Scripted git repository with fixed identities and one-minute commit spacing."""

    def __init__(self, path):
        self.path = str(path)
        self.commits = 0
        os.makedirs(self.path, exist_ok=True)
        self.git("init", "-q")
        self.git("config", "user.email", "dev@example.com")
        self.git("config", "user.name", "Dev")
        self.git("config", "commit.gpgsign", "false")

    def _env(self):
        env = dict(os.environ)
        stamp = f"{BASE_TIME + 60 * self.commits} +0000"
        env.update({"GIT_AUTHOR_DATE": stamp, "GIT_COMMITTER_DATE": stamp})
        return env

    def git(self, *args):
        result = subprocess.run(
            ["git", "-C", self.path, *args],
            capture_output=True,
            text=True,
            check=True,
            env=self._env(),
        )
        return result.stdout.strip()

    def write(self, rel, content):
        full = os.path.join(self.path, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        mode = "wb" if isinstance(content, bytes) else "w"
        with open(full, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as f:
            f.write(content)

    def commit(self, files=None, delete=(), message=None, tag=None):
        for rel, content in (files or {}).items():
            self.write(rel, content)
        for rel in delete:
            os.remove(os.path.join(self.path, rel))
        self.git("add", "-A")
        self.git("commit", "-q", "--allow-empty", "-m", message or f"commit {self.commits + 1}")
        self.commits += 1
        if tag:
            self.git("tag", tag)
        return self.git("rev-parse", "HEAD")


@pytest.fixture
def git_repo(tmp_path):
    if shutil.which("git") is None:
        pytest.skip("git not available")
    return GitRepo(tmp_path / "repo")


def echo_code(payload):
    """Reply with the project file embedded in a migration prompt, fenced."""
    user = payload["messages"][-1]["content"]
    code = user.split("structure as the original code.\n\n", 1)[1].rsplit("\n\nRefactored code:", 1)[0]
    return f"Here is the refactored code:\n```python\n{code}```\nDone."


@pytest.fixture
def echo_transport():
    return MockTransport(responder=echo_code)


@pytest.fixture
def make_client():
    def build(transport, **kwargs):
        config = ProviderConfig(base_url="https://llm.test/v1", api_key="test-key", max_retries=kwargs.pop("max_retries", 2))
        return LlmClient(config, transport, sleep=lambda s: None, **kwargs)
    return build


def write_tree(root, files):
    for rel, content in files.items():
        full = os.path.join(str(root), rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        with open(full, "w", encoding="utf-8", newline="") as f:
            f.write(content)
    return str(root)


@pytest.fixture
def tree():
    return write_tree
