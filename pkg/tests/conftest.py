from pathlib import Path

import pytest

from narravine.config import SessionConfig

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
TEST_DATA = Path(__file__).resolve().parent / "data"


@pytest.fixture
def fast_config(tmp_path):
    """Session config at 50x speed writing into a per-test directory."""
    def make(**overrides):
        base = dict(
            manifest_path=str(FIXTURES / "stickers.json"),
            clock_scale=0.02,
            session_dir=str(tmp_path / "session"),
        )
        base.update(overrides)
        return SessionConfig(**base)
    return make


def scene_path(name: str) -> str:
    return str(FIXTURES / name)
