import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from greet import greet


def test_greet():
    assert greet("world") == "hello, world"
