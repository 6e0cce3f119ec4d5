import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from caraman import default_species  # noqa: E402

DATA_FILE = Path(__file__).resolve().parents[1] / "src" / "caraman" / "data" / "ca40.json"


@pytest.fixture(scope="session")
def species():
    return default_species()


@pytest.fixture
def raw_species():
    return json.loads(DATA_FILE.read_text())


@pytest.fixture
def write_species(tmp_path):
    """Write a modified species dict to disk and return its path."""

    def _write(raw, name="species.json"):
        path = tmp_path / name
        path.write_text(json.dumps(raw))
        return path

    return _write
