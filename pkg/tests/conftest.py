import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CORPUS = sorted((Path(__file__).parents[1] / "src" / "lamp" / "corpus").glob("*.lamp"))


@pytest.fixture(params=CORPUS, ids=[p.stem for p in CORPUS])
def corpus_program(request):
    from lamp.frontend import parse_program

    return parse_program(request.param.read_text())
