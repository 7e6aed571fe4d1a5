import os
import threading

import numpy as np
import pytest
from werkzeug.serving import make_server

from backend_app import create_app
from glyph_utils import load_database, read_database
from models import EventStream

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
GLYPH_DB = os.path.join(ROOT, "data", "glyphs.tsv")


def random_stream(rng, max_events=200, max_side=64, sorted_t=True):
    w = int(rng.integers(1, max_side + 1))
    h = int(rng.integers(1, max_side + 1))
    n = int(rng.integers(0, max_events + 1))
    t = rng.integers(0, 10**6, size=n)
    if sorted_t:
        t = np.sort(t)
    return EventStream(
        w,
        h,
        rng.integers(0, w, size=n),
        rng.integers(0, h, size=n),
        t,
        rng.choice(np.array([1, -1]), size=n),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def glyph_db():
    return read_database(GLYPH_DB)


@pytest.fixture
def symmetric_db():
    # every substitution can be undone: each candidate lists its key back
    return load_database(
        "松\t枫\n枫\t松\n"
        "鼠\t鼬\n鼬\t鼠\n"
        "cat\tcap\ncap\tcat\n"
    )


@pytest.fixture
def live_backend():
    """Start the reference recognizer on a free port; yields (url, app)."""
    servers = []

    def start(mode="echo"):
        app = create_app(mode)
        server = make_server("127.0.0.1", 0, app, threaded=True)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_port}/", app

    yield start
    for server in servers:
        server.shutdown()
