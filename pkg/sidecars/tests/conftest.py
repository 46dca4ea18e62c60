import threading
import time

import pytest
from fastapi.testclient import TestClient

from scenetap_sidecars.engines import (
    ReferenceInpainter,
    ReferenceScorer,
    ReferenceSegmenter,
)
from scenetap_sidecars.services import (
    create_inpaint_app,
    create_score_app,
    create_segment_app,
)


@pytest.fixture(scope="session")
def segment_client():
    return TestClient(create_segment_app(ReferenceSegmenter()))


@pytest.fixture(scope="session")
def inpaint_client():
    return TestClient(create_inpaint_app(ReferenceInpainter()))


@pytest.fixture(scope="session")
def score_client():
    return TestClient(create_score_app(ReferenceScorer()))


@pytest.fixture(scope="session")
def service_url():
    """All three services mounted on one loopback uvicorn server."""
    import uvicorn
    from fastapi import FastAPI

    root = FastAPI()
    root.mount("/segment", create_segment_app(ReferenceSegmenter()))
    root.mount("/inpaint", create_inpaint_app(ReferenceInpainter()))
    root.mount("/score", create_score_app(ReferenceScorer()))
    config = uvicorn.Config(root, host="127.0.0.1", port=0,
                            log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15.0
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("uvicorn did not start in time")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)
