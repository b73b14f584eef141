"""Dual-path conformance: synthetic service responses must be bitwise equal
to the client package's in-process synthetic oracles (test-only dependency)."""

import threading
import time

import numpy as np
import pytest
import uvicorn
from fastapi.testclient import TestClient

from oracle_service.app import create_app
from oracle_service.config import ServiceConfig
from oracle_service.tensors import decode_tensor, encode_tensor

from panofuse.gateway import OracleClient, OracleEndpoint
from panofuse.oracles import wire_denoise_blend, wire_depth_luma_affine


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(ServiceConfig()))


def test_fifty_seeded_denoise_requests_bitwise(client):
    rng = np.random.default_rng(100)
    for k in range(50):
        h, w = int(rng.integers(4, 17)), int(rng.integers(4, 17))
        state = rng.standard_normal((h, w, 3)).astype(np.float32)
        mask = (rng.random((h, w)) > 0.4).astype(np.float32)
        known = rng.standard_normal((h, w, 3)).astype(np.float32)
        t = int(rng.integers(1, 20))
        seed = int(rng.integers(0, 2**31))
        body = {
            "state": encode_tensor(state),
            "t": t,
            "condition": {
                "prompt": "",
                "mask": encode_tensor(mask),
                "known": encode_tensor(known),
                "seed": seed,
            },
        }
        resp = client.post("/v1/denoise", json=body)
        assert resp.status_code == 200
        got = decode_tensor(resp.json()["state"])
        ref = wire_denoise_blend(state, mask, known, t, seed)
        assert got.tobytes() == ref.tobytes(), f"request {k}: bitwise mismatch"
    print("\nPASS  [SECONDARY] wire conformance: 50 seeded denoise requests bitwise equal")


def test_fifty_seeded_depth_requests_bitwise(client):
    rng = np.random.default_rng(101)
    for k in range(50):
        h, w = int(rng.integers(4, 17)), int(rng.integers(4, 17))
        crop = rng.random((h, w, 3)).astype(np.float32)
        seed = int(rng.integers(0, 2**31))
        resp = client.post("/v1/depth", json={"crop": encode_tensor(crop), "seed": seed})
        assert resp.status_code == 200
        got = decode_tensor(resp.json()["depth"])
        ref = wire_depth_luma_affine(crop, seed)
        assert got.tobytes() == ref.tobytes(), f"request {k}: bitwise mismatch"
    print("\nPASS  [SECONDARY] wire conformance: 50 seeded depth requests bitwise equal")


@pytest.fixture(scope="module")
def live_server():
    config = uvicorn.Config(
        create_app(ServiceConfig()), host="127.0.0.1", port=0, log_level="error"
    )
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("uvicorn did not start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def test_gateway_client_end_to_end_over_socket(live_server):
    with OracleClient(OracleEndpoint(base_url=live_server)) as c:
        info = c.health()
        assert info["mode"] == "synthetic"
        rng = np.random.default_rng(102)
        state = rng.standard_normal((8, 6, 3)).astype(np.float32)
        mask = (rng.random((8, 6)) > 0.5).astype(np.float32)
        known = rng.standard_normal((8, 6, 3)).astype(np.float32)
        out = c.remote_denoise(state, t=4, prompt="", mask=mask, known=known, seed=77)
        ref = wire_denoise_blend(state, mask, known, 4, 77)
        assert out.tobytes() == ref.tobytes()

        crop = rng.random((7, 7, 3)).astype(np.float32)
        dep = c.remote_depth(crop, seed=13)
        assert dep.tobytes() == wire_depth_luma_affine(crop, 13).tobytes()
