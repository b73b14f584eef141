"""HTTP client for remote model oracles with bit-exact tensor transport.

The wire protocol (shared verbatim with the oracle service): HTTP/1.1,
JSON bodies, endpoints POST /v1/denoise, POST /v1/depth, GET /v1/health.
Tensors travel as base64 little-endian float32 with explicit shape and a
CRC-32 checksum; every model request carries a mandatory seed. Per-crop
requests may be in flight concurrently; the caller receives responses in
request order regardless of completion order.
"""

from __future__ import annotations

import base64
import itertools
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import httpx
import numpy as np

from panofuse.depthfusion import DepthOracle
from panofuse.sampler import DenoiseCondition, DenoiserOracle


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Endpoint unreachable or persistently timing out."""


class ProtocolError(GatewayError):
    """Malformed message, shape mismatch, or checksum failure."""


@dataclass(frozen=True)
class TensorMessage:
    """Shape + raw little-endian float32 bytes + CRC-32, lossless on the wire."""

    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        if len(self.data) != 4 * int(np.prod(self.shape)):
            raise ProtocolError(
                f"tensor byte length {len(self.data)} != 4 * prod{self.shape}"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "TensorMessage":
        a = np.ascontiguousarray(arr, dtype="<f4")
        return cls(shape=tuple(int(s) for s in a.shape), data=a.tobytes())

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype="<f4").reshape(self.shape).copy()

    def encode(self) -> dict:
        return {
            "shape": list(self.shape),
            "dtype": "f32",
            "data": base64.b64encode(self.data).decode("ascii"),
            "crc32": zlib.crc32(self.data) & 0xFFFFFFFF,
        }

    @classmethod
    def decode(cls, payload: dict) -> "TensorMessage":
        try:
            shape = tuple(int(s) for s in payload["shape"])
            dtype = payload["dtype"]
            raw = base64.b64decode(payload["data"])
            crc = int(payload["crc32"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed tensor message: {exc}") from exc
        if dtype != "f32":
            raise ProtocolError(f"unsupported dtype {dtype!r}")
        if (zlib.crc32(raw) & 0xFFFFFFFF) != crc:
            raise ChecksumError("tensor checksum mismatch")
        return cls(shape=shape, data=raw)


class ChecksumError(ProtocolError):
    pass


@dataclass(frozen=True)
class OracleEndpoint:
    base_url: str
    timeout: float = 30.0
    retries: int = 2
    mode: str = "synthetic"

    def __post_init__(self):
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


class OracleClient:
    """Thread-safe client for one oracle endpoint.

    Retry policy: timeouts retry up to endpoint.retries then fail; protocol
    (4xx) errors never retry; a response checksum failure retries once.
    """

    def __init__(self, endpoint: OracleEndpoint, max_concurrency: int = 8):
        self.endpoint = endpoint
        self.max_concurrency = max_concurrency
        self._client = httpx.Client(base_url=endpoint.base_url, timeout=endpoint.timeout)
        self._req_ids = itertools.count()

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, path: str, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.endpoint.retries + 1):
            try:
                resp = self._client.post(path, json=payload)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last = exc
                continue
            if 400 <= resp.status_code < 500:
                raise ProtocolError(
                    f"{self.endpoint.base_url}{path} rejected request "
                    f"({resp.status_code}): {resp.text[:200]}"
                )
            if resp.status_code != 200:
                last = GatewayError(f"server error {resp.status_code}: {resp.text[:200]}")
                continue
            return resp.json()
        raise TransportError(
            f"request to {self.endpoint.base_url}{path} failed after "
            f"{self.endpoint.retries + 1} attempts: {last}"
        )

    def _post_tensor(self, path: str, payload: dict, key: str) -> np.ndarray:
        body = self._post(path, payload)
        try:
            return TensorMessage.decode(body[key]).to_array()
        except ChecksumError:
            body = self._post(path, payload)  # checksum failure retries once
            return TensorMessage.decode(body[key]).to_array()
        except KeyError as exc:
            raise ProtocolError(f"response missing field {exc}") from exc

    def health(self) -> dict:
        try:
            resp = self._client.get("/v1/health")
        except httpx.TransportError as exc:
            raise TransportError(
                f"oracle endpoint {self.endpoint.base_url} unreachable: {exc}"
            ) from exc
        if resp.status_code != 200:
            raise GatewayError(
                f"health check failed at {self.endpoint.base_url}: {resp.status_code}"
            )
        return resp.json()

    def remote_denoise(
        self,
        crop_state: np.ndarray,
        t: int,
        prompt: str,
        mask: np.ndarray,
        known: np.ndarray,
        seed: int,
    ) -> np.ndarray:
        if t < 1:
            raise ValueError("denoise step index t must be >= 1")
        payload = {
            "request_id": next(self._req_ids),
            "state": TensorMessage.from_array(crop_state).encode(),
            "t": int(t),
            "condition": {
                "prompt": prompt,
                "mask": TensorMessage.from_array(mask).encode(),
                "known": TensorMessage.from_array(known).encode(),
                "seed": int(seed),
            },
        }
        out = self._post_tensor("/v1/denoise", payload, "state")
        if out.shape != tuple(crop_state.shape):
            raise ProtocolError(f"denoise response shape {out.shape} != request {crop_state.shape}")
        return out

    def remote_depth(self, crop: np.ndarray, seed: int) -> np.ndarray:
        payload = {
            "request_id": next(self._req_ids),
            "crop": TensorMessage.from_array(crop).encode(),
            "seed": int(seed),
        }
        out = self._post_tensor("/v1/depth", payload, "depth")
        if out.shape != tuple(crop.shape[:2]):
            raise ProtocolError(
                f"depth response shape {out.shape} != request spatial {crop.shape[:2]}"
            )
        return out

    def map_ordered(self, fn, args_list: list) -> list:
        """Run fn over args concurrently, returning results in submission order."""
        if len(args_list) <= 1 or self.max_concurrency <= 1:
            return [fn(*args) for args in args_list]
        with ThreadPoolExecutor(max_workers=self.max_concurrency) as pool:
            futures = [pool.submit(fn, *args) for args in args_list]
            return [f.result() for f in futures]


class RemoteDenoiserOracle(DenoiserOracle):
    """DenoiserOracle backed by the wire protocol; renoise stays client-side."""

    def __init__(
        self,
        client: OracleClient,
        steps: int,
        seed: int = 0,
        noise_scale: float = 0.0,
    ):
        self.client = client
        self.steps = steps
        self.seed = seed
        self.noise_scale = noise_scale
        self.concurrency = client.max_concurrency

    def denoise_step(self, crop_state, t, condition: DenoiseCondition, crop_index: int):
        return self.client.remote_denoise(
            crop_state, t, condition.prompt, condition.mask, condition.known, seed=self.seed
        )

    def renoise(self, clean, t):
        if t == 0 or self.noise_scale == 0.0:
            return clean
        entropy = [int(self.seed) & 0xFFFFFFFFFFFFFFFF, 12, t]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
        noise = rng.standard_normal(clean.shape).astype(np.float32)
        return (clean + self.noise_scale * (t / self.steps) * noise).astype(np.float32)


class RemoteDepthOracle(DepthOracle):
    def __init__(self, client: OracleClient, seed: int = 0):
        self.client = client
        self.seed = seed

    def estimate(self, crop, crop_index):
        return self.client.remote_depth(np.asarray(crop, dtype=np.float32), seed=self.seed)
