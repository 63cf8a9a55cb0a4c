"""HTTP client backend for a self-hosted diffusion inference service.

Wire protocol: ``POST /generate`` with JSON
``{prompt, seed, steps, guidance, width, height, mode, adapter_ref,
init_image_b64?}`` returning ``{image_b64, seed, timing}``; adapters are
uploaded once via ``POST /adapters`` (raw container bytes) which returns
``{adapter_ref}``. The echoed seed is verified so a misbehaving service
cannot silently break reproducibility.
"""

from __future__ import annotations

import base64
import io
import tempfile
from pathlib import Path

import numpy as np
import requests
from PIL import Image

from .errors import BackendError, RetryableBackendError
from .generation import GenerationBackend, GenerationMode, GenerationRequest
from .lora import LoraAdapter, save_adapter

DEFAULT_TIMEOUT = 120.0


def _png_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _b64_image(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    with Image.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


class ServiceBackend(GenerationBackend):
    """Talks to a diffusion endpoint; never holds model weights itself."""

    backend_id = "service"
    capabilities = frozenset({GenerationMode.TEXT_TO_IMAGE, GenerationMode.IMAGE_TO_IMAGE})

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT, session=None):
        if not base_url:
            raise BackendError("service backend needs a base URL")
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def _post(self, path: str, **kwargs) -> dict:
        url = f"{self.base_url}{path}"
        try:
            resp = self.session.post(url, timeout=self.timeout, **kwargs)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise RetryableBackendError(f"backend unreachable at {url}: {exc}") from exc
        if resp.status_code >= 500:
            raise RetryableBackendError(f"backend error {resp.status_code} from {url}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise BackendError(f"backend rejected request ({resp.status_code}) at {url}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendError(f"backend returned non-JSON from {url}") from exc

    def prepare_adapter(self, adapter: LoraAdapter | None) -> str:
        if adapter is None:
            return ""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "adapter.bin"
            save_adapter(adapter, path)
            payload = path.read_bytes()
        doc = self._post(
            "/adapters",
            data=payload,
            headers={"Content-Type": "application/octet-stream"},
        )
        ref = doc.get("adapter_ref")
        if not ref:
            raise BackendError("adapter upload response lacks 'adapter_ref'")
        return str(ref)

    def render(
        self,
        prompt: str,
        seed: int,
        request: GenerationRequest,
        adapter_ref: str,
        init_image: np.ndarray | None,
    ) -> np.ndarray:
        body = {
            "prompt": prompt,
            "seed": seed,
            "steps": request.sampler.steps,
            "guidance": request.sampler.guidance_scale,
            "width": request.resolution,
            "height": request.resolution,
            "mode": request.mode.value,
            "adapter_ref": adapter_ref,
        }
        if request.mode is GenerationMode.IMAGE_TO_IMAGE:
            if init_image is None:
                raise BackendError("image_to_image render requires an init image")
            body["init_image_b64"] = _png_b64(init_image)
            body["strength"] = request.strength
        doc = self._post("/generate", json=body)
        if "image_b64" not in doc or "seed" not in doc:
            raise BackendError("generate response missing 'image_b64' or 'seed'")
        echoed = int(doc["seed"])
        if echoed != seed:
            raise BackendError(f"seed mismatch: sent {seed}, backend echoed {echoed}")
        img = _b64_image(doc["image_b64"])
        if img.shape != (request.resolution, request.resolution, 3):
            raise BackendError(
                f"backend returned image shape {img.shape}, "
                f"expected ({request.resolution}, {request.resolution}, 3)"
            )
        return img
