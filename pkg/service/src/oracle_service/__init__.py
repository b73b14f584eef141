"""Model-oracle HTTP service.

Serves one denoising step of an inpainting model (POST /v1/denoise) and
monocular depth estimation (POST /v1/depth) over a bit-exact tensor wire
format. In synthetic mode both endpoints run documented deterministic
closed forms with no model downloads, for CI and conformance testing; in
real mode they wrap pretrained models.
"""

__version__ = "0.1.0"

from oracle_service.app import create_app
from oracle_service.config import ServiceConfig

__all__ = ["create_app", "ServiceConfig"]
