"""Run the oracle service: python -m oracle_service [--mode synthetic] [--port 8400]"""

import argparse

import uvicorn

from oracle_service.app import create_app
from oracle_service.config import ServiceConfig


def main() -> None:
    parser = argparse.ArgumentParser(description="Model-oracle HTTP service")
    parser.add_argument("--mode", choices=["synthetic", "real"], default="synthetic")
    parser.add_argument("--synth-denoise", choices=["identity", "blend"], default="blend")
    parser.add_argument("--synth-depth", choices=["constant", "luma_affine"], default="luma_affine")
    parser.add_argument("--denoise-model", default=None)
    parser.add_argument("--depth-model", default=None)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-crop", type=int, default=1024)
    parser.add_argument("--steps", type=int, default=50, help="scheduler steps (real mode)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    args = parser.parse_args()

    overrides = {
        "mode": args.mode,
        "synth_denoise": args.synth_denoise,
        "synth_depth": args.synth_depth,
        "device": args.device,
        "max_crop": args.max_crop,
        "denoise_steps": args.steps,
        "host": args.host,
        "port": args.port,
    }
    if args.denoise_model:
        overrides["denoise_model"] = args.denoise_model
    if args.depth_model:
        overrides["depth_model"] = args.depth_model
    config = ServiceConfig(**overrides)
    uvicorn.run(create_app(config), host=config.host, port=config.port)


if __name__ == "__main__":
    main()
