"""Sidecar entry point: serve the backend or extract a pose map."""

import argparse
import logging
import sys

from .config import SidecarConfig


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    config = SidecarConfig(
        checkpoint=args.checkpoint,
        embedder=args.embedder,
        embedder_onnx_path=args.embedder_onnx,
        device=args.device,
        port=args.port,
        generation_engine=args.engine,
        embed_engine=args.embed_engine,
    )
    if args.controlnet_openpose:
        config.controlnets["openpose"] = args.controlnet_openpose
    if args.controlnet_lineart:
        config.controlnets["lineart"] = args.controlnet_lineart
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=config.port, log_level="info")
    return 0


def cmd_extract_pose(args) -> int:
    from .pose import NoPersonError, extract_pose

    with open(args.reference, "rb") as fh:
        data = fh.read()
    try:
        png = extract_pose(data)
    except NoPersonError as exc:
        print(f"error: no-person-detected: {exc}", file=sys.stderr)
        return 2
    with open(args.out, "wb") as fh:
        fh.write(png)
    print(f"pose map written to {args.out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sig-sidecar")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the inference backend")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8694)
    p.add_argument("--checkpoint", default=SidecarConfig.checkpoint)
    p.add_argument("--controlnet-openpose", default=None)
    p.add_argument("--controlnet-lineart", default=None)
    p.add_argument("--embedder", choices=("arcface", "ghostfacenet"), default="arcface")
    p.add_argument("--embedder-onnx", default=None, help="ONNX path for ghostfacenet")
    p.add_argument("--device", default="cpu")
    p.add_argument("--engine", choices=("auto", "diffusers", "procedural"), default="auto")
    p.add_argument("--embed-engine", choices=("auto", "onnx", "pixelstat"), default="auto")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("extract-pose", help="reference photo -> openpose-style map")
    p.add_argument("reference")
    p.add_argument("out")
    p.set_defaults(fn=cmd_extract_pose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
