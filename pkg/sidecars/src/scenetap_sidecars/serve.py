"""Command-line launcher for one sidecar service."""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .engines import EngineError, load_engine
from .services import create_inpaint_app, create_score_app, create_segment_app

_FACTORIES = {
    "segment": create_segment_app,
    "inpaint": create_inpaint_app,
    "score": create_score_app,
}


def build_app(role: str, engine_spec: str = "reference", slider: int = 3):
    engine = load_engine(role, engine_spec, slider=slider)
    return _FACTORIES[role](engine)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scenetap-sidecar",
        description="Serve one model role behind the scenetap wire protocol.",
    )
    parser.add_argument("role", choices=sorted(_FACTORIES))
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8801)
    parser.add_argument(
        "--engine", default="reference",
        help="'reference' or a 'module:factory' path that loads model weights",
    )
    parser.add_argument(
        "--slider", type=int, default=3,
        help="segmentation proposal granularity",
    )
    args = parser.parse_args(argv)
    try:
        app = build_app(args.role, args.engine, slider=args.slider)
    except (EngineError, ValueError) as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return 2
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
