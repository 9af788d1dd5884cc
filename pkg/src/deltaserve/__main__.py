"""CLI launcher: `deltaserve [--config FILE] [--host H] [--port P]`."""

from __future__ import annotations

import argparse
import logging

from .config import ServerConfig


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(
        prog="deltaserve",
        description="Stateful tool-calling inference server (deterministic mock engine)",
    )
    parser.add_argument("--config", help="KEY=VALUE config file (see README)")
    parser.add_argument("--host", help="listen address (overrides config and env)")
    parser.add_argument("--port", type=int, help="listen port (overrides config and env)")
    parser.add_argument("--log-level", default="info")
    args = parser.parse_args(argv)

    logging.basicConfig(level=args.log_level.upper())
    config = ServerConfig.load(args.config)
    if args.host:
        config.host = args.host
    if args.port:
        config.port = args.port

    import uvicorn

    from .server import create_app

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level=args.log_level)


if __name__ == "__main__":
    main()
