import argparse


def main() -> int:
    parser = argparse.ArgumentParser(prog="sketchbench-sidecar")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8750)
    args = parser.parse_args()

    import uvicorn

    uvicorn.run("sidecar.app:app", host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
