import argparse


def main():
    parser = argparse.ArgumentParser(description="Run the scoring service.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8600)
    args = parser.parse_args()
    import uvicorn

    uvicorn.run("clip_service.app:app", host=args.host, port=args.port, log_level="info")


if __name__ == "__main__":
    main()
