import argparse
import sys

from . import PROTOCOL_VERSION, serve


def main() -> int:
    parser = argparse.ArgumentParser(prog="evoset_worker")
    parser.add_argument(
        "--protocol-version", action="store_true", help="print the protocol version and exit"
    )
    args = parser.parse_args()
    if args.protocol_version:
        print(PROTOCOL_VERSION)
        return 0
    serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
