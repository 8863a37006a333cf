"""Start several independent application processes that share one broker.

Whichever process arrives first hosts the broker in-process; the rest
connect to it. Each app issues a mix of hash and block-cipher requests.

    python scripts/demo_apps.py --apps 4 --socket /tmp/mecha-demo.sock
"""

import argparse
import multiprocessing
import os

from mecha.client import ensure_broker
from mecha.config import BrokerConfig
from mecha.protocol import OpCode


def app(index, socket_path, done, out):
    handle = ensure_broker(socket_path, BrokerConfig(), f"app{index}")
    digest = handle.request(OpCode.HASH, b"message from app%d" % index)
    block = handle.request(OpCode.ENCRYPT, bytes([index]) * 32)
    out.put((index, handle.csn, handle.broker is not None, digest.hex()[:16], block.hex()[:16]))
    done.wait()
    handle.close()
    if handle.broker is not None:
        handle.broker.shutdown()


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--apps", type=int, default=4)
    p.add_argument("--socket", default="/tmp/mecha-demo.sock")
    args = p.parse_args()
    if os.path.exists(args.socket):
        os.unlink(args.socket)
    ctx = multiprocessing.get_context("spawn")
    done, out = ctx.Barrier(args.apps), ctx.Queue()
    procs = [ctx.Process(target=app, args=(i, args.socket, done, out)) for i in range(args.apps)]
    for pr in procs:
        pr.start()
    rows = sorted(out.get() for _ in procs)
    for pr in procs:
        pr.join()
    for index, csn, hosted, digest, block in rows:
        role = "host" if hosted else "client"
        print(f"app{index}: csn={csn} {role:<6} sha256={digest}... aes={block}...")


if __name__ == "__main__":
    main()
