"""Stand-in external backend for protocol tests.

Answers every request with a constant map, or misbehaves on purpose::

    python -m multibox_uq.mock_backend --value 0.5
    python -m multibox_uq.mock_backend --mode badmagic --fail-on 2,5

``--fail-on`` lists 0-based request numbers that get the faulty reply; the
rest are answered normally. Without it the mode applies to every request.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .imaging import encode_raster_f32, load_image

MODES = ("ok", "err", "badmagic", "wrongdims", "garbage", "outofrange", "die")


def _write(path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)


def _answer(line: str, mode: str, value: float, n_all: int) -> str | None:
    parts = line.split()
    if not parts:
        return "ERR empty request"
    cmd = parts[0]
    if cmd == "PREDICT" and len(parts) == 7:
        img_path, out = parts[1], parts[6]
        targets = [out]
    elif cmd == "PREDICT_ALL" and len(parts) == 3:
        img_path, out_dir = parts[1], parts[2]
        targets = [os.path.join(out_dir, f"cand_{k}.pmap") for k in range(n_all)]
    else:
        return f"ERR malformed request: {line.strip()}"
    if mode == "die":
        return None
    if mode == "err":
        return "ERR mock failure"
    if mode == "garbage":
        return "HELLO"
    try:
        img = load_image(img_path)
    except Exception as exc:  # report, never crash the server loop
        return f"ERR {exc}"
    h, w = img.shape2d
    if mode == "wrongdims":
        h, w = h + 1, w
    fill = 1.5 if mode == "outofrange" else value
    for t in targets:
        data = encode_raster_f32(np.full((h, w), fill))
        if mode == "badmagic":
            data = b"XMAP" + data[4:]
        _write(t, data)
    return f"OK {out}" if cmd == "PREDICT" else f"OK {n_all}"


def serve(stdin, stdout, mode="ok", value=0.5, fail_on=None, n_all=4):
    for i, line in enumerate(stdin):
        faulty = fail_on is None or i in fail_on
        reply = _answer(line, mode if faulty else "ok", value, n_all)
        if reply is None:
            return
        stdout.write(reply + "\n")
        stdout.flush()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mode", choices=MODES, default="ok")
    ap.add_argument("--value", type=float, default=0.5, help="constant probability to return")
    ap.add_argument("--fail-on", default=None, help="comma list of request numbers that misbehave")
    ap.add_argument("--n-all", type=int, default=4, help="candidates per PREDICT_ALL")
    args = ap.parse_args(argv)
    fail_on = None
    if args.fail_on:
        fail_on = {int(s) for s in args.fail_on.split(",") if s.strip()}
    serve(sys.stdin, sys.stdout, args.mode, args.value, fail_on, args.n_all)


if __name__ == "__main__":
    main()
