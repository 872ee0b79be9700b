"""Line protocol for segmenters running in a separate process.

The backend is spawned once and kept alive. Requests go to its stdin and
replies come back on its stdout, one line each::

    PREDICT <image_path> <x0> <y0> <x1> <y1> <out_path>   ->  OK <out_path> | ERR <msg>
    PREDICT_ALL <image_path> <out_dir>                     ->  OK <count>    | ERR <msg>

Predictions travel as PMAP files (see :mod:`multibox_uq.imaging`). One
connection serves one request at a time; run one backend per worker.
"""

from __future__ import annotations

import hashlib
import os
import shlex
import shutil
import subprocess
import tempfile

import numpy as np

from .errors import (
    BackendError,
    BackendUnavailable,
    DimensionMismatch,
    IoFailure,
    ProtocolViolation,
)
from .imaging import Image, load_raster_f32, save_image
from .prompts import BoxPrompt


def format_predict(image_path, box: BoxPrompt, out_path) -> str:
    x0, y0, x1, y1 = box.as_tuple()
    return f"PREDICT {image_path} {x0} {y0} {x1} {y1} {out_path}\n"


def format_predict_all(image_path, out_dir) -> str:
    return f"PREDICT_ALL {image_path} {out_dir}\n"


def parse_reply(line: str) -> str:
    """Return the payload of an ``OK`` line; raise on ``ERR`` or anything else."""
    if not line:
        raise BackendUnavailable("backend closed its output")
    if not line.endswith("\n"):
        raise ProtocolViolation(f"unterminated reply {line!r}")
    line = line[:-1]
    if line.startswith("OK "):
        return line[3:]
    if line.startswith("ERR "):
        raise BackendError(line[4:])
    if line == "ERR":
        raise BackendError("")
    raise ProtocolViolation(f"unrecognized reply {line!r}")


def _load_checked(path, shape) -> np.ndarray:
    try:
        r = load_raster_f32(path)
    except IoFailure as exc:
        raise ProtocolViolation(f"backend reported {path} but {exc}") from exc
    if r.shape != tuple(shape):
        raise DimensionMismatch(f"backend map is {r.shape}, image is {tuple(shape)}")
    r = r.astype(np.float64)
    if not np.all(np.isfinite(r)) or r.min() < 0.0 or r.max() > 1.0:
        raise ProtocolViolation(f"{path}: probabilities outside [0, 1]")
    return r


class ExternalBackend:
    """Segmenter backend that drives an external process over the line protocol.

    ``command`` is an argv list or a shell-style string. Images handed to
    :meth:`predict` are written once to ``work_dir`` as PNG, named by a hash
    of their contents.
    """

    def __init__(self, command, work_dir=None, env=None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise BackendUnavailable("empty backend command")
        self._own_dir = work_dir is None
        self.work_dir = tempfile.mkdtemp(prefix="mbuq-") if work_dir is None else str(work_dir)
        os.makedirs(self.work_dir, exist_ok=True)
        self._env = env
        self._proc = None
        self._n = 0

    # -- process management
    def _ensure(self):
        if self._proc is not None and self._proc.poll() is None:
            return self._proc
        if self._proc is not None:
            raise BackendUnavailable(f"backend exited with status {self._proc.returncode}")
        try:
            self._proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
                env=self._env,
            )
        except OSError as exc:
            raise BackendUnavailable(f"cannot start {self.argv[0]!r}: {exc}") from exc
        return self._proc

    def request(self, line: str) -> str:
        proc = self._ensure()
        try:
            proc.stdin.write(line)
            proc.stdin.flush()
            reply = proc.stdout.readline()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise BackendUnavailable(f"backend connection lost: {exc}") from exc
        return parse_reply(reply)

    def close(self):
        if self._proc is not None:
            if self._proc.poll() is None:
                try:
                    self._proc.stdin.close()
                    self._proc.wait(timeout=5)
                except (OSError, subprocess.TimeoutExpired):
                    self._proc.kill()
                    self._proc.wait()
            else:
                self._proc.stdin.close()
            self._proc.stdout.close()
        self._proc = None
        if self._own_dir:
            shutil.rmtree(self.work_dir, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- requests
    def image_path(self, image: Image) -> str:
        digest = hashlib.sha1(np.ascontiguousarray(image.data).tobytes()).hexdigest()[:16]
        digest += f"-{image.height}x{image.width}x{image.channels}"
        path = os.path.join(self.work_dir, f"img-{digest}.png")
        if not os.path.exists(path):
            save_image(image, path)
        return path

    def _out_path(self, tag: str) -> str:
        self._n += 1
        return os.path.join(self.work_dir, f"{tag}-{self._n:06d}.pmap")

    def predict_path(self, image_path, box: BoxPrompt, shape) -> np.ndarray:
        out = self._out_path("pred")
        got = self.request(format_predict(image_path, box, out))
        if got != out:
            raise ProtocolViolation(f"asked for {out}, backend answered {got}")
        try:
            return _load_checked(out, shape)
        finally:
            _unlink(out)

    def predict(self, image: Image, box: BoxPrompt) -> np.ndarray:
        box.validate(image.width, image.height)
        return self.predict_path(self.image_path(image), box, image.shape2d)

    def predict_everything(self, image: Image) -> list[np.ndarray]:
        self._n += 1
        out_dir = os.path.join(self.work_dir, f"all-{self._n:06d}")
        os.makedirs(out_dir, exist_ok=True)
        got = self.request(format_predict_all(self.image_path(image), out_dir))
        try:
            count = int(got)
        except ValueError:
            raise ProtocolViolation(f"PREDICT_ALL expects a count, got {got!r}") from None
        if count < 1:
            raise ProtocolViolation(f"PREDICT_ALL returned {count} candidates")
        try:
            return [
                _load_checked(os.path.join(out_dir, f"cand_{k}.pmap"), image.shape2d)
                for k in range(count)
            ]
        finally:
            for k in range(count):
                _unlink(os.path.join(out_dir, f"cand_{k}.pmap"))
            try:
                os.rmdir(out_dir)
            except OSError:
                pass


def _unlink(path):
    try:
        os.unlink(path)
    except OSError:
        pass

