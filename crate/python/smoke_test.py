"""Builds the extension module and exercises it from Python.

Run from the repository root:  python3 python/smoke_test.py
"""

import importlib.util
import math
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "stemcodec-py"],
        cwd=ROOT,
        check=True,
    )
    target = pathlib.Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    lib = target / "release" / "libstemcodec_py.so"
    dest = pathlib.Path(tempfile.mkdtemp()) / "stemcodec.so"
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("stemcodec", dest)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    sc = build()

    assert abs(sc.si_sdr([1.0, 0.0], [1.0, 1.0])) < 1e-9
    ref = [math.sin(0.01 * i) for i in range(1000)]
    est = [r + 0.1 * math.cos(0.37 * i) for i, r in enumerate(ref)]
    base = sc.si_sdr(ref, est)
    for c in (0.5, 2.0, 10.0):
        assert sc.si_sdr(ref, [c * e for e in est]) == base
    assert sc.chunk_offsets(10 * 22050, 4 * 22050, 2 * 22050) == [0, 44100, 88200, 132300]

    frames = sc.mel_spectrogram([0.0] * 2048, 22050, 256)
    assert len(frames) == 29 and all(len(f) == 64 and max(f) == 0.0 for f in frames)

    try:
        sc.si_sdr([0.0, 0.0], [1.0, 1.0])
    except sc.StemcodecError as e:
        assert e.args[0] == "invalid_input", e.args
    else:
        raise AssertionError("all-zero reference accepted")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        rows = [[t % 8, (3 * t) % 8] for t in range(5)]
        sc.write_code_grid(tmp / "g.rvqg", rows, 8)
        assert sc.read_code_grid(tmp / "g.rvqg") == rows

        split = sc.make_toy_data(tmp / "toy", n_tracks=3, seconds=1.0, seed=7)
        assert sum(len(v) for v in split.values()) == 3
        assert (tmp / "toy" / "train.txt").exists()

    text = sc.resolve_config("[train]\nbatch_size = 4\n", [("rvq.depth", "6")])
    assert "batch_size = 4" in text and "depth = 6" in text
    try:
        sc.resolve_config("[train]\nbogus = 1\n")
    except sc.StemcodecError as e:
        assert e.args[0] == "config", e.args
    else:
        raise AssertionError("unknown key accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    sys.exit(main())
