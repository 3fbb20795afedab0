#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package (MIT,
github.com/cazala/mnist, 10000 MNIST digits) into gzipped IDX files.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_json_to_idx.py package/src/digits data/mnist-subset

Each class file is split 80/20 in file order; classes are then interleaved
round-robin so the train and eval files are not sorted by label.
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for label in range(10):
        raw = json.loads((src / f"{label}.json").read_text())["data"]
        n = len(raw) // 784
        digits = [raw[i * 784:(i + 1) * 784] for i in range(n)]
        cut = (n * 8) // 10
        train.append([(d, label) for d in digits[:cut]])
        test.append([(d, label) for d in digits[cut:]])

    def interleave(groups):
        out, i = [], 0
        while any(i < len(g) for g in groups):
            for g in groups:
                if i < len(g):
                    out.append(g[i])
            i += 1
        return out

    for name, groups in (("train", train), ("t10k", test)):
        rows = interleave(groups)
        pixels = bytes(
            max(0, min(255, round(v * 255))) for d, _ in rows for v in d
        )
        labels = bytes(l for _, l in rows)
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, (len(rows), 28, 28), pixels)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, (len(rows),), labels)
        print(name, len(rows))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
