#!/usr/bin/env python
"""Convert UCR archive ``.tsv`` splits into gzipped canonical ``.ts`` files.

The UCR 2018 archive ships univariate splits as ``<Name>_TRAIN.tsv`` /
``<Name>_TEST.tsv`` (label first, tab separated). Without arguments besides
the dataset names, the files are taken from the ``ucr-datasets`` wheel on the
package index (``pip download --no-deps ucr-datasets``), which bundles them.

    python scripts/import_ucr.py ECG5000 FordA ElectricDevices --out data/
    python scripts/import_ucr.py ECG5000 --src ~/UCRArchive_2018/ECG5000
"""
from __future__ import annotations

import argparse
import glob
import gzip
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from ppmlts.data import parse_csv, serialize_ts


def _wheel_reader():
    tmp = tempfile.mkdtemp()
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "ucr-datasets==0.0.6"],
        check=True,
    )
    wheel = zipfile.ZipFile(glob.glob(f"{tmp}/*.whl")[0])
    return lambda name, split: wheel.read(f"ucr_datasets/data/{name}_{split}.tsv")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="+")
    ap.add_argument("--src", type=Path, help="directory holding <Name>_TRAIN.tsv / <Name>_TEST.tsv")
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("--max-train", type=int, default=None, help="keep only the first N training rows")
    ap.add_argument("--max-test", type=int, default=None, help="keep only the first N test rows")
    args = ap.parse_args(argv)

    if args.src:
        read = lambda name, split: (args.src / f"{name}_{split}.tsv").read_bytes()  # noqa: E731
    else:
        read = _wheel_reader()
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.names:
        train = parse_csv(read(name, "TRAIN"), name=name)
        test = parse_csv(read(name, "TEST"), name=name, split_tag="test")
        # both splits must declare the same label set in the same order
        labels = sorted(set(train.label_names) | set(test.label_names), key=lambda s: float(s))
        for split, ds, cap in (("TRAIN", train, args.max_train), ("TEST", test, args.max_test)):
            remap = [labels.index(l) for l in ds.label_names]
            ds.labels = np.asarray(remap)[ds.labels]
            ds.label_names = labels
            if cap is not None:
                ds = ds.subset(range(min(cap, len(ds))))
            path = args.out / f"{name}_{split}.ts.gz"
            # mtime=0 keeps the archive byte-stable across runs
            with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
                gz.write(serialize_ts(ds).encode())
            print(f"{path}: {len(ds)} series, length {ds.length}, {len(labels)} classes")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
