"""Dataset ingestion: UCR/UEA ``.ts`` parsing, normalization, splits and client silos.

The ``.ts`` grammar accepted here is documented in ``docs/ts_format.md``.
"""
from __future__ import annotations

import dataclasses
import gzip
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ClassTooSmall,
    MalformedHeader,
    MalformedRecord,
    MissingValue,
    RaggedRecord,
    TooManyClients,
    UnknownLabel,
)

STD_FLOOR = 1e-8
SPLIT_TAGS = ("train", "val", "test")


@dataclass
class TimeSeriesDataset:
    samples: np.ndarray  # (count, channels, length), float64
    labels: np.ndarray  # (count,), int64 in [0, num_classes)
    label_names: list[str]
    name: str = ""
    split_tag: str = "train"
    # positions in the source dataset; used to verify partitions
    index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 3:
            raise ValueError(f"samples must be (count, channels, length), got {self.samples.shape}")
        if len(self.labels) != len(self.samples):
            raise ValueError("labels and samples differ in count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.label_names)):
            raise ValueError("label index outside label_names")
        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"split_tag must be one of {SPLIT_TAGS}")
        if self.index is None:
            self.index = np.arange(len(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    @property
    def length(self) -> int:
        return self.samples.shape[2]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx, split_tag: str | None = None) -> "TimeSeriesDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return dataclasses.replace(
            self,
            samples=self.samples[idx],
            labels=self.labels[idx],
            label_names=list(self.label_names),
            split_tag=split_tag or self.split_tag,
            index=self.index[idx],
        )


@dataclass
class SiloPartition:
    silos: list[TimeSeriesDataset]
    stratified: bool
    seed: int

    def __len__(self) -> int:
        return len(self.silos)


# ---------------------------------------------------------------------------
# .ts parsing

_BOOL = {"true": True, "false": False}


def _parse_bool(tag: str, value: str, lineno: int) -> bool:
    try:
        return _BOOL[value.lower()]
    except KeyError:
        raise MalformedHeader(f"@{tag} expects true/false, got {value!r}", lineno) from None


def parse_ts(text: bytes | str, name: str | None = None, split_tag: str = "train") -> TimeSeriesDataset:
    """Parse a UCR/UEA ``.ts`` document.

    Channel count and series length are fixed by the first record; later
    records that disagree raise :class:`RaggedRecord`. Labels are mapped to
    integers in the order of the ``@classLabel`` declaration.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedHeader(f"not UTF-8: {exc}") from None
    lines = text.splitlines()

    header: dict[str, object] = {}
    labels_decl: list[str] | None = None
    data_start = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not line.startswith("@"):
            raise MalformedHeader("record before @data", lineno)
        tag, _, rest = line[1:].partition(" ")
        tag = tag.lower()
        rest = rest.strip()
        if tag == "data":
            data_start = lineno
            break
        if tag == "problemname":
            if not rest:
                raise MalformedHeader("@problemName needs a value", lineno)
            header["problemname"] = rest
        elif tag in ("univariate", "equallength", "missing", "timestamps"):
            header[tag] = _parse_bool(tag, rest, lineno)
        elif tag in ("dimensions", "serieslength"):
            try:
                header[tag] = int(rest)
            except ValueError:
                raise MalformedHeader(f"@{tag} expects an integer, got {rest!r}", lineno) from None
            if header[tag] < 1:
                raise MalformedHeader(f"@{tag} must be positive", lineno)
        elif tag == "classlabel":
            parts = rest.split()
            if not parts or parts[0].lower() != "true":
                raise MalformedHeader("@classLabel must be 'true' followed by labels", lineno)
            labels_decl = parts[1:]
            if not labels_decl:
                raise MalformedHeader("@classLabel declares no labels", lineno)
            if len(set(labels_decl)) != len(labels_decl):
                raise MalformedHeader("duplicate class label in @classLabel", lineno)
        elif tag == "targetlabel":
            raise MalformedHeader("regression files (@targetLabel) are not supported", lineno)
        else:
            raise MalformedHeader(f"unknown header tag @{tag}", lineno)

    if data_start is None:
        raise MalformedHeader("missing @data section")
    if labels_decl is None:
        raise MalformedHeader("missing @classLabel declaration")
    if header.get("timestamps"):
        raise MalformedHeader("@timeStamps true is not supported")
    if header.get("equallength") is False:
        raise MalformedHeader("unequal-length series are not supported")
    label_index = {lab: i for i, lab in enumerate(labels_decl)}

    declared_channels = header.get("dimensions")
    if header.get("univariate") is True:
        if declared_channels not in (None, 1):
            raise MalformedHeader("@univariate true conflicts with @dimensions")
        declared_channels = 1
    declared_length = header.get("serieslength")

    records: list[np.ndarray] = []
    labels: list[int] = []
    shape: tuple[int, int] | None = None
    for lineno in range(data_start + 1, len(lines) + 1):
        line = lines[lineno - 1].strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(":")
        if len(fields) < 2:
            raise MalformedRecord("record has no class label field", lineno)
        label = fields[-1].strip()
        if label not in label_index:
            raise UnknownLabel(f"label {label!r} not declared in @classLabel", lineno)
        channels = []
        for chan in fields[:-1]:
            toks = chan.split(",")
            vals = []
            for tok in toks:
                tok = tok.strip()
                if tok == "?" or tok.lower() == "nan":
                    raise MissingValue("missing values are not supported", lineno)
                try:
                    v = float(tok)
                except ValueError:
                    raise MalformedRecord(f"not a number: {tok!r}", lineno) from None
                if not math.isfinite(v):
                    raise MalformedRecord(f"non-finite value: {tok!r}", lineno)
                vals.append(v)
            channels.append(vals)
        lengths = {len(c) for c in channels}
        if len(lengths) != 1:
            raise RaggedRecord("channels of one record differ in length", lineno)
        rec_shape = (len(channels), lengths.pop())
        if shape is None:
            shape = rec_shape
            if declared_channels is not None and shape[0] != declared_channels:
                raise RaggedRecord(f"expected {declared_channels} channels, got {shape[0]}", lineno)
            if declared_length is not None and shape[1] != declared_length:
                raise RaggedRecord(f"expected length {declared_length}, got {shape[1]}", lineno)
        elif rec_shape != shape:
            raise RaggedRecord(f"record shape {rec_shape} differs from first record {shape}", lineno)
        records.append(np.asarray(channels, dtype=np.float64))
        labels.append(label_index[label])

    if shape is None:
        samples = np.zeros((0, declared_channels or 1, declared_length or 1))
    else:
        samples = np.stack(records)
    return TimeSeriesDataset(
        samples=samples,
        labels=np.asarray(labels, dtype=np.int64),
        label_names=list(labels_decl),
        name=name or str(header.get("problemname", "")),
        split_tag=split_tag,
    )


def serialize_ts(ds: TimeSeriesDataset) -> str:
    """Canonical ``.ts`` text; ``parse_ts(serialize_ts(d))`` reproduces samples and labels."""
    out = io.StringIO()
    uni = ds.channels == 1
    out.write(f"@problemName {ds.name or 'unnamed'}\n")
    out.write("@timeStamps false\n@missing false\n")
    out.write(f"@univariate {'true' if uni else 'false'}\n")
    if not uni:
        out.write(f"@dimensions {ds.channels}\n")
    out.write(f"@equalLength true\n@seriesLength {ds.length}\n")
    out.write("@classLabel true " + " ".join(ds.label_names) + "\n@data\n")
    for sample, label in zip(ds.samples, ds.labels):
        chans = (",".join(repr(float(v)) for v in chan) for chan in sample)
        out.write(":".join(chans) + ":" + ds.label_names[label] + "\n")
    return out.getvalue()


def parse_csv(text: bytes | str, name: str = "", split_tag: str = "train") -> TimeSeriesDataset:
    """Univariate fallback: one ``label,v1,v2,...`` row per series.

    Tab-separated rows (the UCR archive's ``.tsv`` layout) are accepted too.
    Labels are ordered numerically when all of them parse as numbers,
    lexicographically otherwise.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    rows: list[list[str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        sep = "\t" if "\t" in line else ","
        rows.append([t.strip() for t in line.split(sep)])
    if not rows:
        raise MalformedRecord("empty csv")
    raw_labels = [_canonical_label(r[0]) for r in rows]
    names = sorted(set(raw_labels), key=_label_sort_key)
    index = {lab: i for i, lab in enumerate(names)}
    length = len(rows[0]) - 1
    values = np.empty((len(rows), 1, length))
    for i, r in enumerate(rows):
        if len(r) - 1 != length:
            raise RaggedRecord(f"row has {len(r) - 1} values, expected {length}", i + 1)
        for j, tok in enumerate(r[1:]):
            if tok == "?" or tok.lower() == "nan":
                raise MissingValue("missing values are not supported", i + 1)
            try:
                values[i, 0, j] = float(tok)
            except ValueError:
                raise MalformedRecord(f"not a number: {tok!r}", i + 1) from None
    return TimeSeriesDataset(values, [index[l] for l in raw_labels], names, name, split_tag)


def _canonical_label(tok: str) -> str:
    try:
        v = float(tok)
    except ValueError:
        return tok
    return str(int(v)) if v.is_integer() else tok


def _label_sort_key(lab: str):
    try:
        return (0, float(lab), lab)
    except ValueError:
        return (1, 0.0, lab)


def load_dataset(path: str | Path, split_tag: str = "train", name: str | None = None) -> TimeSeriesDataset:
    """Load ``.ts`` / ``.csv`` / ``.tsv`` files, optionally gzip-compressed."""
    path = Path(path)
    raw = path.read_bytes()
    suffixes = [s.lower() for s in path.suffixes]
    if suffixes and suffixes[-1] == ".gz":
        raw = gzip.decompress(raw)
        suffixes = suffixes[:-1]
    stem = path.name.split(".")[0]
    guess = name or (stem.rsplit("_", 1)[0] if "_" in stem else stem)
    if suffixes and suffixes[-1] == ".ts":
        return parse_ts(raw, name=name, split_tag=split_tag)
    if suffixes and suffixes[-1] in (".csv", ".tsv", ".txt"):
        return parse_csv(raw, name=guess, split_tag=split_tag)
    raise MalformedHeader(f"unrecognised dataset extension: {path.name}")


# ---------------------------------------------------------------------------
# preprocessing and splits


def znormalize(
    train: TimeSeriesDataset, others: Sequence[TimeSeriesDataset] = ()
) -> tuple[TimeSeriesDataset, list[TimeSeriesDataset]]:
    """Per-channel z-normalization with statistics taken from ``train`` only."""
    mean = train.samples.mean(axis=(0, 2), keepdims=True)
    std = train.samples.std(axis=(0, 2), keepdims=True)
    std = np.maximum(std, STD_FLOOR)

    def apply(ds: TimeSeriesDataset) -> TimeSeriesDataset:
        if ds.samples.shape[1:] != train.samples.shape[1:]:
            raise ValueError("datasets must share channel count and length")
        return dataclasses.replace(ds, samples=(ds.samples - mean) / std)

    return apply(train), [apply(o) for o in others]


def _apportion(counts: np.ndarray, fraction: float) -> np.ndarray:
    """Largest-remainder split of ``fraction * total`` across classes."""
    total = int(round(fraction * counts.sum()))
    exact = counts * fraction
    alloc = np.floor(exact).astype(np.int64)
    remainder = exact - alloc
    order = sorted(range(len(counts)), key=lambda c: (-remainder[c], c))
    for c in order:
        if alloc.sum() >= total:
            break
        if alloc[c] < counts[c] - 1:
            alloc[c] += 1
    return np.minimum(alloc, np.maximum(counts - 1, 0))


def split_train_val(
    train: TimeSeriesDataset, fraction: float = 0.1, seed: int = 0
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Stratified hold-out of ``fraction`` of ``train`` for validation."""
    if not 0 < fraction < 0.5:
        raise ValueError("fraction must lie in (0, 0.5)")
    counts = train.class_counts()
    small = [train.label_names[c] for c, n in enumerate(counts) if 0 < n < 2]
    if small:
        raise ClassTooSmall(f"classes with fewer than 2 samples: {small}")
    n_val = _apportion(counts, fraction)
    rng = np.random.default_rng(seed)
    val_idx, train_idx = [], []
    for c in range(train.num_classes):
        members = np.flatnonzero(train.labels == c)
        members = members[rng.permutation(len(members))]
        val_idx.append(members[: n_val[c]])
        train_idx.append(members[n_val[c]:])
    val_idx = np.sort(np.concatenate(val_idx))
    train_idx = np.sort(np.concatenate(train_idx))
    return train.subset(train_idx, "train"), train.subset(val_idx, "val")


def partition_silos(train: TimeSeriesDataset, n_clients: int, stratified: bool = True, seed: int = 0) -> SiloPartition:
    """Split ``train`` into ``n_clients`` disjoint silos of near-equal size.

    Stratified partitions deal each class round-robin, carrying the dealing
    position over from one class to the next, so every silo receives
    ``floor`` or ``ceil`` of ``count_c / n_clients`` members of class ``c``
    and silo sizes differ by at most one.
    """
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if n_clients > len(train):
        raise TooManyClients(f"{n_clients} clients for {len(train)} samples")
    rng = np.random.default_rng(seed)
    if n_clients == 1:
        return SiloPartition([train.subset(np.arange(len(train)))], stratified, seed)
    buckets: list[list[int]] = [[] for _ in range(n_clients)]
    if stratified:
        pos = 0
        for c in range(train.num_classes):
            members = np.flatnonzero(train.labels == c)
            for i in members[rng.permutation(len(members))]:
                buckets[pos % n_clients].append(int(i))
                pos += 1
    else:
        perm = rng.permutation(len(train))
        for k, chunk in enumerate(np.array_split(perm, n_clients)):
            buckets[k] = chunk.tolist()
    silos = [train.subset(np.sort(np.asarray(b, dtype=np.int64))) for b in buckets]
    return SiloPartition(silos, stratified, seed)


def concat_datasets(parts: Iterable[TimeSeriesDataset], split_tag: str = "train") -> TimeSeriesDataset:
    parts = list(parts)
    first = parts[0]
    return TimeSeriesDataset(
        samples=np.concatenate([p.samples for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        label_names=list(first.label_names),
        name=first.name,
        split_tag=split_tag,
        index=np.concatenate([p.index for p in parts]),
    )


@dataclass
class Splits:
    """Train / validation (/ test) partitions of one dataset."""

    train: TimeSeriesDataset
    val: TimeSeriesDataset
    test: TimeSeriesDataset | None = None
