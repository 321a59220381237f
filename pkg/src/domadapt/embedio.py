"""Embedding sets, trial lists and score files, plus their on-disk formats.

Two embedding formats are supported:

``tsv``
    A ``#EVEC v1 dim=D`` header followed by one record per line,
    ``id <TAB> label <TAB> domain <TAB> v1 ... vD``. A missing speaker label
    is written as ``-``. Values are printed with 17 significant digits so
    that every double survives the round trip.

``binary``
    Magic ``EVB1``, u32 record count, u32 dim, then per record three
    u16-length-prefixed UTF-8 strings (id, label, domain; an empty label
    means unlabeled) and ``dim`` little-endian doubles.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ParseError, ValidationError

TSV_MAGIC = "#EVEC"
TSV_VERSION = "v1"
BINARY_MAGIC = b"EVB1"
MISSING_LABEL = "-"
KEY_TOKENS = {"target": True, "nontarget": False}

_FORBIDDEN_CHARS = ("\t", "\n", "\r")
_MAX_STR_BYTES = 0xFFFF


def _check_token(value, what, *, allow_empty=False):
    if not isinstance(value, str):
        raise ValidationError(f"{what} must be a string, got {type(value).__name__}")
    if not value and not allow_empty:
        raise ValidationError(f"{what} must be non-empty")
    if any(c in value for c in _FORBIDDEN_CHARS):
        raise ValidationError(f"{what} {value!r} contains a tab or newline")
    if len(value.encode("utf-8")) > _MAX_STR_BYTES:
        raise ValidationError(f"{what} is longer than {_MAX_STR_BYTES} bytes")


def _format_float(x):
    return format(float(x), ".17g")


@dataclass(frozen=True)
class EmbeddingSet:
    """N labeled (or unlabeled) D-dimensional vectors from one domain.

    ``vectors`` is stored as a read-only float64 copy, so an instance can be
    shared freely once built.
    """

    ids: tuple
    vectors: np.ndarray
    labels: Optional[tuple] = None
    domain: str = ""

    def __post_init__(self):
        ids = tuple(self.ids)
        try:
            vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"vectors are not a real matrix: {exc}") from None
        if vectors.ndim != 2:
            raise ValidationError(f"vectors must be 2-D, got shape {vectors.shape}")
        n, d = vectors.shape
        if n < 1 or d < 1:
            raise ValidationError(f"need N >= 1 and D >= 1, got N={n}, D={d}")
        if len(ids) != n:
            raise ValidationError(f"{len(ids)} ids for {n} vectors")
        for i in ids:
            _check_token(i, "id")
        if len(set(ids)) != n:
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise ValidationError(f"duplicate id {dup!r}")
        labels = self.labels
        if labels is not None:
            labels = tuple(labels)
            if len(labels) != n:
                raise ValidationError(f"{len(labels)} labels for {n} vectors")
            for lab in labels:
                _check_token(lab, "label")
                if lab == MISSING_LABEL:
                    raise ValidationError(f"label {MISSING_LABEL!r} is reserved for missing labels")
        _check_token(self.domain, "domain", allow_empty=True)
        if not np.all(np.isfinite(vectors)):
            bad = int(np.argwhere(~np.isfinite(vectors))[0, 0])
            raise ValidationError(f"non-finite value in vector of {ids[bad]!r}")
        vectors.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "vectors", vectors)

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.n

    def replace_vectors(self, vectors, domain=None):
        """Return a copy carrying new vectors but the same ids and labels."""
        return EmbeddingSet(
            ids=self.ids,
            vectors=vectors,
            labels=self.labels,
            domain=self.domain if domain is None else domain,
        )

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.intp)
        labels = None if self.labels is None else [self.labels[i] for i in indices]
        return EmbeddingSet(
            ids=[self.ids[i] for i in indices],
            vectors=self.vectors[indices],
            labels=labels,
            domain=self.domain,
        )

    def index(self):
        """Map from utterance id to row number."""
        return {u: i for i, u in enumerate(self.ids)}

    def equals(self, other):
        """Exact equality, including bit patterns of the vectors."""
        return (
            self.ids == other.ids
            and self.labels == other.labels
            and self.domain == other.domain
            and self.vectors.shape == other.vectors.shape
            and self.vectors.tobytes() == other.vectors.tobytes()
        )


@dataclass(frozen=True)
class TrialList:
    """(enroll, test) pairs with optional ground truth (True = target)."""

    pairs: tuple
    keys: Optional[tuple] = None

    def __post_init__(self):
        pairs = tuple((str(e), str(t)) for e, t in self.pairs)
        if not pairs:
            raise ValidationError("trial list is empty")
        keys = self.keys
        if keys is not None:
            keys = tuple(bool(k) for k in keys)
            if len(keys) != len(pairs):
                raise ValidationError(f"{len(keys)} keys for {len(pairs)} trials")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "keys", keys)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class ScoreSet:
    pairs: tuple
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        pairs = tuple((str(e), str(t)) for e, t in self.pairs)
        scores = np.array(self.scores, dtype=np.float64, copy=True).reshape(-1)
        if len(pairs) != scores.shape[0]:
            raise ValidationError(f"{scores.shape[0]} scores for {len(pairs)} trials")
        if not np.all(np.isfinite(scores)):
            raise ValidationError("non-finite score")
        scores.flags.writeable = False
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return len(self.pairs)


# ---------------------------------------------------------------------------
# embeddings


def _check_format(fmt):
    if fmt not in ("tsv", "binary"):
        raise ValidationError(f"unknown embedding format {fmt!r} (expected 'tsv' or 'binary')")


def write_embeddings(emb: EmbeddingSet, path, format="binary"):
    """Write ``emb`` to ``path`` in the given format."""
    _check_format(format)
    path = Path(path)
    if format == "binary":
        data = _encode_binary(emb)
        with open(path, "wb") as f:
            f.write(data)
        return
    lines = [f"{TSV_MAGIC} {TSV_VERSION} dim={emb.dim}"]
    for i, uid in enumerate(emb.ids):
        label = MISSING_LABEL if emb.labels is None else emb.labels[i]
        values = "\t".join(_format_float(v) for v in emb.vectors[i])
        lines.append(f"{uid}\t{label}\t{emb.domain}\t{values}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_embeddings(path, format="binary") -> EmbeddingSet:
    """Read and validate an embedding file.

    Raises
    ------
    ParseError
        Malformed header, record or truncated file.
    ValidationError
        Well-formed file whose content breaks an EmbeddingSet invariant
        (duplicate id, wrong dimension, non-finite value).
    """
    _check_format(format)
    data = Path(path).read_bytes()
    if format == "binary":
        return _decode_binary(data)
    return _decode_tsv(data)


def _decode_tsv(data: bytes) -> EmbeddingSet:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8: {exc.reason}", offset=exc.start) from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0].split(" ")
    if len(header) != 3 or header[0] != TSV_MAGIC or header[1] != TSV_VERSION or not header[2].startswith("dim="):
        raise ParseError(f"expected header '{TSV_MAGIC} {TSV_VERSION} dim=D'", line=1)
    dim_text = header[2][4:]
    if not dim_text.isdigit() or not dim_text.isascii():
        raise ParseError(f"bad dim {dim_text!r} in header", line=1)
    dim = int(dim_text)
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    if len(lines) == 1:
        raise ValidationError("no records (an embedding set needs N >= 1)")

    ids, labels, rows = [], [], []
    domain = None
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) < 4:
            raise ParseError(f"expected id, label, domain and values, got {len(fields)} fields", line=lineno)
        if len(fields) - 3 != dim:
            raise ValidationError(f"line {lineno}: {len(fields) - 3} values, header says dim={dim}")
        uid, label, dom = fields[0], fields[1], fields[2]
        if domain is None:
            domain = dom
        elif dom != domain:
            raise ValidationError(f"line {lineno}: domain {dom!r} differs from {domain!r}")
        try:
            row = [float(v) for v in fields[3:]]
        except ValueError:
            raise ParseError("unparseable float value", line=lineno) from None
        ids.append(uid)
        labels.append(label)
        rows.append(row)
    return EmbeddingSet(ids=ids, vectors=np.array(rows), labels=_resolve_labels(labels, MISSING_LABEL), domain=domain)


def _resolve_labels(labels, missing):
    absent = [lab == missing for lab in labels]
    if all(absent):
        return None
    if any(absent):
        raise ValidationError("labels must be present for all records or for none")
    return labels


def _encode_binary(emb: EmbeddingSet) -> bytes:
    parts = [BINARY_MAGIC, struct.pack("<II", emb.n, emb.dim)]
    dom = emb.domain.encode("utf-8")
    vec = emb.vectors.astype("<f8", copy=False)
    for i, uid in enumerate(emb.ids):
        label = b"" if emb.labels is None else emb.labels[i].encode("utf-8")
        for s in (uid.encode("utf-8"), label, dom):
            parts.append(struct.pack("<H", len(s)))
            parts.append(s)
        parts.append(vec[i].tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if n > len(self.data) - self.pos:
            raise ParseError(f"truncated while reading {what}", offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def string(self, what):
        (length,) = struct.unpack("<H", self.take(2, f"{what} length"))
        start = self.pos
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"{what} is not valid UTF-8", offset=start) from None


def _decode_binary(data: bytes) -> EmbeddingSet:
    r = _Reader(data)
    if r.take(4, "magic") != BINARY_MAGIC:
        raise ParseError("bad magic, expected EVB1", offset=0)
    count, dim = struct.unpack("<II", r.take(8, "header"))
    if count < 1:
        raise ValidationError("no records (an embedding set needs N >= 1)")
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    # every record holds at least three length prefixes and dim doubles
    if count * (6 + 8 * dim) > len(data) - r.pos:
        raise ParseError(f"file too short for {count} records of dim {dim}", offset=r.pos)
    ids, labels, rows = [], [], np.empty((count, dim), dtype=np.float64)
    domain = None
    for k in range(count):
        ids.append(r.string("id"))
        labels.append(r.string("label"))
        dom = r.string("domain")
        if domain is None:
            domain = dom
        elif dom != domain:
            raise ValidationError(f"record {k}: domain {dom!r} differs from {domain!r}")
        rows[k] = np.frombuffer(r.take(8 * dim, "vector"), dtype="<f8")
    if r.pos != len(data):
        raise ParseError(f"{len(data) - r.pos} trailing bytes", offset=r.pos)
    return EmbeddingSet(ids=ids, vectors=rows, labels=_resolve_labels(labels, ""), domain=domain)


# ---------------------------------------------------------------------------
# trials and scores


def _read_text_lines(path):
    data = Path(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8: {exc.reason}", offset=exc.start) from None
    return [(n, line) for n, line in enumerate(text.split("\n"), start=1) if line.strip()]


def read_trials(path) -> TrialList:
    """Read ``enroll <TAB> test [<TAB> target|nontarget]`` lines."""
    pairs, keys = [], []
    has_keys = None
    for lineno, line in _read_text_lines(path):
        fields = line.rstrip("\r").split("\t")
        if len(fields) not in (2, 3) or not fields[0] or not fields[1]:
            raise ParseError("expected 'enroll<TAB>test[<TAB>key]'", line=lineno)
        keyed = len(fields) == 3
        if has_keys is None:
            has_keys = keyed
        elif keyed != has_keys:
            raise ParseError("key column present on some lines but not others", line=lineno)
        if keyed:
            if fields[2] not in KEY_TOKENS:
                raise ParseError(f"unknown key {fields[2]!r} (expected target or nontarget)", line=lineno)
            keys.append(KEY_TOKENS[fields[2]])
        pairs.append((fields[0], fields[1]))
    if not pairs:
        raise ParseError("empty trial list", line=1)
    return TrialList(pairs=pairs, keys=keys if has_keys else None)


def write_trials(trials: TrialList, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, (e, t) in enumerate(trials.pairs):
            if trials.keys is None:
                f.write(f"{e}\t{t}\n")
            else:
                f.write(f"{e}\t{t}\t{'target' if trials.keys[i] else 'nontarget'}\n")


def write_scores(scores: ScoreSet, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for (e, t), s in zip(scores.pairs, scores.scores):
            f.write(f"{e}\t{t}\t{_format_float(s)}\n")


def read_scores(path) -> ScoreSet:
    pairs, values = [], []
    for lineno, line in _read_text_lines(path):
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 3 or not fields[0] or not fields[1]:
            raise ParseError("expected 'enroll<TAB>test<TAB>score'", line=lineno)
        try:
            value = float(fields[2])
        except ValueError:
            raise ParseError(f"unparseable score {fields[2]!r}", line=lineno) from None
        if not math.isfinite(value):
            raise ValidationError(f"line {lineno}: non-finite score")
        pairs.append((fields[0], fields[1]))
        values.append(value)
    if not pairs:
        raise ParseError("empty score file", line=1)
    return ScoreSet(pairs=pairs, scores=values)


def infer_format(path, default="binary"):
    """Guess an embedding format from a file suffix (``.tsv``/``.txt`` -> tsv)."""
    suffix = Path(path).suffix.lower()
    if suffix in (".tsv", ".txt"):
        return "tsv"
    if suffix in (".evb", ".bin"):
        return "binary"
    return default


def concat(sets: Sequence[EmbeddingSet], domain=None) -> EmbeddingSet:
    """Stack several sets; labels are kept only if every set carries them."""
    labels = None
    if all(s.labels is not None for s in sets):
        labels = [lab for s in sets for lab in s.labels]
    return EmbeddingSet(
        ids=[u for s in sets for u in s.ids],
        vectors=np.vstack([s.vectors for s in sets]),
        labels=labels,
        domain=sets[0].domain if domain is None else domain,
    )
