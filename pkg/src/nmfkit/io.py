"""Dataset ingestion and result persistence.

Three on-disk matrix formats are understood:

* ``csv-dense``: one CSV row per feature, one column per instance;
* ``uci-bow``: bag-of-words text format: three header lines (document
  count D, vocabulary size W, number of triplets) followed by 1-indexed
  ``docID wordID count`` triplets. Words map to rows, documents to columns.
  An optional tf-idf transform reweights counts by ln(D / document
  frequency); terms present in every document get weight zero and are
  dropped from the sparse pattern.
* ``matrix-market``: coordinate real general, 1-indexed.

All loaders reject negative, NaN, and infinite values with a positioned
error, and sparse formats never materialize a dense buffer. Log and factor
writers emit plain CSV with 17 significant digits so values round-trip
exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataDomainError, ParseError
from .matrix import DenseMatrix, SparseMatrix
from .nmf import ConvergenceLog

FORMATS = ("csv-dense", "uci-bow", "matrix-market")


@dataclass
class DatasetSpec:
    path: str
    format: str
    tfidf: bool = False

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}; expected one of {FORMATS}")
        self.path = str(self.path)


def load(spec: DatasetSpec):
    """Load a dataset according to its spec; sparse formats yield
    SparseMatrix, csv-dense yields DenseMatrix."""
    if spec.format == "csv-dense":
        return _load_csv_dense(spec.path)
    if spec.format == "uci-bow":
        return _load_uci_bow(spec.path, tfidf=spec.tfidf)
    return _load_matrix_market(spec.path)


def _check_value(value, path, line_no):
    if math.isnan(value) or math.isinf(value):
        raise DataDomainError(f"{path}:{line_no}: non-finite value {value!r}")
    if value < 0:
        raise DataDomainError(f"{path}:{line_no}: negative value {value!r}")


def _load_csv_dense(path):
    rows = []
    width = None
    with open(path, encoding="utf-8", newline=None) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ParseError(path, line_no, f"expected {width} columns, got {len(fields)}")
            try:
                values = [float(f) for f in fields]
            except ValueError as err:
                raise ParseError(path, line_no, str(err)) from None
            for v in values:
                _check_value(v, path, line_no)
            rows.append(values)
    if not rows:
        raise ParseError(path, 1, "empty csv file")
    return DenseMatrix(np.array(rows))


def _read_header_int(fh, path, line_no, what):
    line = fh.readline()
    if not line:
        raise ParseError(path, line_no, f"missing header line ({what})")
    try:
        value = int(line.strip())
    except ValueError:
        raise ParseError(path, line_no, f"expected integer {what}, got {line.strip()!r}") from None
    if value < 0:
        raise ParseError(path, line_no, f"{what} must be >= 0")
    return value


def _load_uci_bow(path, tfidf=False):
    with open(path, encoding="utf-8", newline=None) as fh:
        n_docs = _read_header_int(fh, path, 1, "document count")
        n_words = _read_header_int(fh, path, 2, "vocabulary size")
        nnz = _read_header_int(fh, path, 3, "triplet count")
        doc = np.empty(nnz, dtype=np.int64)
        word = np.empty(nnz, dtype=np.int64)
        count = np.empty(nnz)
        k = 0
        line_no = 3
        for line_no, line in enumerate(fh, start=4):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ParseError(path, line_no, f"expected 'doc word count', got {line!r}")
            try:
                d, w, c = int(fields[0]), int(fields[1]), float(fields[2])
            except ValueError as err:
                raise ParseError(path, line_no, str(err)) from None
            if not 1 <= d <= n_docs:
                raise ParseError(path, line_no, f"document id {d} outside [1, {n_docs}]")
            if not 1 <= w <= n_words:
                raise ParseError(path, line_no, f"word id {w} outside [1, {n_words}]")
            _check_value(c, path, line_no)
            if k >= nnz:
                raise ParseError(path, line_no, f"more than {nnz} triplets")
            doc[k], word[k], count[k] = d - 1, w - 1, c
            k += 1
    if k < nnz:
        raise ParseError(path, line_no, f"expected {nnz} triplets, found {k}")
    keys = word * n_docs + doc
    if len(np.unique(keys)) != len(keys):
        warnings.warn(f"{path}: duplicate (doc, word) pairs were summed", stacklevel=2)
    if tfidf:
        df = np.zeros(n_words)
        np.add.at(df, np.unique(keys) // n_docs, 1.0)
        idf = np.log(n_docs / np.maximum(df, 1.0))
        count = count * idf[word]
    return SparseMatrix.from_triplets(n_words, n_docs, word, doc, count)


def _load_matrix_market(path):
    with open(path, encoding="utf-8", newline=None) as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise ParseError(path, 1, "missing %%MatrixMarket header")
        tokens = header.strip().split()
        if [t.lower() for t in tokens[1:]] != ["matrix", "coordinate", "real", "general"]:
            raise ParseError(path, 1, f"unsupported MatrixMarket flavor: {header.strip()!r}")
        line_no = 1
        line = ""
        for line in fh:
            line_no += 1
            if not line.startswith("%") and line.strip():
                break
        fields = line.split()
        if len(fields) != 3:
            raise ParseError(path, line_no, "expected 'rows cols nnz' size line")
        try:
            rows, cols, nnz = int(fields[0]), int(fields[1]), int(fields[2])
        except ValueError:
            raise ParseError(path, line_no, "size line must be three integers") from None
        i = np.empty(nnz, dtype=np.int64)
        j = np.empty(nnz, dtype=np.int64)
        v = np.empty(nnz)
        k = 0
        for line in fh:
            line_no += 1
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ParseError(path, line_no, f"expected 'i j value', got {line!r}")
            try:
                ei, ej, ev = int(fields[0]), int(fields[1]), float(fields[2])
            except ValueError as err:
                raise ParseError(path, line_no, str(err)) from None
            if not 1 <= ei <= rows or not 1 <= ej <= cols:
                raise ParseError(path, line_no, f"entry ({ei}, {ej}) outside {rows}x{cols}")
            _check_value(ev, path, line_no)
            if k >= nnz:
                raise ParseError(path, line_no, f"more than {nnz} entries")
            i[k], j[k], v[k] = ei - 1, ej - 1, ev
            k += 1
    if k < nnz:
        raise ParseError(path, line_no, f"expected {nnz} entries, found {k}")
    return SparseMatrix.from_triplets(rows, cols, i, j, v)


def write_matrix_market(mat, path):
    """Write a matrix in coordinate real general format (1-indexed)."""
    if isinstance(mat, DenseMatrix):
        mat = SparseMatrix.from_dense(mat)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{mat.rows} {mat.cols} {mat.nnz}\n")
        col_of = np.repeat(np.arange(mat.cols), np.diff(mat.indptr))
        for i, j, v in zip(mat.indices, col_of, mat.values):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def write_dense_csv(mat, path):
    """One CSV row per matrix row, 17 significant digits."""
    arr = mat.array if isinstance(mat, DenseMatrix) else np.asarray(mat)
    with open(path, "w", encoding="utf-8") as fh:
        for row in arr:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


LOG_HEADER = "iter,objective,seconds,inner_iters,k_bar"


def write_log(log: ConvergenceLog, path):
    """Convergence log as CSV, one row per outer iteration."""
    if len(log) == 0:
        raise ValueError("refusing to write an empty log")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LOG_HEADER + "\n")
        for k in range(len(log)):
            fh.write(
                f"{k + 1},{log.objective[k]:.17g},{log.seconds[k]:.17g},"
                f"{log.inner_iterations[k]},{log.k_bar[k]:.17g}\n"
            )


def read_log(path):
    """Parse a log written by write_log back into a ConvergenceLog."""
    log = ConvergenceLog()
    with open(path, encoding="utf-8", newline=None) as fh:
        header = fh.readline().strip()
        if header != LOG_HEADER:
            raise ParseError(path, 1, f"unexpected log header {header!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 5:
                raise ParseError(path, line_no, "expected 5 columns")
            log.objective.append(float(fields[1]))
            log.seconds.append(float(fields[2]))
            log.inner_iterations.append(int(fields[3]))
            log.k_bar.append(float(fields[4]))
    return log
