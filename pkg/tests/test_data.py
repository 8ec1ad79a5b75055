"""Tests for dataset sources, file parsing and synthetic instances."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from dperm._data import (
    DatasetSource,
    NormalizationKind,
    SourceKind,
    binarize_labels,
    load_dataset,
    normalize_rows,
    synth_logistic,
    synth_quadratic,
)
from dperm._exceptions import DataFormatError, InvalidInputError


def write(tmp_path: Path, name: str, text: str) -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLibsvm:
    """Tests for LIBSVM parsing."""

    def test_sparse_line(self, tmp_path: Path) -> None:
        """'1 1:0.5 3:0.25' with three features gives label +1 and (0.5, 0, 0.25)."""
        path = write(tmp_path, "one.libsvm", "1 1:0.5 3:0.25\n")
        src = DatasetSource.libsvm_file(path, n_features=3).with_options(normalization=NormalizationKind.NONE)
        data = load_dataset(src)
        np.testing.assert_array_equal(data.features, [[0.5, 0.0, 0.25]])
        np.testing.assert_array_equal(data.labels, [1.0])

    def test_comments_blank_lines_and_qid(self, tmp_path: Path) -> None:
        """Comments, blank lines and qid tokens are skipped."""
        text = "# header\n\n-1 qid:3 2:1.0  # trailing\n+1 1:2.0\n"
        src = DatasetSource.libsvm_file(write(tmp_path, "c.libsvm", text))
        data = load_dataset(src.with_options(normalization="none"))
        np.testing.assert_array_equal(data.features, [[0.0, 1.0], [2.0, 0.0]])
        np.testing.assert_array_equal(data.labels, [-1.0, 1.0])

    def test_width_from_max_index(self, tmp_path: Path) -> None:
        """Without n_features the width is the largest index seen."""
        src = DatasetSource.libsvm_file(write(tmp_path, "w.libsvm", "1 5:1\n-1 2:1\n"))
        assert load_dataset(src).p == 5

    @pytest.mark.parametrize(
        ("line", "message"),
        [
            ("1 1:0.5 oops", "index:value"),
            ("1 0:0.5", "1-based"),
            ("x 1:0.5", "bad label"),
            ("1 a:b", "bad pair"),
        ],
    )
    def test_malformed_line_reports_line_number(self, tmp_path: Path, line: str, message: str) -> None:
        """A malformed line raises DataFormatError naming line 2."""
        path = write(tmp_path, "bad.libsvm", f"1 1:1\n{line}\n")
        with pytest.raises(DataFormatError, match=message) as info:
            load_dataset(DatasetSource.libsvm_file(path))
        assert info.value.line_number == 2
        assert ":2:" in str(info.value)

    def test_index_beyond_declared_width(self, tmp_path: Path) -> None:
        """An index above n_features is an error."""
        path = write(tmp_path, "wide.libsvm", "1 4:1\n")
        with pytest.raises(DataFormatError, match="exceeds"):
            load_dataset(DatasetSource.libsvm_file(path, n_features=3))

    def test_empty_file(self, tmp_path: Path) -> None:
        """A file with no samples is rejected."""
        with pytest.raises(InvalidInputError, match="empty"):
            load_dataset(DatasetSource.libsvm_file(write(tmp_path, "e.libsvm", "# nothing\n")))

    def test_missing_file(self, tmp_path: Path) -> None:
        """A missing path is rejected before parsing."""
        with pytest.raises(InvalidInputError, match="not found"):
            load_dataset(DatasetSource.libsvm_file(tmp_path / "absent.libsvm"))


class TestCsv:
    """Tests for CSV parsing."""

    def test_header_and_named_label(self, tmp_path: Path) -> None:
        """A header row is detected and the label column is found by name."""
        path = write(tmp_path, "d.csv", "f1,label,f2\n1,0,2\n3,1,4\n")
        src = DatasetSource.csv_file(path, label_column="label").with_options(normalization="none")
        data = load_dataset(src)
        np.testing.assert_array_equal(data.features, [[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(data.labels, [-1.0, 1.0])

    def test_last_column_default(self, tmp_path: Path) -> None:
        """Without a header the last column holds the label."""
        path = write(tmp_path, "d.csv", "3,4,1\n0,0,-1\n")
        data = load_dataset(DatasetSource.csv_file(path))
        np.testing.assert_allclose(data.features, [[0.6, 0.8], [0.0, 0.0]])
        np.testing.assert_array_equal(data.labels, [1.0, -1.0])

    def test_ragged_row(self, tmp_path: Path) -> None:
        """A short row names its line."""
        path = write(tmp_path, "r.csv", "a,b,y\n1,2,1\n1,2\n")
        with pytest.raises(DataFormatError) as info:
            load_dataset(DatasetSource.csv_file(path))
        assert info.value.line_number == 3

    def test_unknown_column_name(self, tmp_path: Path) -> None:
        """Naming a column the header lacks is an error."""
        path = write(tmp_path, "u.csv", "a,b\n1,2\n")
        with pytest.raises(InvalidInputError, match="no column"):
            load_dataset(DatasetSource.csv_file(path, label_column="y"))


class TestPreparation:
    """Tests for binarization, normalization and subsampling."""

    def test_binarize_keeps_signed_labels(self) -> None:
        """Labels already in {-1, +1} pass through."""
        np.testing.assert_array_equal(binarize_labels(np.array([1.0, -1.0])), [1.0, -1.0])

    def test_binarize_zero_one(self) -> None:
        """{0, 1} maps to {-1, +1}."""
        np.testing.assert_array_equal(binarize_labels(np.array([0.0, 1.0, 1.0])), [-1.0, 1.0, 1.0])

    def test_binarize_multiclass(self) -> None:
        """Multi-class labels go one-vs-rest against class 2 unless told otherwise."""
        labels = np.array([1.0, 2.0, 3.0, 7.0])
        np.testing.assert_array_equal(binarize_labels(labels), [-1.0, 1.0, -1.0, -1.0])
        np.testing.assert_array_equal(binarize_labels(labels, positive_class=7.0), [-1.0, -1.0, -1.0, 1.0])

    def test_row_normalization(self) -> None:
        """Rows get unit l2 norm and zero rows stay zero."""
        out = normalize_rows(np.array([[3.0, 4.0], [0.0, 0.0]]), NormalizationKind.ROW_L2_UNIT)
        np.testing.assert_allclose(out, [[0.6, 0.8], [0.0, 0.0]])

    def test_minmax_then_row(self) -> None:
        """Columns are scaled to [0, 1] before row normalization; constant columns become 0."""
        out = normalize_rows(np.array([[1.0, 5.0, 2.0], [3.0, 5.0, 4.0]]), "minmax_then_row_l2")
        np.testing.assert_allclose(out, [[0.0, 0.0, 0.0], [1.0 / np.sqrt(2), 0.0, 1.0 / np.sqrt(2)]])

    def test_subsampling(self, tmp_path: Path) -> None:
        """max_rows keeps a seeded subset in file order."""
        text = "".join(f"{1 if i % 2 else -1} 1:{i + 1}\n" for i in range(20))
        src = DatasetSource.libsvm_file(write(tmp_path, "s.libsvm", text)).with_options(
            max_rows=5, normalization="none", seed=3
        )
        first, second = load_dataset(src), load_dataset(src)
        assert first.n == 5
        np.testing.assert_array_equal(first.features, second.features)
        assert np.all(np.diff(first.features[:, 0]) > 0)


class TestDatasetSource:
    """Tests for DatasetSource construction and parsing."""

    def test_parse_synthetic_logistic(self) -> None:
        """synth:logistic strings carry n, p and seed."""
        src = DatasetSource.parse("synth:logistic:n=200,p=5,seed=4")
        assert (src.kind, src.n, src.p, src.seed) == (SourceKind.SYNTHETIC_LOGISTIC, 200, 5, 4)

    def test_parse_synthetic_quadratic(self) -> None:
        """synth:quadratic keeps rows unnormalized."""
        src = DatasetSource.parse("synth:quadratic:n=50,p=3,mu=0.1,L=2")
        assert src.kind is SourceKind.SYNTHETIC_QUADRATIC
        assert (src.mu, src.L) == (0.1, 2.0)
        assert src.normalization is NormalizationKind.NONE

    def test_parse_paths(self) -> None:
        """.csv paths are CSV, anything else LIBSVM."""
        assert DatasetSource.parse("data/x.csv").kind is SourceKind.CSV_FILE
        assert DatasetSource.parse("data/covtype.libsvm.binary").kind is SourceKind.LIBSVM_FILE

    @pytest.mark.parametrize(
        "text",
        ["synth:logistic:n=10", "synth:gaussian:n=10,p=2", "synth:logistic:n=ten,p=2", "synth:logistic:n=10,p=2,q=1"],
    )
    def test_parse_errors(self, text: str) -> None:
        """Missing keys, unknown kinds, bad numbers and extra keys are rejected."""
        with pytest.raises(InvalidInputError):
            DatasetSource.parse(text)

    def test_file_source_needs_path(self) -> None:
        """File sources must carry a path."""
        with pytest.raises(InvalidInputError):
            DatasetSource(SourceKind.CSV_FILE)


class TestSynthetic:
    """Tests for the synthetic generators."""

    def test_logistic_deterministic(self) -> None:
        """The same seed gives identical bytes."""
        a, b = synth_logistic(300, 6, seed=5), synth_logistic(300, 6, seed=5)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_logistic_rows_and_labels(self, logistic_data) -> None:
        """Rows have unit norm, labels are +-1 and neither class dominates."""
        np.testing.assert_allclose(logistic_data.row_norms(), 1.0)
        assert set(np.unique(logistic_data.labels)) == {-1.0, 1.0}
        assert 0.35 < float((logistic_data.labels > 0).mean()) < 0.65

    def test_quadratic_spectrum(self) -> None:
        """A^T A / n has extreme eigenvalues mu and L."""
        data = synth_quadratic(500, 6, 0.2, 3.0, seed=2)
        eigenvalues = np.linalg.eigvalsh(data.features.T @ data.features / data.n)
        assert eigenvalues[0] == pytest.approx(0.2, rel=1e-9)
        assert eigenvalues[-1] == pytest.approx(3.0, rel=1e-9)

    def test_quadratic_deterministic(self) -> None:
        """The same seed gives identical bytes."""
        a, b = synth_quadratic(40, 3, 0.5, 1.0, seed=9), synth_quadratic(40, 3, 0.5, 1.0, seed=9)
        assert a.features.tobytes() == b.features.tobytes()

    @pytest.mark.parametrize(
        ("n", "p", "mu", "L"),
        [(5, 10, 0.1, 1.0), (20, 3, 0.0, 1.0), (20, 3, 2.0, 1.0), (20, 1, 0.5, 1.0), (1, 1, 1.0, 1.0)],
    )
    def test_quadratic_rejects(self, n: int, p: int, mu: float, L: float) -> None:
        """Bad shapes and spectra are rejected."""
        with pytest.raises(InvalidInputError):
            synth_quadratic(n, p, mu, L, seed=0)

    def test_load_synthetic_source(self) -> None:
        """load_dataset builds synthetic instances from their sources."""
        data = load_dataset(DatasetSource.synthetic_logistic(100, 4, seed=1))
        assert (data.n, data.p) == (100, 4)
        quad = load_dataset(DatasetSource.synthetic_quadratic(30, 2, 1.0, 4.0, seed=1))
        eigenvalues = np.linalg.eigvalsh(quad.features.T @ quad.features / quad.n)
        assert eigenvalues[-1] == pytest.approx(4.0, rel=1e-9)
