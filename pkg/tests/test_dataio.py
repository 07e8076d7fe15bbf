import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmklnet.dataio import (
    Dataset,
    KernelFileHeader,
    LabeledExample,
    format_libsvm_line,
    load_dataset,
    parse_libsvm_line,
    read_kernel_file,
    read_kernel_header,
    remap_labels,
    subsample,
    write_dataset,
    write_kernel_file,
)
from lmklnet.errors import FormatError, ParseError, SizeError


class TestParseLine:
    def test_basic(self):
        ex = parse_libsvm_line("1 1:0.5 3:-2")
        assert ex.label == 1
        # stored 0-based
        assert ex.features == [(0, 0.5), (2, -2.0)]

    def test_empty_feature_vector(self):
        ex = parse_libsvm_line("-1 ")
        assert ex.label == -1
        assert ex.features == []

    def test_non_increasing_indices(self):
        with pytest.raises(FormatError):
            parse_libsvm_line("2 4:1 2:1")

    def test_duplicate_index_rejected(self):
        with pytest.raises(FormatError):
            parse_libsvm_line("2 4:1 4:1")

    def test_comment_ignored(self):
        ex = parse_libsvm_line("+1 2:3.5  # a note 9:9")
        assert ex.label == 1
        assert ex.features == [(1, 3.5)]

    @pytest.mark.parametrize(
        "line, column",
        [("x 1:2", 1), ("1 1:2 3", 7), ("1 a:2", 3), ("1 1:zz", 3), ("1 0:1", 3)],
    )
    def test_malformed_reports_column(self, line, column):
        with pytest.raises(ParseError) as info:
            parse_libsvm_line(line, lineno=7)
        assert info.value.column == column
        assert info.value.line == 7
        assert "line 7" in str(info.value)

    def test_integral_float_label(self):
        assert parse_libsvm_line("2.0 1:1").label == 2


@st.composite
def examples(draw):
    label = draw(st.integers(-1000, 1000))
    idx = sorted(draw(st.sets(st.integers(0, 10_000), max_size=20)))
    vals = draw(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=len(idx), max_size=len(idx)))
    return LabeledExample(label, np.array(idx, dtype=np.int64), np.array(vals))


@settings(max_examples=200, deadline=None)
@given(examples())
def test_format_parse_roundtrip(ex):
    line = format_libsvm_line(ex)
    back = parse_libsvm_line(line)
    assert back == ex
    assert format_libsvm_line(back) == line


class TestRemapLabels:
    def test_binary(self):
        mapping, inverse = remap_labels([1, -1, 1])
        assert mapping == {-1: 0, 1: 1}
        assert inverse == {0: -1, 1: 1}

    def test_sorted_order(self):
        mapping, _ = remap_labels([3, 1, 7])
        assert mapping == {1: 0, 3: 1, 7: 2}

    def test_single_class(self):
        with pytest.raises(FormatError):
            remap_labels([5])


class TestLoadDataset:
    def test_binary_file(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("-1 1:1\n+1 2:1\n-1 1:0.5 3:2\n")
        ds = load_dataset(p)
        assert len(ds) == 3
        assert ds.num_classes == 2
        assert ds.num_features == 3
        assert ds.labels.tolist() == [0, 1, 0]

    def test_multiclass_remapped(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("3 1:1\n1 1:2\n2 1:3\n")
        ds = load_dataset(p)
        assert ds.num_classes == 3
        assert ds.labels.tolist() == [2, 0, 1]

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.svm"
        p.write_text("")
        with pytest.raises(FormatError, match="empty dataset"):
            load_dataset(p)

    def test_parse_error_carries_line_number(self, tmp_path):
        p = tmp_path / "bad.svm"
        p.write_text("1 1:1\n-1 1:1\n1 1:oops\n")
        with pytest.raises(ParseError) as info:
            load_dataset(p)
        assert info.value.line == 3

    def test_label_map_alignment(self, tmp_path):
        a = tmp_path / "a.svm"
        b = tmp_path / "b.svm"
        a.write_text("1 1:1\n5 1:2\n")
        b.write_text("5 1:1\n")
        train = load_dataset(a)
        test = load_dataset(b, label_map=train.label_map)
        assert test.labels.tolist() == [1]
        b.write_text("9 1:1\n")
        with pytest.raises(FormatError):
            load_dataset(b, label_map=train.label_map)

    def test_write_roundtrip(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("-1 1:0.25 4:1e-3\n1 2:7\n")
        ds = load_dataset(p)
        q = tmp_path / "e.svm"
        write_dataset(ds, q)
        again = load_dataset(q)
        assert again.examples == ds.examples
        assert again.label_map == ds.label_map


def _toy_dataset(n, seed=0, classes=2):
    rng = np.random.default_rng(seed)
    exs = [LabeledExample(int(rng.integers(classes)), np.array([0]), np.array([float(i)])) for i in range(n)]
    return Dataset(exs, 1, {k: k for k in range(classes)})


class TestSubsample:
    def test_under_cap_unchanged(self):
        ds = _toy_dataset(50)
        assert subsample(ds, 100, seed=0) is ds

    def test_over_cap_exact_size(self):
        ds = _toy_dataset(30000)
        sub = subsample(ds, 20000, seed=3)
        assert len(sub) == 20000
        ids = [ex.values[0] for ex in sub.examples]
        assert len(set(ids)) == 20000

    def test_deterministic(self):
        ds = _toy_dataset(500)
        a = subsample(ds, 100, seed=9)
        b = subsample(ds, 100, seed=9)
        assert a.examples == b.examples
        assert subsample(ds, 100, seed=10).examples != a.examples

    def test_strict_subset(self):
        ds = _toy_dataset(300)
        sub = subsample(ds, 120, seed=1)
        orig = {float(ex.values[0]) for ex in ds.examples}
        assert {float(ex.values[0]) for ex in sub.examples} < orig

    def test_label_distribution_close(self):
        ds = _toy_dataset(20000, seed=2, classes=4)
        sub = subsample(ds, 5000, seed=4)
        p = np.bincount(ds.labels, minlength=4) / len(ds)
        q = np.bincount(sub.labels, minlength=4) / len(sub)
        # 5 binomial standard errors
        assert np.all(np.abs(p - q) <= 5 * np.sqrt(p * (1 - p) / len(sub)))

    def test_bad_cap(self):
        with pytest.raises(ValueError):
            subsample(_toy_dataset(5), 0, seed=0)


class TestKernelFile:
    @pytest.mark.parametrize("dtype, np_dtype", [("f64", np.float64), ("f32", np.float32)])
    def test_roundtrip_bit_exact(self, tmp_path, rng, dtype, np_dtype):
        values = rng.random((2, 4, 4)).astype(np_dtype)
        header = KernelFileHeader(4, 4, 2, dtype, (0.5, 1.5))
        path = tmp_path / "k.kern"
        write_kernel_file(header, values, path)
        h2, v2 = read_kernel_file(path)
        assert h2 == header
        assert v2.dtype == np.dtype(np_dtype).newbyteorder("<")
        assert v2.tobytes() == values.tobytes()

    def test_zero_rows_rejected(self, tmp_path):
        with pytest.raises(FormatError):
            write_kernel_file(KernelFileHeader(0, 4, 1, "f64", (1.0,)), np.zeros(0), tmp_path / "k")

    def test_truncated(self, tmp_path, rng):
        path = tmp_path / "k.kern"
        write_kernel_file(KernelFileHeader(3, 3, 1, "f64", (1.0,)), rng.random(9), path)
        data = path.read_bytes()
        path.write_bytes(data[:-1])
        with pytest.raises(SizeError):
            read_kernel_file(path)
        with pytest.raises(SizeError):
            read_kernel_header(path)

    def test_bad_magic(self, tmp_path, rng):
        path = tmp_path / "k.kern"
        write_kernel_file(KernelFileHeader(2, 2, 1, "f64", (1.0,)), rng.random(4), path)
        data = bytearray(path.read_bytes())
        data[0:8] = b"NOTAKERN"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            read_kernel_file(path)

    def test_bad_version(self, tmp_path, rng):
        path = tmp_path / "k.kern"
        write_kernel_file(KernelFileHeader(2, 2, 1, "f64", (1.0,)), rng.random(4), path)
        data = bytearray(path.read_bytes())
        data[8] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            read_kernel_file(path)

    def test_bandwidths_must_increase(self, tmp_path):
        with pytest.raises(FormatError):
            write_kernel_file(KernelFileHeader(1, 1, 2, "f64", (2.0, 1.0)), np.ones(2), tmp_path / "k")

    def test_payload_size_mismatch(self, tmp_path):
        with pytest.raises(SizeError):
            write_kernel_file(KernelFileHeader(2, 2, 1, "f64", (1.0,)), np.ones(5), tmp_path / "k")

    def test_header_layout(self, tmp_path):
        path = tmp_path / "k.kern"
        write_kernel_file(KernelFileHeader(2, 3, 1, "f32", (0.25,)), np.arange(6, dtype=np.float32), path)
        data = path.read_bytes()
        assert data[:8] == b"LMKLKERN"
        assert int.from_bytes(data[8:12], "little") == 1
        assert int.from_bytes(data[12:20], "little") == 2
        assert int.from_bytes(data[20:28], "little") == 3
        assert int.from_bytes(data[28:36], "little") == 1
        assert data[36] == 0
        assert np.frombuffer(data[37:45], "<f8")[0] == 0.25
        assert len(data) == 45 + 6 * 4
