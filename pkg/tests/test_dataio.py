import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from catdag.dataio import (
    Dataset,
    SplitSpec,
    align,
    column_names,
    load_csv,
    pad_to_common_dim,
    save_csv,
    split,
    split_sizes,
    unpad,
)
from catdag.errors import (
    BinaryValueError,
    HeaderMismatchError,
    MissingValueError,
    ParseError,
    ShapeError,
)
from catdag.graph import NodeSpec, from_edges

from conftest import random_dag


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_unit_dims_spans(tmp_path, mediation_dag):
    # columns deliberately out of graph order
    path = write(tmp_path, "Y,L2,D,L1\n3,4,1,2\n30,40,10,20\n")
    ds = load_csv(path, mediation_dag)
    assert ds.spans == {"D": (0, 1), "L1": (1, 2), "Y": (2, 3), "L2": (3, 4)}
    np.testing.assert_array_equal(ds.values, [[1, 2, 3, 4], [10, 20, 30, 40]])
    np.testing.assert_array_equal(ds.column("Y"), [[3], [30]])
    assert ds.n_rows == len(ds) == 2


def test_multidim_header(tmp_path):
    dag = from_edges([NodeSpec("A", 3), NodeSpec("B")], [("A", "B")])
    assert column_names(dag) == ["A.0", "A.1", "A.2", "B"]
    ok = load_csv(write(tmp_path, "B,A.2,A.0,A.1\n9,3,1,2\n"), dag)
    np.testing.assert_array_equal(ok.values, [[1, 2, 3, 9]])
    assert ok.spans == {"A": (0, 3), "B": (3, 4)}
    with pytest.raises(HeaderMismatchError):
        load_csv(write(tmp_path, "A.0,A.1,B\n1,2,3\n"), dag)


@pytest.mark.parametrize("header", ["D,L1,Y", "D,L1,Y,L2,Q", "D,D,L1,Y,L2", "D,L1,Y,L2.0,L2"])
def test_header_errors(tmp_path, mediation_dag, header):
    n = len(header.split(","))
    path = write(tmp_path, header + "\n" + ",".join(["0"] * n) + "\n")
    with pytest.raises(HeaderMismatchError):
        load_csv(path, mediation_dag)


def test_empty_file(tmp_path, mediation_dag):
    with pytest.raises(HeaderMismatchError):
        load_csv(write(tmp_path, ""), mediation_dag)


def test_parse_errors_carry_position(tmp_path, mediation_dag):
    with pytest.raises(ParseError) as info:
        load_csv(write(tmp_path, "D,L1,Y,L2\n1,2,3,4\n1,x,3,4\n"), mediation_dag)
    assert (info.value.row, info.value.col) == (2, 1)
    assert "row 2" in str(info.value)
    with pytest.raises(ParseError):
        load_csv(write(tmp_path, "D,L1,Y,L2\n1,2,3\n"), mediation_dag)
    with pytest.raises(ParseError):
        load_csv(write(tmp_path, "D,L1,Y,L2\n1,2,3,inf\n"), mediation_dag)


@pytest.mark.parametrize("cell", ["", "NA", "nan", "?"])
def test_missing_values_rejected(tmp_path, mediation_dag, cell):
    with pytest.raises(MissingValueError) as info:
        load_csv(write(tmp_path, f"D,L1,Y,L2\n1,2,{cell},4\n"), mediation_dag)
    assert (info.value.row, info.value.col) == (1, 2)


def test_binary_column_rejects_half(tmp_path):
    dag = from_edges([NodeSpec("X"), NodeSpec("T", 1, "binary")], [("X", "T")])
    assert load_csv(write(tmp_path, "X,T\n0.5,1\n0.3,0\n"), dag).n_rows == 2
    with pytest.raises(MissingValueError) as info:
        load_csv(write(tmp_path, "T,X\n1,0.2\n0.5,0.1\n"), dag)
    assert isinstance(info.value, BinaryValueError)
    assert (info.value.row, info.value.col) == (2, 0)
    with pytest.raises(BinaryValueError):
        Dataset(np.array([[0.0, 2.0]]), dag).check_binary()


def test_dataset_shape_check(mediation_dag):
    with pytest.raises(ShapeError):
        Dataset(np.zeros((3, 3)), mediation_dag)
    with pytest.raises(ShapeError):
        Dataset(np.zeros(4), mediation_dag)


# -- splitting ----------------------------------------------------------------------

def test_split_sizes():
    assert split_sizes(100, (0.56, 0.24, 0.20)) == (56, 24, 20)
    assert split_sizes(7, (1.0, 0.0, 0.0)) == (7, 0, 0)
    assert split_sizes(10, (0.0, 0.0, 1.0)) == (0, 0, 10)
    with pytest.raises(ValueError):
        SplitSpec((0.5, 0.6, -0.1))
    with pytest.raises(ValueError):
        SplitSpec((0.5, 0.4))


def test_split_all_train(mediation_dag):
    ds = Dataset(np.arange(40.0).reshape(10, 4), mediation_dag)
    train, val, test = split(ds, SplitSpec((1, 0, 0), seed=3))
    np.testing.assert_array_equal(train.values, ds.values)
    assert len(val) == len(test) == 0


def test_split_partition_and_determinism(mediation_dag):
    ds = Dataset(np.repeat(np.arange(100.0)[:, None], 4, axis=1), mediation_dag)
    parts = split(ds, SplitSpec(seed=7))
    assert tuple(len(p) for p in parts) == (56, 24, 20)
    ids = [p.values[:, 0] for p in parts]
    for ix in ids:
        assert np.all(np.diff(ix) > 0)  # original order kept
    np.testing.assert_array_equal(np.sort(np.concatenate(ids)), np.arange(100.0))
    again = split(ds, SplitSpec(seed=7))
    for a, b in zip(parts, again):
        np.testing.assert_array_equal(a.values, b.values)
    other = split(ds, SplitSpec(seed=8))
    assert not np.array_equal(other[0].values, parts[0].values)


# -- padding ------------------------------------------------------------------------

def test_padding_equal_dims_unchanged(mediation_dag):
    ds = Dataset(np.random.default_rng(0).standard_normal((5, 4)), mediation_dag)
    padded, c = pad_to_common_dim(ds)
    assert c == 1
    np.testing.assert_array_equal(padded.values, ds.values)


def test_padding_sixteen_and_three():
    dag = from_edges([NodeSpec("big", 16), NodeSpec("small", 3)], [("big", "small")])
    x = np.random.default_rng(1).standard_normal((4, 19))
    padded, c = pad_to_common_dim(Dataset(x, dag))
    assert c == 16 and padded.values.shape == (4, 32)
    assert padded.spans == {"big": (0, 16), "small": (16, 32)}
    np.testing.assert_array_equal(padded.values[:, :16], x[:, :16])
    np.testing.assert_array_equal(padded.values[:, 16:19], x[:, 16:])
    assert not padded.values[:, 19:].any()
    np.testing.assert_array_equal(unpad(padded).values, x)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pad_round_trip_property(seed):
    rng = np.random.default_rng(seed)
    dag = random_dag(rng, max_dim=4)
    x = rng.standard_normal((3, dag.total_dim))
    padded, c = pad_to_common_dim(Dataset(x, dag))
    assert c == max(dag.dims)
    assert padded.values.shape == (3, len(dag) * c)
    np.testing.assert_array_equal(unpad(padded).values, x)


# -- round trip and alignment -----------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_csv_round_trip_is_bit_exact(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    dag = random_dag(rng, max_dim=3)
    x = rng.standard_normal((6, dag.total_dim)) * 10.0 ** rng.integers(-300, 300, size=(6, dag.total_dim))
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    save_csv(Dataset(x, dag), path)
    back = load_csv(path, dag)
    assert back.values.tobytes() == x.tobytes()


def test_align_reorders_by_name(mediation_dag):
    other = from_edges([NodeSpec("L2"), NodeSpec("Y"), NodeSpec("D"), NodeSpec("L1")], [])
    ds = Dataset(np.array([[4.0, 3.0, 1.0, 2.0]]), other)
    np.testing.assert_array_equal(align(ds, mediation_dag).values, [[1, 2, 3, 4]])
    with pytest.raises(HeaderMismatchError):
        align(ds, from_edges(["D", "L1", "Y", "Q"], []))
    wide = from_edges([NodeSpec("D", 2), NodeSpec("L1"), NodeSpec("Y"), NodeSpec("L2")], [])
    with pytest.raises(HeaderMismatchError):
        align(Dataset(np.zeros((1, 5)), wide), mediation_dag)
