import numpy as np
import pytest
import scipy.sparse as sp

from s2qn.dataio import (Dataset, denormalize, map_binary_labels, normalize_maxabs, read_libsvm, synth_conv_maps,
                         synth_curves_toy, synth_logistic, write_libsvm)
from s2qn.errors import IndexOrderError, ParseError
from s2qn.models import ConvLayerSpec


def write(tmp_path, text):
    p = tmp_path / "d.svm"
    p.write_text(text)
    return p


def test_read_basic(tmp_path):
    ds = read_libsvm(write(tmp_path, "# header\n+1 1:0.5 3:2\n\n-1 2:1.5  # trailing\n"))
    assert ds.N == 2 and ds.n == 3
    np.testing.assert_array_equal(ds.dense_features(), [[0.5, 0, 2], [0, 1.5, 0]])
    np.testing.assert_array_equal(ds.labels, [1, -1])
    assert sp.isspmatrix_csr(ds.features)


def test_zero_one_labels_mapped(tmp_path):
    ds = read_libsvm(write(tmp_path, "1 1:1\n0 1:2\n"))
    np.testing.assert_array_equal(ds.labels, [1, -1])


def test_ambiguous_labels():
    with pytest.raises(ParseError):
        map_binary_labels([0, 1, 2])


@pytest.mark.parametrize("text,line", [("+1 1:1\n+1 x:1\n", 2), ("+1 1:1\nfoo 1:1\n", 2), ("+1 0:1\n", 1),
                                       ("+1 1:nan\n", 1), ("+1 1\n", 1)])
def test_parse_errors_carry_line(tmp_path, text, line):
    with pytest.raises(ParseError) as exc:
        read_libsvm(write(tmp_path, text))
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}:")


def test_index_order(tmp_path):
    p = write(tmp_path, "+1 3:1 1:2\n")
    with pytest.raises(IndexOrderError):
        read_libsvm(p)
    ds = read_libsvm(p, sort_indices=True)
    np.testing.assert_array_equal(ds.dense_features(), [[2, 0, 1]])
    with pytest.raises(IndexOrderError):
        read_libsvm(write(tmp_path, "+1 2:1 2:2\n"), sort_indices=True)


def test_n_features(tmp_path):
    p = write(tmp_path, "+1 2:1\n")
    assert read_libsvm(p, n_features=5).n == 5
    with pytest.raises(ParseError):
        read_libsvm(p, n_features=1)


def test_roundtrip_is_exact(tmp_path):
    ds, _ = synth_logistic(7, 30, "graded", seed=4)
    X = ds.features * (np.random.default_rng(0).random(ds.features.shape) < 0.5)
    ds = Dataset(X, ds.labels)
    p = tmp_path / "rt.svm"
    write_libsvm(ds, p)
    back = read_libsvm(p, n_features=7)
    np.testing.assert_array_equal(back.dense_features(), X)
    np.testing.assert_array_equal(back.labels, ds.labels)


@pytest.mark.parametrize("sparse", [False, True])
def test_normalize_roundtrip(sparse):
    X = np.array([[2.0, 0.0, -1.0], [-4.0, 0.0, 0.5]])
    ds = Dataset(sp.csr_matrix(X) if sparse else X, np.array([1.0, -1.0]))
    n = normalize_maxabs(ds)
    np.testing.assert_allclose(np.max(np.abs(n.dense_features()), axis=0), [1, 0, 1])
    np.testing.assert_allclose(denormalize(n).dense_features(), X)


def test_synth_logistic_deterministic():
    a, ta = synth_logistic(5, 50, seed=3)
    b, tb = synth_logistic(5, 50, seed=3)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(ta, tb)
    c, _ = synth_logistic(5, 50, seed=4)
    assert not np.array_equal(a.features, c.features)


def test_whitened_profile_has_scaled_identity_gram():
    ds, _ = synth_logistic(10, 200, "whitened", seed=1, feature_scale=2.0)
    np.testing.assert_allclose(ds.features.T @ ds.features / 200, 4.0 * np.eye(10), atol=1e-10)


def test_graded_profile_condition():
    ds, _ = synth_logistic(4, 20000, "graded", seed=0, condition=100.0)
    ev = np.linalg.eigvalsh(ds.features.T @ ds.features / 20000)
    assert 60 < ev[-1] / ev[0] < 160


def test_synth_logistic_rejects_bad_profile():
    with pytest.raises(ValueError):
        synth_logistic(3, 10, "weird")


def test_curves_toy():
    ds = synth_curves_toy(seed=2, n_samples=5, size=8)
    assert ds.features.shape == (5, 64)
    assert ds.features.min() >= 0 and ds.features.max() <= 1
    np.testing.assert_array_equal(ds.features, ds.labels)
    with pytest.raises(ValueError):
        synth_curves_toy(n_samples=2001)


def test_conv_maps_targets_follow_planted_kernel():
    spec = ConvLayerSpec(2, 1, 1, 4, 4)
    a, y, planted = synth_conv_maps(spec, N=3, seed=0, noise=0.0)
    from s2qn.models import conv_forward_backward

    s, _, _ = conv_forward_backward(spec, planted, (a, np.zeros_like(y)))
    np.testing.assert_allclose(s, y)
