import os

import numpy as np
import pytest
import scipy.io

from rzd_converter import (ConversionError, SourceArchive, VerificationError,
                           convert, verify_against_source)
from rzd_converter.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE
from rzd_converter.cli import main as cli_main

from revcd.data import load_dataset


def make_archive(tmp_dir, n_classes=10, n_seen=8, d_x=32, d_s=12,
                 per_class=4, seed=0, att_scale=5.0):
    """Write a benchmark-convention .mat pair (1-based indices, transposed
    matrices) and return a SourceArchive pointing at it."""
    rng = np.random.default_rng(seed)
    n = n_classes * per_class
    features = rng.standard_normal((n, d_x)).astype(np.float32)
    labels = np.repeat(np.arange(1, n_classes + 1), per_class)
    att = rng.uniform(-att_scale, att_scale, size=(n_classes, d_s))

    rows = np.arange(1, n + 1)
    seen_rows = rows[labels <= n_seen]
    unseen_rows = rows[labels > n_seen]
    # last image of each seen class held out as test_seen
    test_seen = seen_rows[per_class - 1::per_class]
    trainval = np.setdiff1d(seen_rows, test_seen)

    fpath = os.path.join(tmp_dir, "res101.mat")
    spath = os.path.join(tmp_dir, "att_splits.mat")
    scipy.io.savemat(fpath, {"features": features.T.astype(np.float64),
                             "labels": labels.reshape(-1, 1).astype(float)})
    scipy.io.savemat(spath, {"att": att.T,
                             "trainval_loc": trainval.reshape(-1, 1).astype(float),
                             "test_seen_loc": test_seen.reshape(-1, 1).astype(float),
                             "test_unseen_loc": unseen_rows.reshape(-1, 1).astype(float)})
    return SourceArchive(features_path=fpath, splits_path=spath), features


@pytest.fixture
def archive(tmp_path):
    src, features = make_archive(str(tmp_path))
    return src, features, str(tmp_path / "rzd")


class TestConvert:
    def test_engine_loads_converted_dataset(self, archive):
        src, _, out = archive
        convert(src, out, log=None)
        ds = load_dataset(out)
        assert ds.d_x == 32 and ds.d_s == 12 and ds.n == 40
        assert len(ds.seen_classes) == 8 and len(ds.unseen_classes) == 2

    def test_features_bit_exact_float32(self, archive):
        src, features, out = archive
        convert(src, out, log=None)
        raw = np.fromfile(os.path.join(out, "features.bin"),
                          dtype="<f4").reshape(40, 32)
        np.testing.assert_array_equal(raw, features)

    def test_indices_zero_based(self, archive):
        src, _, out = archive
        convert(src, out, log=None)
        labels = np.fromfile(os.path.join(out, "labels.bin"), dtype="<u4")
        assert labels.min() == 0 and labels.max() == 9
        train = np.fromfile(os.path.join(out, "train_seen_idx.bin"),
                            dtype="<u4")
        assert train.min() == 0  # first image of class 1 is row 1 in source

    def test_attributes_normalized_per_dimension(self, archive):
        src, _, out = archive
        convert(src, out, log=None)
        att = np.fromfile(os.path.join(out, "attributes.bin"),
                          dtype="<f4").reshape(10, 12)
        assert att.min() >= 0.0 and att.max() <= 1.0
        np.testing.assert_allclose(att.min(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(att.max(axis=0), 1.0, atol=1e-6)

    def test_no_normalize_passes_raw_values(self, archive, tmp_path):
        src, _, _ = archive
        out = str(tmp_path / "raw")
        convert(src, out, normalize=False, log=None)
        att = np.fromfile(os.path.join(out, "attributes.bin"),
                          dtype="<f4").reshape(10, 12)
        assert att.min() < 0  # raw attributes were sampled in [-5, 5]

    def test_constant_attribute_dimension_maps_to_half(self, tmp_path):
        src, _ = make_archive(str(tmp_path), seed=3)
        mat = scipy.io.loadmat(src.splits_path)
        att = np.asarray(mat["att"])
        att[0, :] = 7.7  # constant across classes
        mat["att"] = att
        scipy.io.savemat(src.splits_path, mat)
        out = str(tmp_path / "rzd")
        convert(src, out, log=None)
        stored = np.fromfile(os.path.join(out, "attributes.bin"),
                             dtype="<f4").reshape(10, 12)
        np.testing.assert_array_equal(stored[:, 0], 0.5)

    def test_seen_unseen_disjoint_in_manifest(self, archive):
        src, _, out = archive
        manifest = convert(src, out, log=None)
        assert not set(manifest["seen_classes"]) & set(
            manifest["unseen_classes"])

    def test_summary_printed(self, archive, capsys):
        src, _, out = archive
        convert(src, out)
        printed = capsys.readouterr().out
        assert "n=40" in printed and "d_x=32" in printed and "d_s=12" in printed

    def test_missing_split_key_rejected(self, archive):
        src, _, out = archive
        mat = scipy.io.loadmat(src.splits_path)
        del mat["test_unseen_loc"]
        scipy.io.savemat(src.splits_path, mat)
        with pytest.raises(ConversionError, match="test_unseen_loc"):
            convert(src, out, log=None)

    def test_index_out_of_range_rejected(self, archive):
        src, _, out = archive
        mat = scipy.io.loadmat(src.splits_path)
        loc = np.asarray(mat["test_unseen_loc"])
        loc[0, 0] = 41  # one past the last of 40 rows
        mat["test_unseen_loc"] = loc
        scipy.io.savemat(src.splits_path, mat)
        with pytest.raises(ConversionError, match="out of range"):
            convert(src, out, log=None)

    def test_overlapping_label_spaces_rejected(self, archive):
        src, _, out = archive
        mat = scipy.io.loadmat(src.splits_path)
        loc = np.asarray(mat["test_unseen_loc"])
        loc[0, 0] = 1  # row of a seen class
        mat["test_unseen_loc"] = loc
        scipy.io.savemat(src.splits_path, mat)
        with pytest.raises(ConversionError, match="overlap"):
            convert(src, out, log=None)

    def test_empty_unseen_split_rejected(self, archive):
        src, _, out = archive
        mat = scipy.io.loadmat(src.splits_path)
        mat["test_unseen_loc"] = np.zeros((0, 1))
        scipy.io.savemat(src.splits_path, mat)
        with pytest.raises(ConversionError, match="empty"):
            convert(src, out, log=None)

    def test_missing_source_file_rejected(self, tmp_path):
        src = SourceArchive(features_path=str(tmp_path / "nope.mat"),
                            splits_path=str(tmp_path / "nope2.mat"))
        with pytest.raises(ConversionError, match="not found"):
            convert(src, str(tmp_path / "rzd"), log=None)


class TestVerify:
    def test_fresh_conversion_passes(self, archive):
        src, _, out = archive
        convert(src, out, log=None)
        assert verify_against_source(out, src, log=None)

    def test_flipped_byte_names_coordinates(self, archive):
        src, _, out = archive
        convert(src, out, log=None)
        path = os.path.join(out, "features.bin")
        blob = bytearray(open(path, "rb").read())
        flip = (7 * 32 + 5) * 4  # row 7, column 5, first payload byte
        blob[flip] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        with pytest.raises(VerificationError, match="row 7, column 5"):
            verify_against_source(out, src, log=None)

    def test_tampered_split_detected(self, archive):
        src, _, out = archive
        convert(src, out, log=None)
        path = os.path.join(out, "test_unseen_idx.bin")
        idx = np.fromfile(path, dtype="<u4")
        idx[0] = idx[1]
        idx.tofile(path)
        with pytest.raises(VerificationError, match="test_unseen"):
            verify_against_source(out, src, log=None)


class TestCli:
    def test_convert_and_verify_exit_ok(self, archive, capsys):
        src, _, out = archive
        code = cli_main(["--features", src.features_path, "--splits",
                         src.splits_path, "--out", out, "--verify"])
        assert code == EXIT_OK
        assert "verify: pass" in capsys.readouterr().out
        assert load_dataset(out).n == 40

    def test_no_normalize_flag(self, archive):
        src, _, out = archive
        assert cli_main(["--features", src.features_path, "--splits",
                         src.splits_path, "--out", out,
                         "--no-normalize"]) == EXIT_OK
        att = np.fromfile(os.path.join(out, "attributes.bin"), dtype="<f4")
        assert att.min() < 0

    def test_missing_argument_exit_usage(self, capsys):
        assert cli_main(["--features", "x.mat"]) == EXIT_USAGE
        capsys.readouterr()

    def test_bad_source_exit_fail(self, tmp_path, capsys):
        code = cli_main(["--features", str(tmp_path / "a.mat"), "--splits",
                         str(tmp_path / "b.mat"),
                         "--out", str(tmp_path / "o")])
        assert code == EXIT_FAIL
        assert "error:" in capsys.readouterr().err
