import json
import os

import numpy as np
import pytest

from revcd.data import (CheckpointError, DatasetError, GzslDataset,
                        SyntheticSpec, generate_synthetic, load_checkpoint,
                        load_dataset, save_checkpoint, save_dataset)
from revcd.model import Denoiser
from revcd.optim import AdamState, adam_step
from revcd.rng import RngState

from test_model import small_config


@pytest.fixture
def dataset():
    return generate_synthetic(SyntheticSpec(per_class=10, seed=7))


class TestSynthetic:
    def test_shapes_and_counts(self, dataset):
        spec = SyntheticSpec(per_class=10, seed=7)
        n_classes = spec.n_seen + spec.n_unseen
        assert dataset.features.shape == (n_classes * 10, spec.d_x)
        assert dataset.attributes.shape == (n_classes, spec.d_s)
        counts = np.bincount(dataset.labels)
        assert np.all(counts == 10)

    def test_binary_attributes_with_hamming_separation(self, dataset):
        attrs = dataset.attributes
        assert set(np.unique(attrs)) <= {0.0, 1.0}
        min_dist = int(np.ceil(attrs.shape[1] / 3))
        n = attrs.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                assert np.sum(attrs[i] != attrs[j]) >= min_dist

    def test_split_ratios(self, dataset):
        assert len(dataset.train_seen) == 5 * 8
        assert len(dataset.test_seen) == 5 * 2
        assert len(dataset.test_unseen) == 3 * 10

    def test_unseen_rows_all_in_test(self, dataset):
        unseen = set(int(c) for c in dataset.unseen_classes)
        rows = np.where(np.isin(dataset.labels,
                                list(unseen)))[0]
        assert set(rows.tolist()) == set(dataset.test_unseen.tolist())

    def test_noiseless_limit_identical_rows(self):
        ds = generate_synthetic(SyntheticSpec(per_class=4, noise_sigma=0.0,
                                              seed=7))
        for c in range(8):
            rows = ds.features[ds.labels == c]
            assert np.all(rows == rows[0])

    def test_deterministic(self):
        a = generate_synthetic(SyntheticSpec(seed=7, per_class=5))
        b = generate_synthetic(SyntheticSpec(seed=7, per_class=5))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.attributes, b.attributes)

    def test_different_seed_differs(self):
        a = generate_synthetic(SyntheticSpec(seed=7, per_class=5))
        b = generate_synthetic(SyntheticSpec(seed=8, per_class=5))
        assert not np.array_equal(a.features, b.features)

    def test_infeasible_spec_rejected(self):
        with pytest.raises(DatasetError):
            generate_synthetic(SyntheticSpec(n_seen=0, per_class=4))


class TestValidation:
    def test_seen_unseen_overlap_rejected(self, dataset):
        dataset.unseen_classes = np.append(dataset.unseen_classes, 0)
        with pytest.raises(DatasetError, match="overlap"):
            dataset.validate()

    def test_unseen_label_in_train_rejected(self, dataset):
        bad = int(dataset.test_unseen[0])
        dataset.train_seen = np.append(dataset.train_seen, bad)
        with pytest.raises(DatasetError, match="train_seen"):
            dataset.validate()

    def test_split_overlap_rejected(self, dataset):
        dataset.test_seen = np.append(dataset.test_seen, dataset.train_seen[0])
        with pytest.raises(DatasetError, match="disjoint"):
            dataset.validate()

    def test_attributes_out_of_range_rejected(self, dataset):
        dataset.attributes = dataset.attributes * 2.0
        with pytest.raises(DatasetError, match=r"\[0, 1\]"):
            dataset.validate()


class TestDatasetRoundtrip:
    def test_save_load_bit_identical(self, dataset, tmp_path):
        out = str(tmp_path / "ds")
        save_dataset(dataset, out)
        back = load_dataset(out)
        np.testing.assert_array_equal(back.features, dataset.features)
        np.testing.assert_array_equal(back.labels, dataset.labels)
        np.testing.assert_array_equal(back.attributes, dataset.attributes)
        for split in ("train_seen", "test_seen", "test_unseen"):
            np.testing.assert_array_equal(getattr(back, split),
                                          getattr(dataset, split))
        np.testing.assert_array_equal(back.seen_classes, dataset.seen_classes)
        assert back.name == dataset.name

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(DatasetError, match="manifest"):
            load_dataset(str(tmp_path))

    def test_manifest_class_count_mismatch(self, dataset, tmp_path):
        out = str(tmp_path / "ds")
        save_dataset(dataset, out)
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        manifest["n_classes"] = 99
        json.dump(manifest, open(os.path.join(out, "manifest.json"), "w"))
        # expected count derives from the manifest, found count from the file
        with pytest.raises(DatasetError, match="expected 792 .* found 64"):
            load_dataset(out)

    def test_missing_binary_rejected(self, dataset, tmp_path):
        out = str(tmp_path / "ds")
        save_dataset(dataset, out)
        os.unlink(os.path.join(out, "features.bin"))
        with pytest.raises(DatasetError, match="features"):
            load_dataset(out)

    def test_truncated_binary_rejected(self, dataset, tmp_path):
        out = str(tmp_path / "ds")
        save_dataset(dataset, out)
        path = os.path.join(out, "features.bin")
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-8])
        with pytest.raises(DatasetError, match="expected"):
            load_dataset(out)

    def test_unknown_format_rejected(self, dataset, tmp_path):
        out = str(tmp_path / "ds")
        save_dataset(dataset, out)
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        manifest["version"] = 2
        json.dump(manifest, open(os.path.join(out, "manifest.json"), "w"))
        with pytest.raises(DatasetError, match="unsupported"):
            load_dataset(out)

    def test_payloads_little_endian(self, dataset, tmp_path):
        out = str(tmp_path / "ds")
        save_dataset(dataset, out)
        raw = np.fromfile(os.path.join(out, "features.bin"), dtype="<f4")
        np.testing.assert_array_equal(
            raw.reshape(dataset.features.shape), dataset.features)


def make_model(seed=3):
    return Denoiser(small_config(), rng=RngState(seed))


class TestCheckpoint:
    def test_roundtrip_forward_pass_bit_identical(self, tmp_path, rng64):
        model = make_model()
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model, step=17)
        back, opt, rng_state, step, echo = load_checkpoint(path)
        assert step == 17 and opt is None and rng_state is None

        x = rng64.standard_normal((3, 8)).astype(np.float32)
        s_t = rng64.standard_normal((3, 4)).astype(np.float32)
        t = np.array([1, 2, 3])
        np.testing.assert_array_equal(model.forward(s_t, t, x).data,
                                      back.forward(s_t, t, x).data)

    def test_roundtrip_with_optimizer_and_rng(self, tmp_path):
        model = make_model()
        opt = AdamState(lr=0.01)
        for p in model.params.values():
            p.grad = np.ones_like(p.data)
        adam_step(model.params, opt)
        rng = RngState(5)
        rng.normal((3,))
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model, opt, rng, step=1, config_echo={"k": 1})

        back, opt2, rng_state, step, echo = load_checkpoint(path)
        assert echo == {"k": 1}
        assert opt2.lr == 0.01 and opt2.step == 1
        for name in model.params:
            np.testing.assert_array_equal(opt2.m[name], opt.m[name])
            np.testing.assert_array_equal(opt2.v[name], opt.v[name])
        assert RngState.from_state(rng_state).state() == rng.state()

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, make_model())
        blob = bytearray(open(path, "rb").read())
        blob[:8] = b"NOTMAGIC"
        open(path, "wb").write(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, make_model())
        blob = bytearray(open(path, "rb").read())
        blob[8:12] = np.array(99, dtype="<u4").tobytes()
        open(path, "wb").write(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, make_model())
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-64])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_wrong_config_rejected(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, make_model())
        with pytest.raises(CheckpointError, match="config"):
            load_checkpoint(path, expected_config=small_config(d_s=6))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointError, match="no such"):
            load_checkpoint(str(tmp_path / "nope.ckpt"))
