import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import messkit as mk
from messkit import errors
from conftest import random_labels, random_softmax


def _header(dtype_code, dims):
    return struct.pack("<4sBBB", b"MESS", 1, dtype_code, len(dims)) \
        + struct.pack(f"<{len(dims)}I", *dims)


class TestTensorFiles:
    def test_round_trip_bit_identical(self, rng, tmp_path):
        t = random_softmax(rng, 4, 5, 7)
        path = tmp_path / "t.mt"
        mk.write_tensor(t, path)
        back = mk.read_tensor(path)
        assert back.data.dtype == np.float32
        assert back.data.tobytes() == t.data.tobytes()
        assert back == t

    def test_direct_decode(self, tmp_path):
        path = tmp_path / "t.mt"
        payload = struct.pack("<2f", 0.25, 0.75)
        path.write_bytes(_header(0, (2, 1, 1)) + payload)
        t = mk.read_tensor(path)
        assert t.data[:, 0, 0].tolist() == [0.25, 0.75]

    def test_payload_size_mismatch(self, tmp_path):
        path = tmp_path / "t.mt"
        path.write_bytes(_header(0, (2, 1, 1)) + struct.pack("<f", 1.0))
        with pytest.raises(errors.DimMismatch):
            mk.read_tensor(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(errors.MissingFile):
            mk.read_tensor(tmp_path / "absent.mt")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.mt"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(errors.BadMagic):
            mk.read_tensor(path)

    def test_non_finite_payload(self, tmp_path):
        path = tmp_path / "t.mt"
        path.write_bytes(_header(0, (2, 1, 1)) + struct.pack("<2f", math.nan, 1.0))
        with pytest.raises(errors.NonFiniteValue):
            mk.read_tensor(path)

    def test_rejects_unnormalised(self, tmp_path):
        path = tmp_path / "t.mt"
        path.write_bytes(_header(0, (2, 1, 1)) + struct.pack("<2f", 0.6, 0.6))
        with pytest.raises(errors.InvalidDistribution):
            mk.read_tensor(path)

    def test_rejects_out_of_range(self):
        with pytest.raises(errors.InvalidDistribution):
            mk.PredictionTensor(np.array([[[1.5]], [[-0.5]]], dtype=np.float32))

    def test_label_round_trip(self, rng, tmp_path):
        labels = random_labels(rng, 6, 4, 3, ignore_fraction=0.2)
        path = tmp_path / "l.mt"
        mk.write_labels(labels, path)
        assert mk.read_labels(path) == labels

    def test_kind_confusion_rejected(self, rng, tmp_path):
        labels = random_labels(rng, 3, 2, 2)
        mk.write_labels(labels, tmp_path / "l.mt")
        with pytest.raises(errors.DimMismatch):
            mk.read_tensor(tmp_path / "l.mt")
        mk.write_tensor(random_softmax(rng, 2, 2, 2), tmp_path / "t.mt")
        with pytest.raises(errors.DimMismatch):
            mk.read_labels(tmp_path / "t.mt")

    @settings(max_examples=40, deadline=None)
    @given(m=st.integers(1, 6), rows=st.integers(1, 8), cols=st.integers(1, 8),
           seed=st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, tmp_path_factory, m, rows, cols, seed):
        g = np.random.default_rng(seed)
        t = random_softmax(g, m, rows, cols)
        path = tmp_path_factory.mktemp("mt") / "t.mt"
        mk.write_tensor(t, path)
        assert mk.read_tensor(path) == t


def _write_fixture_manifest(tmp_path, rng, n_images=2, exits=(2, 4, 6),
                            drop_file=None, short_image=None, arch_form=False):
    m = 3
    images = []
    for i in range(n_images):
        image_id = f"img_{i}"
        labels = random_labels(rng, m, 4, 4)
        mk.write_labels(labels, tmp_path / f"{image_id}_gt.mt")
        preds = {}
        for point in exits:
            if short_image == i and point == exits[-1]:
                continue
            if arch_form:
                entry = {}
                for arch in (0, 5):
                    rel = f"{image_id}_e{point}_a{arch}.mt"
                    mk.write_tensor(random_softmax(rng, m, 4, 4), tmp_path / rel)
                    entry[str(arch)] = rel
                preds[str(point)] = entry
            else:
                rel = f"{image_id}_e{point}.mt"
                if drop_file != (i, point):
                    mk.write_tensor(random_softmax(rng, m, 4, 4), tmp_path / rel)
                preds[str(point)] = rel
        images.append({
            "image_id": image_id,
            "label": f"{image_id}_gt.mt",
            "predictions": preds,
            "output_stride": {str(p): 2 for p in exits if str(p) in preds},
        })
    path = tmp_path / "manifest.json"
    mk.save_manifest({"class_count": m, "background_class": 0, "images": images}, path)
    return path


class TestManifest:
    def test_load_ok(self, rng, tmp_path):
        path = _write_fixture_manifest(tmp_path, rng)
        man = mk.load_manifest(path)
        assert len(man.images) == 2
        assert man.exit_points == (2, 4, 6)
        assert man.class_count == 3
        assert man.output_stride(4) == 2

    def test_missing_referenced_file(self, rng, tmp_path):
        path = _write_fixture_manifest(tmp_path, rng, drop_file=(1, 4))
        with pytest.raises(errors.MissingReferencedFile) as exc:
            mk.load_manifest(path)
        assert any("img_1_e4.mt" in p for p in exc.value.paths)

    def test_inconsistent_exit_set(self, rng, tmp_path):
        path = _write_fixture_manifest(tmp_path, rng, short_image=1)
        with pytest.raises(errors.InconsistentExitSet):
            mk.load_manifest(path)

    def test_parse_error(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(errors.ParseError):
            mk.load_manifest(path)
        path.write_text(json.dumps({"images": []}))
        with pytest.raises(errors.ParseError):
            mk.load_manifest(path)

    def test_arch_form(self, rng, tmp_path):
        path = _write_fixture_manifest(tmp_path, rng, arch_form=True)
        man = mk.load_manifest(path)
        assert man.arch_ids(2) == (0, 5)
        p = man.images[0].prediction_path(2, 5)
        assert p.name == "img_0_e2_a5.mt"

    def test_shared_arch_serves_any_id(self, rng, tmp_path):
        path = _write_fixture_manifest(tmp_path, rng)
        man = mk.load_manifest(path)
        assert man.images[0].prediction_path(2, 0) == man.images[0].prediction_path(2, 9)


class TestCostProfile:
    def test_segment_examples(self):
        p = mk.CostProfile((10.0, 20.0, 30.0))
        assert p.segment_cost(0, 2) == 30.0
        assert p.segment_cost(2, 3) == 30.0

    def test_non_positive_cost(self):
        with pytest.raises(errors.NonPositiveCost):
            mk.CostProfile((10.0, -1.0))

    def test_round_trip(self, tmp_path):
        profile = mk.CostProfile(
            (1.5, 2.5),
            (0.7, 0.9),
            {2: {0: mk.HeadCost(0.4, 0.2), 3: mk.HeadCost(0.5)}},
        )
        path = tmp_path / "costs.json"
        mk.save_cost_profile(profile, path)
        back = mk.load_cost_profile(path)
        assert back == profile

    def test_head_cost_lookup(self):
        profile = mk.CostProfile((1.0, 1.0), None, {1: {0: mk.HeadCost(0.4)}})
        assert profile.head_cost(1, 0) == 0.4
        with pytest.raises(KeyError):
            profile.head_cost(1, 7)
        with pytest.raises(ValueError):
            profile.head_cost(1, 0, "latency")

    def test_latency_all_or_none(self, tmp_path):
        doc = {"blocks": [{"workload": 1.0, "latency": 0.5}, {"workload": 2.0}]}
        path = tmp_path / "costs.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(errors.ParseError):
            mk.load_cost_profile(path)

    @settings(max_examples=60, deadline=None)
    @given(
        blocks=st.lists(st.floats(0.01, 1e4), min_size=1, max_size=8),
        cuts=st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(0, 8)),
    )
    def test_segment_additivity(self, blocks, cuts):
        profile = mk.CostProfile(tuple(blocks))
        i, j, k = sorted(min(c, len(blocks)) for c in cuts)
        lhs = profile.segment_cost(i, j) + profile.segment_cost(j, k)
        rhs = profile.segment_cost(i, k)
        assert math.isclose(lhs, rhs, rel_tol=1e-12, abs_tol=1e-12)
