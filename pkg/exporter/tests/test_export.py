"""Exporter tests: the round-trip contract with the tuning toolkit.

The exporter writes files only; these tests then drive the installed
`messkit` package over the exported tree (read -> cache -> search ->
simulate) as the acceptance surface.
"""

import numpy as np
import pytest
import torch

import messkit as mk
from mess_exporter import (
    CheckpointMismatch,
    ExportJob,
    ToyMultiExitNet,
    UnexportableExitPoint,
    exit_dropout_loss,
    export,
    load_checkpoint,
    make_split,
    pfd_batch_loss,
)

EXITS = (1, 3, 6)
DATASET = 20
RESOLUTION = 24


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    out = tmp_path_factory.mktemp("export")
    job = ExportJob(out_dir=out / "fx", dataset_size=DATASET, exit_points=EXITS,
                    resolution=RESOLUTION, seed=7, train_steps=400,
                    save_checkpoint_to=out / "toy.ckpt")
    result = export(job)
    return job, result


class TestExportedTree:
    def test_file_counts(self, exported):
        _, result = exported
        preds = sorted(result.out_dir.glob("preds/*/*.mt"))
        labels = sorted(result.out_dir.glob("labels/*.mt"))
        assert len(preds) == DATASET * len(EXITS) == 60
        assert len(labels) == DATASET

    def test_primary_side_validation(self, exported):
        _, result = exported
        manifest = mk.load_manifest(result.manifest_path)
        assert manifest.exit_points == EXITS
        assert manifest.class_count == 3
        for img in manifest.images:
            gt = mk.read_labels(img.label_path)
            assert (gt.rows, gt.cols) == (RESOLUTION, RESOLUTION)
            for point in EXITS:
                pred = mk.read_tensor(img.prediction_path(point, 0))
                sums = pred.data.sum(axis=0, dtype=np.float64)
                assert np.abs(sums - 1.0).max() <= 1e-4

    def test_output_strides_recorded(self, exported):
        _, result = exported
        manifest = mk.load_manifest(result.manifest_path)
        assert manifest.output_stride(1) == 1
        assert manifest.output_stride(3) == 2
        assert manifest.output_stride(6) == 4

    def test_costs_load_and_final_path_dominates(self, exported):
        _, result = exported
        profile = mk.load_cost_profile(result.costs_path)
        final = profile.segment_cost(0, EXITS[-1]) + profile.head_cost(EXITS[-1], 0)
        for point in EXITS:
            early = profile.segment_cost(0, point) + profile.head_cost(point, 0)
            assert early <= final

    def test_reexport_from_checkpoint_matches(self, exported, tmp_path):
        job, result = exported
        again = export(ExportJob(out_dir=tmp_path / "fx2",
                                 model_source=str(job.save_checkpoint_to),
                                 dataset_size=DATASET, exit_points=EXITS,
                                 resolution=RESOLUTION, seed=7))
        first = mk.load_manifest(result.manifest_path)
        second = mk.load_manifest(again.manifest_path)
        for a, b in zip(first.images, second.images):
            for point in EXITS:
                pa = mk.read_tensor(a.prediction_path(point, 0))
                pb = mk.read_tensor(b.prediction_path(point, 0))
                assert np.abs(pa.data - pb.data).max() <= 1e-6


class TestModelGuards:
    def test_unexportable_exit_point(self):
        with pytest.raises(UnexportableExitPoint):
            ToyMultiExitNet((2, 9))

    def test_checkpoint_mismatch(self, exported):
        job, _ = exported
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(job.save_checkpoint_to, (2, 4, 6))


class TestLossCrossValidation:
    """The torch-side objectives agree with the toolkit's evaluators on exports."""

    def _image_predictions(self, exported, index):
        _, result = exported
        manifest = mk.load_manifest(result.manifest_path)
        img = manifest.images[index]
        preds = [mk.read_tensor(img.prediction_path(p, 0)) for p in EXITS]
        gt = mk.read_labels(img.label_path)
        return preds, gt

    def _torch_logits(self, exported, index):
        _, result = exported
        images, labels = make_split(7 + 7919, DATASET, RESOLUTION)
        with torch.no_grad():
            logits = result.model(images[index:index + 1])
        return logits, labels[index:index + 1]

    def test_exit_dropout_matches_pretrain_loss(self, exported):
        preds, gt = self._image_predictions(exported, 0)
        logits, labels = self._torch_logits(exported, 0)
        for j in (1, 2, 3):
            torch_value = float(exit_dropout_loss(logits, labels, j))
            report = mk.pretrain_loss(preds, gt, j)
            assert report.total == pytest.approx(torch_value, abs=5e-4)

    def test_pfd_matches_pfd_loss(self, exported):
        preds, gt = self._image_predictions(exported, 1)
        logits, labels = self._torch_logits(exported, 1)
        torch_value = float(pfd_batch_loss(logits, labels, alpha=0.5))
        report = mk.pfd_loss(preds, gt, alpha=0.5)
        assert report.total == pytest.approx(torch_value, abs=5e-4)


def test_criterion_8_full_pipeline(exported):
    """Export feeds the cache-build -> search -> simulate pipeline unchanged."""
    _, result = exported
    manifest = mk.load_manifest(result.manifest_path)
    profile = mk.load_cost_profile(result.costs_path)
    cache = mk.build_calibration_cache(manifest, th_pix_grid=(0.5, 0.7, 0.9))

    mious = [cache.dataset_miou(point, 0) for point in EXITS]
    assert all(a <= b for a, b in zip(mious, mious[1:])), mious

    final_miou = mious[-1]
    limits = mk.SearchLimits(th_img_grid=tuple(round(0.05 * i, 2) for i in range(21)))
    search_result = mk.search(mk.SearchObjective("min_cost", final_miou - 0.01),
                              cache, profile, "input_dependent", limits)
    assert search_result.feasible

    report = mk.simulate(mk.instance_from_result(search_result), manifest, profile)
    assert report.miou == search_result.accuracy
    assert report.expected_workload == search_result.cost
    print(f"[criterion 8] exporter round-trip: per-exit mIoU "
          f"{[round(v, 4) for v in mious]} non-decreasing; pipeline cost "
          f"{report.expected_workload:.5f} vs final "
          f"{profile.segment_cost(0, EXITS[-1]) + profile.head_cost(EXITS[-1], 0):.5f}: PASS")
