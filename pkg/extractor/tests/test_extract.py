import importlib.util

import numpy as np
import pytest
from PIL import Image

from embextract import (
    ExtractionJob,
    ExtractorError,
    extract_features,
    read_emb1,
    read_manifest,
)
from embextract.backbones import PixelStatsBackbone, load_backbone


def test_manifest_parsing(image_folder):
    _, manifest, names = image_folder
    entries = read_manifest(manifest)
    assert [e[0] for e in entries] == names
    assert entries[0][1:] == (0, 0)


def test_manifest_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("file,cls\nx.png,0\n")
    with pytest.raises(ExtractorError):
        read_manifest(path)


def test_missing_images_are_named(image_folder, tmp_path):
    folder, manifest, _ = image_folder
    bad = tmp_path / "bad.csv"
    bad.write_text(
        "filename,label,group\nimg0.png,0,0\nghost1.png,1,0\nghost2.png,0,1\n"
    )
    job = ExtractionJob(
        backbone="pixelstats-v1", images_dir=folder, manifest=bad,
        output=tmp_path / "o.emb1",
    )
    with pytest.raises(ExtractorError) as err:
        extract_features(job)
    assert "ghost1.png" in str(err.value) and "ghost2.png" in str(err.value)


def test_unknown_backbone_rejected():
    with pytest.raises(ExtractorError):
        load_backbone("made-up-net")


def test_extract_rows_follow_manifest_order(image_folder, tmp_path):
    folder, manifest, names = image_folder
    out = tmp_path / "feats.emb1"
    extract_features(
        ExtractionJob(
            backbone="pixelstats-v1", images_dir=folder, manifest=manifest,
            output=out, batch_size=4, dataset="toy",
        )
    )
    features, labels, groups, meta = read_emb1(out)
    assert features.shape[0] == len(names)
    assert labels.tolist() == [0, 1, 0, 1, 0, 1]
    assert groups.tolist() == [0, 0, 1, 1, 2, 2]
    assert meta["backbone"] == "pixelstats-v1"
    assert meta["dataset"] == "toy"
    assert meta["pool"] == "avg"
    # row i must embed manifest image i, regardless of batching
    backbone = PixelStatsBackbone()
    for i, name in enumerate(names):
        with Image.open(folder / name) as img:
            expected = backbone.embed_batch([img])[0]
        assert np.array_equal(features[i], expected.astype(np.float32))


def test_extraction_is_deterministic(image_folder, tmp_path):
    folder, manifest, _ = image_folder
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.emb1"
        extract_features(
            ExtractionJob(
                backbone="pixelstats-v1", images_dir=folder, manifest=manifest,
                output=out,
            )
        )
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]


@pytest.mark.skipif(
    importlib.util.find_spec("torch") is None, reason="torch not installed"
)
def test_torchvision_backbone_extracts(image_folder, tmp_path):
    folder, manifest, names = image_folder
    out = tmp_path / "resnet.emb1"
    extract_features(
        ExtractionJob(
            backbone="resnet18", images_dir=folder, manifest=manifest,
            output=out, batch_size=3,
        )
    )
    features, labels, _, meta = read_emb1(out)
    assert features.shape == (len(names), 512)
    assert np.all(np.isfinite(features))
    assert int(meta["params"]) > 10_000_000  # resnet18 parameter count
