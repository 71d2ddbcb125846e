import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def image_folder(tmp_path):
    """Six small PNGs with distinct mean intensities, plus their manifest."""
    rng = np.random.default_rng(0)
    folder = tmp_path / "images"
    folder.mkdir()
    names = []
    for i in range(6):
        base = np.full((32, 32, 3), 30 + 35 * i, dtype=np.uint8)
        noise = rng.integers(0, 20, size=(32, 32, 3), dtype=np.uint8)
        Image.fromarray(base + noise).save(folder / f"img{i}.png")
        names.append(f"img{i}.png")
    manifest = tmp_path / "manifest.csv"
    lines = ["filename,label,group"]
    for i, name in enumerate(names):
        lines.append(f"{name},{i % 2},{i // 2}")
    manifest.write_text("\n".join(lines) + "\n")
    return folder, manifest, names
