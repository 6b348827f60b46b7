"""Acceptance checks for the extraction tool, one PASS/FAIL line each."""

import json
import subprocess
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from lance_extract.cli import main


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS")


def _toy_folder(root: Path):
    colors = {"photo": {"apple": (200, 30, 30), "pear": (100, 180, 40)},
              "sketch": {"apple": (230, 230, 230), "pear": (180, 180, 180)}}
    for domain, classes in colors.items():
        for cls, base in classes.items():
            for i in range(3 if domain == "photo" else 2):
                path = root / domain / cls / f"{i}.png"
                path.parent.mkdir(parents=True, exist_ok=True)
                shade = tuple(min(255, c + 9 * i) for c in base)
                Image.new("RGB", (16, 16), shade).save(path)


class TestExtractionIntegration:
    def test_toy_folder_feeds_train_and_eval(self, tmp_path):
        with criterion("extraction-integration (10 images, 2x2 domains/classes, "
                       "5 concepts, 3 descriptors -> train+eval exit 0, "
                       "unit rows within 1e-5)"):
            images = tmp_path / "images"
            _toy_folder(images)
            concepts = tmp_path / "concepts.txt"
            concepts.write_text(
                "red color\nround shape\nwaxy skin\nstem on top\ngreen tint\n")
            descriptors = tmp_path / "descriptors.txt"
            descriptors.write_text("sketch\nclipart\n3d render\n")
            data = tmp_path / "data"
            assert main(["extract", "--images", str(images),
                         "--concepts", str(concepts),
                         "--descriptors", str(descriptors),
                         "--train-domain", "photo", "--out", str(data)]) == 0

            for name in ("images.npy", "concepts.npy", "prompts.npy"):
                matrix = np.load(data / name)
                norms = np.sqrt((matrix.astype(np.float64) ** 2).sum(axis=1))
                assert float(np.abs(norms - 1.0).max()) <= 1e-5, name

            model = tmp_path / "model"
            report = tmp_path / "report"
            for argv in (
                ["train", "--data", str(data), "--seed", "0", "--lambda", "1",
                 "--epochs", "20", "--batch-size", "4", "--out", str(model)],
                ["eval", "--data", str(data), "--model", str(model / "model.json"),
                 "--out", str(report)],
            ):
                proc = subprocess.run([sys.executable, "-m", "lance.cli"] + argv,
                                      capture_output=True, text=True)
                assert proc.returncode == 0, proc.stderr
            doc = json.loads((report / "report.json").read_text())
            assert doc["domain_report"]["train_domain"] == "photo"


class TestOfflineDescriptorPath:
    def test_offline_list_loads_through_consumer(self, tmp_path):
        with criterion("offline-descriptor-path (static list loadable by the "
                       "consumer's text bank)"):
            lance = pytest.importorskip("lance")
            out = tmp_path / "descriptors.txt"
            assert main(["descriptors", "--offline", "--n", "200",
                         "--out", str(out)]) == 0
            bank = lance.embedding_io.load_text_bank(out)
            assert len(bank) == 200
