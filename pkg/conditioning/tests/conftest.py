"""Session fixtures: a tiny corpus and packet files produced by the
renderer's CLI, exercised strictly through the file formats."""

import subprocess
from pathlib import Path

import numpy as np
import pytest

LIGHT_DIR = "objects/obj_0000/views/view_0/lighting/light_00"


def run_renderer(*argv, cwd):
    proc = subprocess.run(["lightforge", *argv], capture_output=True,
                          text=True, cwd=cwd)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    run_renderer("dataset", "--seed", "3", "--objects", "1",
                 "--width", "32", "--height", "32", "--spp", "2",
                 "--hint-spp", "1", "--env-pool", "2", "--out", str(root),
                 cwd=root)
    return root


@pytest.fixture(scope="session")
def packets(corpus, tmp_path_factory):
    """Identity-feature, random-feature, and direct-layout containers
    packed from one lighting directory of the corpus."""
    out = tmp_path_factory.mktemp("packets")
    hints = [f"{LIGHT_DIR}/hint{i}.pfm" for i in range(4)]
    mask = f"{LIGHT_DIR}/mask.png"
    hint_args = []
    for h in hints:
        hint_args += ["--hint", h]

    run_renderer("pack", "--layout", "multiplied", *hint_args,
                 "--mask", mask, "--out", str(out / "identity"), cwd=corpus)

    features = np.random.default_rng(5).uniform(
        -2.0, 2.0, (32, 32, 12)).astype(np.float32)
    np.save(out / "features.npy", features)
    run_renderer("pack", "--layout", "multiplied", *hint_args,
                 "--mask", mask, "--features", str(out / "features.npy"),
                 "--out", str(out / "product"), cwd=corpus)

    run_renderer("pack", "--layout", "direct", *hint_args, "--mask", mask,
                 "--provisional", f"{LIGHT_DIR}/render.pfm",
                 "--out", str(out / "direct"), cwd=corpus)
    return {
        "identity": out / "identity/packet.dlcp",
        "product": out / "product/packet.dlcp",
        "direct": out / "direct/packet.dlcp",
        "features": features,
        "hint_files": [corpus / h for h in hints],
        "mask_file": corpus / mask,
        "provisional_file": corpus / f"{LIGHT_DIR}/render.pfm",
    }
