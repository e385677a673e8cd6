"""Shared fixtures: the fixed seed-42 evaluation set and cached heavy maps.

Everything expensive is session-scoped and computed at most once:
the 50-scene synthetic dataset, the detector pair, and the RISE / D-RISE
sweeps over every positive scene (these dominate the suite's wall time and
feed three separate acceptance criteria).
"""

import time

import numpy as np
import pytest

from detxplain.dataio import write_dataset
from detxplain.minicnn import MiniCNN
from detxplain.runner import run_many
from detxplain.synthetic import generate_dataset_scenes

SUITE_T0 = time.monotonic()

DATASET_SEED = 42
DATASET_SIZE = 50
IMAGE_SIDE = 128


def suite_elapsed() -> float:
    """Wall-clock seconds since the test session imported this module."""
    return time.monotonic() - SUITE_T0


@pytest.fixture(scope="session")
def scenes():
    """The fixed evaluation set: 50 seed-42 scenes as (id, scene) pairs."""
    return list(generate_dataset_scenes(DATASET_SIZE, IMAGE_SIDE, IMAGE_SIDE,
                                        DATASET_SEED))


@pytest.fixture(scope="session")
def images(scenes):
    out = []
    for sid, scene in scenes:
        image = scene.image
        image.image_id = sid
        out.append(image)
    return out


@pytest.fixture(scope="session")
def positives(images):
    return [img for img in images if img.boxes]


@pytest.fixture(scope="session")
def singles(images):
    return [img for img in images if len(img.boxes) == 1]


@pytest.fixture(scope="session")
def empties(images):
    return [img for img in images if not img.boxes]


@pytest.fixture(scope="session")
def detector():
    return MiniCNN()


@pytest.fixture(scope="session")
def zb_detector():
    return MiniCNN(zero_bias=True)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, scenes):
    """The evaluation set written to disk in the CLI's dataset layout."""
    out = tmp_path_factory.mktemp("dataset")
    write_dataset(out, scenes)
    return out


def lead(results, method):
    """First result of one method for an image (detection 0 for D-RISE)."""
    return next(r for r in results if r.method == method)


@pytest.fixture(scope="session")
def heavy_results(detector, positives):
    """RISE and D-RISE at default settings over every positive scene.

    Runs through the shipped parallel dispatcher so mask seeds, timing
    attribution, and result ordering are exactly what `explain`/`benchmark`
    produce. Keyed as (image_id, method) -> leading ExplanationResult.
    """
    per_image = run_many(detector, positives, ["rise", "drise"],
                         master_seed=0, workers=2)
    out = {}
    for image, results in zip(positives, per_image):
        for method in ("rise", "drise"):
            out[(image.image_id, method)] = lead(results, method)
    return out


@pytest.fixture(scope="session")
def gradient_results(detector, positives):
    """Serial gradient-family runs over the positives (maps and timings)."""
    warm = positives[:1]
    methods = ["gradcam", "gradcampp", "lrp", "adasise"]
    run_many(detector, warm, methods, master_seed=0, workers=1)
    per_image = run_many(detector, positives, methods, master_seed=0,
                         workers=1)
    out = {}
    for image, results in zip(positives, per_image):
        for method in methods:
            out[(image.image_id, method)] = lead(results, method)
    return out


@pytest.fixture(scope="session")
def lime_results(detector, singles):
    """LIME at default settings on a few single-nodule scenes (timing)."""
    subset = singles[:3]
    per_image = run_many(detector, subset, ["lime"], master_seed=0, workers=1)
    return {(image.image_id, "lime"): lead(results, "lime")
            for image, results in zip(subset, per_image)}


def random_saliency(image, master_seed=0):
    """The random-uniform baseline map for one image, reproducibly seeded."""
    from detxplain.imaging import SaliencyMap
    from detxplain.seeds import derive_rng
    rng = derive_rng(master_seed, "random", image.image_id)
    return SaliencyMap(values=rng.random(image.data.shape),
                       method_name="random")
