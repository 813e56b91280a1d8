from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from radfield.blur import SharpnessScore, filter_dataset, score_image
from radfield.synthetic import (
    OrbitRig,
    default_intrinsics,
    default_scene,
    make_blur_corpus,
    sample_surface_points,
)

settings.register_profile("radfield", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("radfield")

# one line per acceptance criterion, printed in the terminal summary
CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, text: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {text}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])


@dataclass
class Corpus:
    scene: object
    intr: object
    rig: OrbitRig
    manifest: object
    images: list
    labels: dict
    scores: list
    filtered: object
    report: object
    kept_images: list
    points: tuple


@pytest.fixture(scope="session")
def corpus() -> Corpus:
    """Default scene, 32 orbit views with 8 blurred at sigma 2, filtered with k = 1."""
    scene = default_scene()
    intr = default_intrinsics(64)
    rig = OrbitRig(n_frames=16)
    manifest, images, labels = make_blur_corpus(scene, rig, intr, [2.0], 0.25, seed=0)
    scores = [SharpnessScore(i, score_image(im)) for i, im in enumerate(images)]
    filtered, report = filter_dataset(manifest, scores, 1.0)
    kept = [images[i] for i in report.kept]
    points = sample_surface_points(scene, 500, seed=0)
    return Corpus(scene, intr, rig, manifest, images, labels, scores, filtered, report, kept, points)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
