import math

import numpy as np
import pytest

from scene4d.geometry import CameraParams
from scene4d.synth import (SceneObject, SceneSpec, box_mesh, plane_mesh,
                           spin_path, translation_path)


def identity_camera(fov=(math.pi / 2, math.pi / 2)) -> CameraParams:
    return CameraParams(q=[1, 0, 0, 0], t=[0, 0, 0], fov=fov)


def demo_scene(n_frames=8, resolution=(64, 64), seed=7, n_queries=512) -> SceneSpec:
    """One spinning box, one translating box, static ground plane."""
    cam = identity_camera()
    spin_v, spin_f = box_mesh([1.2, 0.0, 5.0], [1.4, 1.4, 1.4])
    slide_v, slide_f = box_mesh([-1.5, 0.0, 6.0], [1.0, 1.0, 1.0])
    return SceneSpec(
        objects=[
            SceneObject(spin_v, spin_f,
                        spin_path([0, 1, 0], [1.2, 0.0, 5.0], math.pi / 7, n_frames)),
            SceneObject(slide_v, slide_f,
                        translation_path([0.25, 0, 0], n_frames)),
        ],
        background=plane_mesh([0, 2.5, 8.0], [9, 0, 0], [0, 0, 9]),
        camera_path=[cam] * n_frames,
        resolution=resolution,
        n_frames=n_frames,
        seed=seed,
        n_queries=n_queries,
    )


def spinning_box_scene(n_frames=8, resolution=(64, 64), seed=3) -> SceneSpec:
    """A single box doing a half-turn in front of the camera (no background),
    so surfaces hidden at frame 0 are seen in later frames."""
    cam = identity_camera()
    v, f = box_mesh([0, 0, 5.0], [2.0, 2.0, 2.0])
    return SceneSpec(
        objects=[SceneObject(v, f, spin_path([0, 1, 0], [0, 0, 5.0],
                                             math.pi / n_frames, n_frames))],
        background=None,
        camera_path=[cam] * n_frames,
        resolution=resolution,
        n_frames=n_frames,
        seed=seed,
    )


@pytest.fixture(scope="session")
def demo_dataset():
    from scene4d.synth import generate
    return generate(demo_scene())


def random_camera(rng) -> CameraParams:
    """Well-conditioned random camera from a splitmix64 stream."""
    q = np.array([rng.uniform() * 2 - 1 for _ in range(4)])
    while np.linalg.norm(q) < 0.1:
        q = np.array([rng.uniform() * 2 - 1 for _ in range(4)])
    q /= np.linalg.norm(q)
    t = np.array([rng.uniform() * 6 - 3 for _ in range(3)])
    fov = (0.3 + rng.uniform() * 2.3, 0.3 + rng.uniform() * 2.3)
    return CameraParams(q=q, t=t, fov=fov)
