"""Shared builders for the test suite: small decomposed problems on demand."""

import numpy as np

from ddlab import (
    GridSpec, MaterialField, build_problem, build_structured_mesh,
    face_pressure_load,
)

CONTRAST = MaterialField("checkerboard", 1.0, 1.0e5)


def make_problem(dimension=2, physics="scalar", elements=4, subdomains=2,
                 material=None, slant=0.0, clamp=("-x",), load_face="+x",
                 redundancy="non-redundant", raw_assignment="owner",
                 load=None):
    spec = GridSpec(dimension, elements, subdomains, slant_angle=slant)
    mesh = build_structured_mesh(spec)
    if load is None:
        load = face_pressure_load(mesh, load_face, 1.0, physics)
    return build_problem(
        spec, physics=physics, material=material, clamp_faces=clamp,
        load=load, redundancy=redundancy, raw_assignment=raw_assignment,
        mesh=mesh,
    )


def random_local_vectors(sizes, rng):
    return [rng.standard_normal(n) for n in sizes]


def relerr(a, b):
    scale = np.linalg.norm(b)
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / (scale if scale > 0 else 1.0)
