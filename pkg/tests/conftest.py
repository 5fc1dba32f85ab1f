import numpy as np
import pytest

from protonfem.mesh import Domain, build_structured


def unit_domain():
    return Domain([(0.0, 1.0)], (1.0, 2.0), (1.0,))


def bragg_domain():
    return Domain([(0.0, 4.0)], (1.0, 70.0), (1.0,))


@pytest.fixture
def unit_mesh():
    return build_structured(unit_domain(), (1, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def conformity_defects(mesh):
    """Vertices lying strictly inside an edge of some cell (hanging nodes)."""
    defects = []
    verts = mesh.vertices
    for c in mesh.cells:
        for i in range(3):
            for j in range(i + 1, 3):
                a, b = verts[c[i]], verts[c[j]]
                t = b - a
                rel = (verts - a) @ t / (t @ t)
                off = np.linalg.norm(verts - a - rel[:, None] * t, axis=1)
                inside = (rel > 1e-12) & (rel < 1 - 1e-12) & (off < 1e-12)
                defects += [(tuple(c), int(k)) for k in np.flatnonzero(inside)]
    return defects
