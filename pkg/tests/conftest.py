import pytest

from module.chain_module import ProfileSpec, build_variance_profile, flat_chain
from module.diagram_module import load_catalog


@pytest.fixture
def flat8():
    return flat_chain(8)


@pytest.fixture
def band32():
    return build_variance_profile(ProfileSpec('AlphaStable', {'alpha': 2.0}, d=1, L=32, W=4))


@pytest.fixture
def hankel64():
    base = ProfileSpec('AlphaStable', {'alpha': 2.0}, d=1, L=64, W=4)
    return build_variance_profile(ProfileSpec('Hankel', {'base': base, 'x0': 10}, d=1, L=64, W=4))


@pytest.fixture
def catalog():
    return {name: load_catalog(name)
            for name in ('single_vertex', 'self_loop', 'theta', 'dumbbell', 'two_face_bridge')}
