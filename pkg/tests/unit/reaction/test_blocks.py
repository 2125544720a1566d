# tests/unit/reaction/test_blocks.py
import numpy as np
import pytest

from services.exceptions import InvalidArgumentError
from services.reaction.blocks import (PROVENANCE_BLOCKS, PROVENANCE_DEPENDENT, BlockConfig, OpLattice,
                                      blocks_to_sites, count_blocks, estimate_critical_density, op_cluster,
                                      op_simulate, op_uniforms, survival_implies_exit, window_mass,
                                      window_measure)
from services.reaction.core import BoundaryMeasure, BoxDomain, FiniteMeasure
from services.reaction.rng import RngStream


@pytest.fixture
def cfg():
    return BlockConfig(L=1.0, M=0.5, d=2)


def _face_exit(cfg, j, atoms):
    """Exit measure on D(j) with atoms (x2, mass) on the face x1 = 3jL."""
    domain = cfg.box(j)
    if not atoms:
        return BoundaryMeasure.empty(domain, 0.5)
    points = np.array([[3.0 * j * cfg.L, x2] for x2, _ in atoms])
    masses = np.array([m for _, m in atoms])
    return BoundaryMeasure(domain, 0.5, points, masses, np.ones(len(atoms), dtype=np.int64))


@pytest.fixture
def three_generations(cfg):
    return [
        _face_exit(cfg, 1, [(2.0, 1.0), (-2.0, 0.2)]),
        _face_exit(cfg, 2, [(0.0, 1.0)]),
        _face_exit(cfg, 3, [(-2.0, 1.0), (6.0, 0.6)]),
    ]


def _row(lat, j, ks):
    return [lat.site(j, k) for k in ks]


def test_blocks_to_sites_hand_fixture(cfg, three_generations):
    lat = blocks_to_sites(three_generations, cfg, origin_mass=1.0)
    assert lat.provenance == PROVENANCE_BLOCKS
    G = lat.generations
    assert G == 3
    assert lat.omega_tilde[0, G]
    # both-dead parents open the site, otherwise omega copies omega-tilde
    assert _row(lat, 1, [-3, -1, 1, 3]) == [1, 0, 1, 1]
    assert _row(lat, 2, [-2, 0, 2]) == [1, 1, 0]
    assert _row(lat, 3, [-3, -1, 1, 3]) == [1, 1, 0, 1]

    report = op_cluster(lat)
    assert report.survived
    assert report.max_generation == 3
    assert report.size == 4
    assert survival_implies_exit(lat, three_generations)


def test_blocks_to_sites_is_deterministic(cfg, three_generations):
    a = blocks_to_sites(three_generations, cfg, origin_mass=1.0)
    b = blocks_to_sites(three_generations, cfg, origin_mass=1.0)
    np.testing.assert_array_equal(a.omega, b.omega)


def test_zero_exits_open_every_site(cfg):
    exits = [_face_exit(cfg, j, []) for j in (1, 2, 3)]
    lat = blocks_to_sites(exits, cfg, origin_mass=0.1)
    assert not lat.omega_tilde.any()
    for j in (1, 2, 3):
        ks = [k for k in range(-3, 4) if (j + k) % 2 == 0]
        assert _row(lat, j, ks) == [1] * len(ks)


def test_origin_needs_mass_at_least_M(cfg, three_generations):
    lat = blocks_to_sites(three_generations, cfg, origin_mass=0.5)
    assert lat.omega_tilde[0, lat.generations]
    lat = blocks_to_sites(three_generations, cfg, origin_mass=0.49)
    assert not lat.omega_tilde[0, lat.generations]


def test_block_config_validation():
    with pytest.raises(InvalidArgumentError):
        BlockConfig(L=1.0, M=1.0, d=1)
    with pytest.raises(InvalidArgumentError):
        BlockConfig(L=0.0, M=1.0)


def test_window_measure_sits_on_the_window(cfg):
    mu = window_measure(cfg.box(1), 0.25, cfg.L, 2.0)
    assert mu.total() == pytest.approx(2.0)
    assert window_mass(mu, cfg.L) == pytest.approx(2.0)


def test_lattice_site_lookup():
    lat = OpLattice(np.ones((3, 5), dtype=bool), "test")
    assert lat.site(1, 1) == 1
    # parity sites only
    assert not lat.omega[1, 2]
    with pytest.raises(InvalidArgumentError):
        lat.site(1, 0)


def test_op_cluster_extremes():
    rng = RngStream(2)
    assert op_cluster(op_simulate(1.0, 0, 30, rng)).survived
    dead = op_cluster(op_simulate(0.0, 0, 30, rng))
    assert not dead.survived
    assert dead.size == 1
    assert dead.max_generation == 0


def test_dependent_sites_keep_uniform_marginals():
    u = op_uniforms(60, RngStream(3), k_dependence=2)
    assert u.shape == (61, 121)
    assert abs(u.mean() - 0.5) < 0.03
    assert op_simulate(0.5, 2, 10, RngStream(3)).provenance == PROVENANCE_DEPENDENT
    with pytest.raises(InvalidArgumentError):
        op_simulate(1.5, 0, 10, RngStream(3))


def test_density_sweep_brackets_between_sub_and_supercritical():
    sweep = estimate_critical_density([0.95, 0.3], 50, 200, RngStream(5))
    assert sweep.densities.tolist() == [0.3, 0.95]
    assert sweep.fractions[0] == 0.0
    assert sweep.fractions[1] > 0.5
    assert sweep.bracket == (0.3, 0.95)


def test_count_blocks():
    box = BoxDomain.centered(2.0, 1)
    mu = FiniteMeasure.uniform(box, 0.5, 4.0)
    assert count_blocks(mu, 1.0, 0.75) == 7
    assert count_blocks(FiniteMeasure.zeros(box, 0.5), 1.0, 0.75) == 0
    with pytest.raises(InvalidArgumentError):
        count_blocks(mu, 0.0, 1.0)
