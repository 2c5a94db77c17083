import random

import pytest

from src.core.errors import ParameterError
from src.core.utilities import pseudonym_hash
from src.entities.clusters import cluster_threshold, elect_leader, form_clusters
from src.entities.spectrum import Grid


def _pseudonyms(count, seed):
    rng = random.Random(seed)
    return [rng.getrandbits(64).to_bytes(8, "big").hex() for _ in range(count)]


def _form(sus, grid, radius, max_members=None):
    return form_clusters(sus, grid, radius, 2, 3600.0, 10.0, 0.1, max_members)


def test_one_cell_gives_one_cluster():
    grid = Grid(4)
    sus = [(p, grid.cell_id(1, 1)) for p in _pseudonyms(5, 1)]
    clusters = _form(sus, grid, 1)
    assert len(clusters) == 1
    assert clusters[0].members == dict(sus)
    assert clusters[0].center_cell == grid.cell_id(1, 1)


def test_distant_groups_give_separate_clusters():
    grid = Grid(10)
    names = _pseudonyms(8, 2)
    near = [(p, grid.cell_id(0, i % 2)) for i, p in enumerate(names[:4])]
    far = [(p, grid.cell_id(9, 9 - i % 2)) for i, p in enumerate(names[4:])]
    clusters = _form(near + far, grid, 1)
    assert len(clusters) == 2
    assert sorted(sorted(c.members) for c in clusters) == sorted([sorted(dict(near)), sorted(dict(far))])
    assert [c.cluster_id for c in clusters] == [0, 1]


@pytest.mark.parametrize("radius", [0, 1, 2])
def test_random_placements_partition_within_radius(radius):
    grid = Grid(8)
    rng = random.Random(radius)
    for trial in range(20):
        names = _pseudonyms(rng.randint(1, 30), seed=trial * 10 + radius)
        sus = [(p, rng.randrange(grid.cells)) for p in names]
        cap = rng.choice([None, 3])
        clusters = _form(sus, grid, radius, cap)

        clustered = [p for c in clusters for p in c.members]
        assert sorted(clustered) == sorted(names)
        for c in clusters:
            assert all(grid.distance(c.center_cell, cell) <= radius for cell in c.members.values())
            assert c.leader == min(c.members, key=pseudonym_hash)
            assert cap is None or c.n <= cap

        # the first seed reaches at least as many SUs as any other occupied cell
        best = max(sum(1 for _, cell in sus if grid.distance(center, cell) <= radius)
                   for center in {cell for _, cell in sus})
        assert len(clusters[0].members) == (best if cap is None else min(best, cap))


def test_negative_radius_rejected():
    with pytest.raises(ParameterError):
        _form([("01" * 8, 0)], Grid(2), -1)


def test_leader_election_and_threshold():
    names = _pseudonyms(4, 3)
    ranked = sorted(names, key=pseudonym_hash)
    assert elect_leader(names) == ranked[0]
    assert elect_leader(names, exclude=[ranked[0]]) == ranked[1]
    with pytest.raises(ParameterError):
        elect_leader(names, exclude=names)
    assert [cluster_threshold(n) for n in (1, 2, 3, 4, 7)] == [0, 1, 1, 2, 3]
