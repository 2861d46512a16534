import pytest

from ddlmpc import ArgumentError, Topology


def one_based(s):
    return {k + 1 for k in s}


def test_in_set_examples():
    topo = Topology.chain(5)
    assert one_based(topo.in_set(2, 1)) == {2, 3, 4}
    assert one_based(topo.in_set(0, 2)) == {1, 2, 3}
    for i in range(5):
        assert topo.in_set(i, 0) == {i}


def test_out_set_directed_chain():
    topo = Topology.chain(3, directed=True)
    assert one_based(topo.out_set(0, 1)) == {1, 2}
    assert one_based(topo.out_set(2, 2)) == {3}
    assert one_based(topo.in_set(2, 2)) == {1, 2, 3}


def test_out_equals_in_on_symmetric_chain():
    topo = Topology.chain(6)
    assert topo.is_symmetric()
    for i in range(6):
        for d in range(4):
            assert topo.out_set(i, d) == topo.in_set(i, d)


def test_ring_set():
    assert one_based(Topology.chain(7).ring_set(3, 2)) == {2, 6}
    assert Topology.chain(5).ring_set(2, 3) == frozenset()
    with pytest.raises(ArgumentError):
        Topology.chain(5).ring_set(2, 0)


def test_invalid_queries():
    topo = Topology.chain(4)
    with pytest.raises(ArgumentError):
        topo.in_set(4, 1)
    with pytest.raises(ArgumentError):
        topo.in_set(0, -1)
    with pytest.raises(ArgumentError):
        Topology.from_edges(2, [(0, 3)], [1, 1], [1, 1])


def test_diameter_and_json_roundtrip():
    topo = Topology.chain(9, directed=True)
    assert Topology.chain(9).diameter == 8
    assert Topology.from_json(topo.to_json()) == topo
