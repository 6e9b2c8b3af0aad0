import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from empasim.messaging import (
    GLOBAL_MEMORY,
    Message,
    MessageKind,
    MessageTrace,
    Router,
    Timing,
    Unroutable,
    deliver,
    route,
)
from empasim.topology import GridConfig, build_clusters

from helpers import routing_graph

T = Timing()


def make(w=8, h=8, denied=()):
    cl = build_clusters(GridConfig(w, h))
    return cl, Router(cl, denied)


def test_message_validation():
    with pytest.raises(ValueError):
        Message(MessageKind.QT_RESULT, 1, 1, qt_id=3)
    with pytest.raises(ValueError):
        Message(MessageKind.MEMORY_READ, 1, 2)
    with pytest.raises(ValueError):
        Message(MessageKind.QT_RESULT, 1, 2)
    with pytest.raises(ValueError):
        Message(MessageKind.MEMORY_READ_REPLY, 1, 2)


def test_neighbor_delivery_costs_one_hop():
    cl, r = make()
    a = 27
    b = cl.neighbors(a)[0]
    msg = Message(MessageKind.REGISTER_TRANSFER, a, b, qt_id=1)
    rt = route(msg, r)
    assert rt.hops == 1
    assert deliver(msg, rt, 10, T).time == 13


def test_head_memory_read_round_trip_is_106():
    cl, r = make()
    head = cl.heads[1]
    rt = r.route(head, GLOBAL_MEMORY)
    assert rt.nodes == (head, GLOBAL_MEMORY)
    req = Message(MessageKind.MEMORY_READ, head, GLOBAL_MEMORY, address=0)
    service = deliver(req, rt, 0, T).time
    assert service == 3 + 100
    reply = Message(MessageKind.MEMORY_READ_REPLY, GLOBAL_MEMORY, head, address=0, word=0)
    back = r.route_message(reply)
    assert back.nodes == (GLOBAL_MEMORY, head)
    assert deliver(reply, back, service, T).time == 106


def test_member_memory_goes_through_its_head():
    cl, r = make()
    head = next(h for h in cl.heads if len(cl.cluster_of(h).members) == 7)
    member = [m for m in cl.cluster_of(head).members if m != head][0]
    assert r.route(member, GLOBAL_MEMORY).nodes == (member, head, GLOBAL_MEMORY)


def test_denied_destination_is_nacked_after_round_trip():
    cl, r = make(denied={9})
    src = cl.neighbors(9)[0]
    msg = Message(MessageKind.REGISTER_TRANSFER, src, 9, qt_id=1)
    rt = r.route(src, 9)
    ev = deliver(msg, rt, 0, T, denied={9})
    assert ev.nacked and ev.time == 2 * rt.hops * T.hop_cost


def test_unroutable_when_cut_off():
    cl, r = make(3, 1, denied={1})
    with pytest.raises(Unroutable):
        r.route(0, 2)
    with pytest.raises(Unroutable):
        r.route(0, 99)


def test_trace_csv_header_and_rows():
    cl, r = make()
    msg = Message(MessageKind.QT_RESULT, 0, 1, qt_id=4)
    tr = MessageTrace()
    tr.record(5, deliver(msg, r.route(0, 1), 5, T))
    assert tr.to_csv().splitlines() == ["send_time,arrival_time,kind,src,dst,hops", "5,8,QtResult,0,1,1"]


def test_timing_rejects_zero_costs():
    with pytest.raises(ValueError):
        Timing(hop_cost=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.data())
def test_routes_are_shortest_and_avoid_denied(w, h, data):
    cl = build_clusters(GridConfig(w, h))
    n = w * h
    denied = frozenset(data.draw(st.sets(st.integers(0, n - 1), max_size=n // 4)))
    r = Router(cl, denied)
    g = routing_graph(w, h, {c: cl.head_of(c) for c in range(n)}, denied)
    src = data.draw(st.integers(0, n - 1).filter(lambda c: c not in denied))
    # relays must be live; a denied core may only be an endpoint
    live = g.subgraph((set(range(n)) - denied) | {src})
    for dst in range(n):
        usable = live if dst not in denied else g.subgraph(set(live) | {dst})
        try:
            expect = nx.shortest_path_length(usable, src, dst)
        except nx.NetworkXNoPath:
            with pytest.raises(Unroutable):
                r.route(src, dst)
            continue
        rt = r.route(src, dst)
        assert rt.hops == expect
        assert not set(rt.nodes[1:-1]) & denied
        for a, b in zip(rt.nodes, rt.nodes[1:]):
            assert g.has_edge(a, b)
