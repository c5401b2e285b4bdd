import numpy as np
import pytest

from safeturn.config import SimConfig
from safeturn.geometry import EGO, FAR, NEAR, RouteGeometry, build_junction


def test_arc_length_strictly_increasing(junction):
    for route in junction.routes.values():
        assert np.all(np.diff(route.arc) > 0)


def test_repeated_points_rejected():
    with pytest.raises(ValueError):
        RouteGeometry("bad", np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]))


def test_zones_within_routes(junction):
    for route in junction.routes.values():
        for zone in route.conflict_zones:
            other = junction.routes[zone.other_route]
            assert 0.0 <= zone.own[0] <= zone.own[1] <= route.length
            assert 0.0 <= zone.other[0] <= zone.other[1] <= other.length


def test_conflict_relation_symmetric(junction):
    for rid, route in junction.routes.items():
        for zone in route.conflict_zones:
            back = junction.routes[zone.other_route].zones_with(rid)
            assert any(b.own == zone.other and b.other == zone.own for b in back)


def test_ego_has_one_zone_per_through_lane(junction):
    assert len(junction.ego.zones_with(NEAR)) == 1
    assert len(junction.ego.zones_with(FAR)) == 1
    near = junction.ego.zones_with(NEAR)[0]
    far = junction.ego.zones_with(FAR)[0]
    assert near.own[0] < far.own[0]  # the near lane is crossed first


def test_through_lanes_mirror_each_other(junction):
    near, far = junction.routes[NEAR], junction.routes[FAR]
    assert near.length == pytest.approx(far.length)
    for s in (0.0, 37.5, near.length):
        xn, yn = near.xy(s)
        xf, yf = far.xy(s)
        assert xn == pytest.approx(-xf) and yn == pytest.approx(-yf)


def test_point_at_clamps_and_matches_fast_path(junction):
    road = junction.routes[NEAR]
    assert road.xy(-5.0) == pytest.approx(road.xy(0.0))
    assert road.xy(1e6) == pytest.approx(road.xy(road.length))
    for s in (0.0, 12.34, 200.0):
        x, y = road.point_at(s)
        assert road.xy(s) == pytest.approx((float(x), float(y)))


def test_ego_route_ends_in_far_lane_heading_west(junction):
    ego = junction.ego
    _, y = ego.xy(ego.length)
    assert y == pytest.approx(SimConfig().lane_width / 2)
    assert ego.heading_at(ego.length) == pytest.approx(np.pi)
    assert ego.heading_at(0.0) == pytest.approx(np.pi / 2)


def test_memoized_per_geometry():
    a = build_junction(SimConfig())
    assert build_junction(SimConfig(dt=0.1)) is a
    assert build_junction(SimConfig(lane_width=4.0)) is not a
    assert set(a.routes) == {EGO, NEAR, FAR}
