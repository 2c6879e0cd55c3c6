from __future__ import annotations

import math

from homeloop.geometry import (
    OccupancyGrid,
    Pose,
    bresenham,
    point_in_polygon,
    polygon_bbox,
    polygon_centroid,
    polygons_overlap,
    side_of,
)

SQUARE = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]


def test_centroid_and_bbox_of_square():
    assert polygon_centroid(SQUARE) == (1.0, 1.0)
    assert polygon_bbox(SQUARE) == (0.0, 0.0, 2.0, 2.0)


def test_point_in_polygon():
    assert point_in_polygon(1.0, 1.0, SQUARE)
    assert not point_in_polygon(2.5, 1.0, SQUARE)
    assert not point_in_polygon(-0.1, -0.1, SQUARE)


def test_polygons_overlap_and_disjoint():
    shifted = [(3.0, 0.0), (5.0, 0.0), (5.0, 2.0), (3.0, 2.0)]
    touching = [(1.5, 1.5), (3.5, 1.5), (3.5, 3.5), (1.5, 3.5)]
    assert not polygons_overlap(SQUARE, shifted)
    assert polygons_overlap(SQUARE, touching)


def test_rasterize_counts_cells_inside():
    grid = OccupancyGrid(4.0, 3.0, 0.1)
    cells = grid.rasterize_polygon([(1.0, 1.0), (2.0, 1.0), (2.0, 2.0), (1.0, 2.0)])
    # cell centers at 1.05 .. 1.95 on both axes: 10 x 10
    assert len(cells) == 100
    assert grid.occ.sum() == 100


def test_flood_fill_respects_walls():
    grid = OccupancyGrid(3.0, 1.0, 0.1)
    # a full-height wall at x ~ 1.5 splits the corridor
    grid.rasterize_polygon([(1.4, 0.0), (1.6, 0.0), (1.6, 1.0), (1.4, 1.0)])
    mask = grid.flood_fill(grid.cell_of(0.5, 0.5))
    assert mask[grid.cell_of(0.5, 0.5)[1], grid.cell_of(0.5, 0.5)[0]]
    right = grid.cell_of(2.5, 0.5)
    assert not mask[right[1], right[0]]


def test_bresenham_endpoints_and_monotonicity():
    line = list(bresenham((0, 0), (5, 3)))
    assert line[0] == (0, 0) and line[-1] == (5, 3)
    assert all(abs(a[0] - b[0]) <= 1 and abs(a[1] - b[1]) <= 1 for a, b in zip(line, line[1:]))


def test_line_of_sight_blocked_by_wall():
    grid = OccupancyGrid(3.0, 1.0, 0.1)
    grid.rasterize_polygon([(1.4, 0.0), (1.6, 0.0), (1.6, 1.0), (1.4, 1.0)])
    a = grid.cell_of(0.5, 0.5)
    b = grid.cell_of(2.5, 0.5)
    assert not grid.line_of_sight(a, b)
    wall_cell = grid.cell_of(1.45, 0.5)
    assert grid.line_of_sight(a, wall_cell)  # the surface itself is visible


def test_side_of_quadrants():
    c = (1.0, 1.0)
    assert side_of(c, (1.0, 2.0)) == "north"
    assert side_of(c, (1.0, 0.0)) == "south"
    assert side_of(c, (2.5, 1.2)) == "east"
    assert side_of(c, (-0.5, 0.8)) == "west"


def test_pose_distance():
    assert math.isclose(Pose(0, 0).distance_to(Pose(3, 4)), 5.0)
    assert math.isclose(Pose(1, 1).distance_to((1.0, 2.0)), 1.0)
