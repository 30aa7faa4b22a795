from __future__ import annotations

import math
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halpha.classmodel import Label
from halpha.errors import OffDiskCentroid
from halpha.events import (
    Component,
    ComponentGroup,
    EruptionReport,
    EventsConfig,
    EventTrack,
    EventTracker,
    FlareReport,
    Observation,
    classify_flare,
    compactness,
    corrected_area_msh,
    detect_eruptions,
    double_sweep_diameter,
    extract_components,
    filter_false_filaments,
    floyd_warshall_diameter,
    group_components,
    importance_class,
    importance_rank,
    report_from_record,
    skeleton_length,
    skeletonize,
    track_ids,
)
from halpha.imgio import DiskGeometry
from halpha.segment import LabelMap

from conftest import T0, frame
from oracles import random_tree_skeleton, tree_diameter_bruteforce

BG = int(Label.BACKGROUND)


def blank(shape=(64, 64)) -> np.ndarray:
    return np.full(shape, BG, dtype=np.uint8)


def block(cls, r0, c0, h, w) -> Component:
    rr, cc = np.mgrid[r0 : r0 + h, c0 : c0 + w]
    return Component(cls, rr.ravel(), cc.ravel())


def pixel_sets(groups) -> set:
    return {frozenset(zip(g.rows.tolist(), g.cols.tolist())) for g in groups}


# ---------------------------------------------------------------- components


def test_component_rejects_background_and_empty():
    with pytest.raises(ValueError):
        Component(Label.BACKGROUND, [0], [0])
    with pytest.raises(ValueError):
        Component(Label.FLARE, [], [])


def test_extract_empty_mask():
    assert extract_components(blank(), Label.FILAMENT) == []


def test_diagonal_blocks_are_one_component():
    lab = blank()
    lab[10:15, 10:15] = Label.FLARE
    lab[15:20, 15:20] = Label.FLARE
    comps = extract_components(LabelMap(lab), Label.FLARE)
    assert len(comps) == 1
    assert comps[0].area == 50


def test_small_blob_dropped():
    lab = blank()
    lab[5, 5:8] = Label.FILAMENT
    assert extract_components(lab, Label.FILAMENT, min_area=10) == []
    assert len(extract_components(lab, Label.FILAMENT, min_area=3)) == 1


def test_component_geometry_and_runs():
    c = block(Label.FLARE, 2, 3, 2, 4)
    assert c.area == 8
    assert c.bbox == (2, 3, 3, 6)
    assert c.centroid == pytest.approx((4.5, 2.5))
    assert c.runs() == [(2, 3, 6), (3, 3, 6)]
    assert c.mask((6, 8)).sum() == 8


# ------------------------------------------------------------------ grouping


@pytest.mark.parametrize(
    "cls,gap,expected",
    [(Label.FILAMENT, 20, 1), (Label.FILAMENT, 30, 2), (Label.FLARE, 100, 1), (Label.FLARE, 200, 2)],
)
def test_grouping_thresholds(cls, gap, expected):
    a = block(cls, 10, 10, 3, 5)
    b = block(cls, 10, 14 + gap, 3, 5)  # nearest pixel centres are `gap` apart
    assert len(group_components([a, b], cls)) == expected


def test_grouping_threshold_override():
    a = block(Label.FILAMENT, 0, 0, 2, 2)
    b = block(Label.FILAMENT, 0, 31, 2, 2)
    assert len(group_components([a, b], Label.FILAMENT)) == 2
    assert len(group_components([a, b], Label.FILAMENT, threshold=40)) == 1


def test_grouping_chains_single_linkage():
    parts = [block(Label.FILAMENT, 0, 20 * k, 2, 2) for k in range(4)]
    groups = group_components(parts, Label.FILAMENT)
    assert len(groups) == 1 and groups[0].area == 16


component_lists = st.lists(
    st.tuples(st.integers(0, 150), st.integers(0, 150), st.integers(1, 6), st.integers(1, 6)),
    min_size=1,
    max_size=7,
)


@settings(max_examples=40, deadline=None)
@given(component_lists, st.randoms(use_true_random=False))
def test_grouping_permutation_invariant_and_idempotent(specs, shuffler):
    comps = [block(Label.FILAMENT, *s) for s in specs]
    groups = group_components(comps, Label.FILAMENT)
    shuffled = list(comps)
    shuffler.shuffle(shuffled)
    again = group_components(shuffled, Label.FILAMENT)
    assert [g.key() for g in groups] == [g.key() for g in again]
    assert [sorted(zip(g.rows.tolist(), g.cols.tolist())) for g in groups] == [
        sorted(zip(g.rows.tolist(), g.cols.tolist())) for g in again
    ]
    regrouped = group_components(groups, Label.FILAMENT)
    assert pixel_sets(regrouped) == pixel_sets(groups)


# ------------------------------------------------------------------ tracking


def id_map_with(shape, *entries):
    m = np.zeros(shape, dtype=np.int64)
    for tid, comp in entries:
        m[comp.rows, comp.cols] = tid
    return m


def test_track_inherits_unique_voter():
    prev = block(Label.FLARE, 0, 0, 20, 25)  # 500 px
    hist = [id_map_with((64, 64), (7, prev))]
    g = ComponentGroup(Label.FLARE, [block(Label.FLARE, 0, 0, 20, 25)])
    ids, nxt = track_ids([g], hist, next_id=8)
    assert ids == [7] and nxt == 8


def test_track_birth_without_overlap():
    hist = [id_map_with((64, 64), (3, block(Label.FLARE, 0, 0, 5, 5)))]
    g = ComponentGroup(Label.FLARE, [block(Label.FLARE, 40, 40, 5, 5)])
    ids, nxt = track_ids([g], hist, next_id=4)
    assert ids == [4] and nxt == 5


def test_track_split_larger_vote_keeps_id():
    ancestor = block(Label.FILAMENT, 0, 0, 25, 20)  # 500 px
    hist = [id_map_with((64, 64), (1, ancestor))]
    small = ComponentGroup(Label.FILAMENT, [block(Label.FILAMENT, 0, 0, 10, 20)])  # 200 px overlap
    big = ComponentGroup(Label.FILAMENT, [block(Label.FILAMENT, 10, 0, 15, 20)])  # 300 px overlap
    ids, nxt = track_ids([small, big], hist, next_id=2)
    assert ids == [2, 1] and nxt == 3


def test_track_votes_summed_over_window():
    shape = (32, 32)
    a = block(Label.FLARE, 0, 0, 4, 4)
    b = block(Label.FLARE, 0, 2, 4, 4)
    # id 5 wins a single frame, id 6 wins by accumulating over two frames
    hist = [id_map_with(shape, (5, a)), id_map_with(shape, (6, b)), id_map_with(shape, (6, b))]
    g = ComponentGroup(Label.FLARE, [block(Label.FLARE, 0, 0, 4, 6)])
    ids, _ = track_ids([g], hist, next_id=10)
    assert ids == [6]


def test_track_never_reuses_retired_id():
    comp = block(Label.FLARE, 0, 0, 5, 5)
    hist = [id_map_with((16, 16), (2, comp))]
    ids, nxt = track_ids([ComponentGroup(Label.FLARE, [comp])], hist, next_id=3, retired={2})
    assert ids == [3] and nxt == 4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), max_size=4), min_size=1, max_size=8))
def test_track_ids_fresh_ids_are_monotone(frames):
    shape = (60, 60)
    history: list[np.ndarray] = []
    next_id, births, seen = 1, 0, set()
    for specs in frames:
        groups = [ComponentGroup(Label.FLARE, [block(Label.FLARE, r, c, 6, 6)]) for r, c in specs]
        before = next_id
        ids, next_id = track_ids(groups, history[-5:], next_id)
        births += next_id - before
        assert next_id >= before
        assert all(i < next_id for i in ids)
        assert len(set(ids)) == len(ids)
        seen.update(ids)
        m = np.zeros(shape, dtype=np.int64)
        for tid, g in zip(ids, groups):
            m[g.rows, g.cols] = tid
        history.append(m)
    assert len(seen) <= births


# ------------------------------------------------------------------- filters


def ring_fragment(cy, cx, radius, width=3, angles=(0.0, 1.2)) -> ComponentGroup:
    yy, xx = np.mgrid[0:128, 0:128]
    d = np.hypot(yy - cy, xx - cx)
    ang = np.arctan2(yy - cy, xx - cx)
    m = (np.abs(d - radius) <= width / 2) & (ang >= angles[0]) & (ang <= angles[1])
    r, c = np.nonzero(m)
    return ComponentGroup(Label.FILAMENT, [Component(Label.FILAMENT, r, c)])


def disk_component(cls, cy, cx, radius) -> Component:
    yy, xx = np.mgrid[0:128, 0:128]
    r, c = np.nonzero(np.hypot(yy - cy, xx - cx) <= radius)
    return Component(cls, r, c)


def test_ring_fragment_near_sunspot_removed():
    spot = disk_component(Label.SUNSPOT, 64, 64, 8)
    near = ring_fragment(64, 64, 8 + 10)
    far = ring_fragment(64, 64, 8 + 35)
    none_bright = np.zeros((128, 128), dtype=bool)
    kept = filter_false_filaments([near, far], [spot], none_bright)
    assert len(kept) == 1 and kept[0] is far


def test_round_group_in_plage_removed():
    g = ComponentGroup(Label.FILAMENT, [disk_component(Label.FILAMENT, 64, 64, 9)])
    assert compactness(g) > 0.95
    bright = np.zeros((128, 128), dtype=bool)
    assert filter_false_filaments([g], [], bright) == [g]
    bright[40:90, 40:90] = True
    assert filter_false_filaments([g], [], bright) == []


def _bar_compactness_analytic(width: int, length: int) -> float:
    # the bar's rows sit at offsets -1, 0, 1 from the centroid; a row at offset y
    # has its pixel centres inside the equal-area circle for |x| <= sqrt(r^2 - y^2),
    # and the centres along a row are the half-integers (even length) around 0
    r2 = width * length / math.pi
    inside = 0
    for y in np.arange(width) - (width - 1) / 2:
        half = math.sqrt(r2 - y * y)
        xs = np.arange(length) - (length - 1) / 2
        inside += int(np.sum(np.abs(xs) <= half))
    return inside / (width * length)


def test_long_bar_in_plage_kept():
    rr, cc = np.mgrid[60:63, 4:124]
    bar = ComponentGroup(Label.FILAMENT, [Component(Label.FILAMENT, rr.ravel(), cc.ravel())])
    expected = _bar_compactness_analytic(3, 120)
    assert compactness(bar) == pytest.approx(expected, abs=1e-12)
    assert compactness(bar) < 0.3
    bright = np.ones((128, 128), dtype=bool)
    assert filter_false_filaments([bar], [], bright) == [bar]


# -------------------------------------------------------------- skeletonizing


def test_thin_line_unchanged():
    m = np.zeros((9, 30), dtype=bool)
    m[4, 3:25] = True
    assert np.array_equal(skeletonize(m), m)


def test_single_pixel_kept():
    m = np.zeros((5, 5), dtype=bool)
    m[2, 2] = True
    assert np.array_equal(skeletonize(m), m)


def _neighbours(skel, r, c):
    return int(skel[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2].sum()) - 1


def test_rectangle_thins_to_path():
    m = np.zeros((9, 26), dtype=bool)
    m[2:7, 3:23] = True
    skel = skeletonize(m)
    rows, cols = np.nonzero(skel)
    assert 16 <= rows.size <= 20
    # width one: no 2x2 block fully set
    quads = skel[:-1, :-1] & skel[1:, :-1] & skel[:-1, 1:] & skel[1:, 1:]
    assert not quads.any()
    ends = sum(_neighbours(skel, r, c) == 1 for r, c in zip(rows, cols))
    assert ends == 2
    assert len(extract_components(np.where(skel, 1, BG), 1, min_area=1)) == 1


@pytest.mark.parametrize("n", [2, 3, 11, 57, 200])
def test_axis_line_length(n):
    m = np.zeros((3, n + 2), dtype=bool)
    m[1, 1 : n + 1] = True
    assert skeleton_length(m) == n - 1
    assert skeleton_length(m.T) == n - 1


def test_diagonal_length():
    m = np.eye(11, dtype=bool)
    assert skeleton_length(m) == pytest.approx(10 * math.sqrt(2), abs=1e-9)


def test_y_shape_length_matches_bruteforce():
    m = np.zeros((30, 30), dtype=bool)
    m[15, 5:26] = True  # two collinear arms of 10 around the junction at (15, 15)
    m[11:15, 15] = True  # third arm of 4
    coords = list(zip(*np.nonzero(m)))
    oracle = tree_diameter_bruteforce(coords)
    assert oracle == pytest.approx(20.0)
    assert floyd_warshall_diameter(m) == pytest.approx(oracle, abs=1e-12)
    assert double_sweep_diameter(m) == pytest.approx(oracle, abs=1e-12)


def test_single_pixel_and_empty_length():
    assert skeleton_length(np.zeros((3, 3), dtype=bool)) == 0.0
    m = np.zeros((3, 3), dtype=bool)
    m[1, 1] = True
    assert skeleton_length(m) == 0.0


def test_random_trees_cross_oracle(rng):
    for _ in range(15):
        skel = random_tree_skeleton(rng, int(rng.integers(5, 40)), size=24)
        fw = floyd_warshall_diameter(skel)
        assert fw == double_sweep_diameter(skel)
        assert fw == pytest.approx(tree_diameter_bruteforce(list(zip(*np.nonzero(skel)))), abs=1e-9)


# ------------------------------------------------------------------- flares


GEOM = DiskGeometry(500.0, 500.0, 400.0)


def test_importance_examples():
    assert importance_class(3.0) == "1"
    assert importance_class(1.0) == "S"
    assert importance_class(8.0) == "2"
    assert importance_class(20.0) == "3"
    assert importance_class(30.0) == "4"


@given(st.floats(0, 100), st.floats(0, 100))
def test_importance_monotone(a, b):
    lo, hi = sorted((a, b))
    assert importance_rank(importance_class(lo)) <= importance_rank(importance_class(hi))


def test_foreshortening_doubles_area_at_sixty_degrees():
    centre = corrected_area_msh(100, GEOM, 500.0, 500.0)
    rho = math.sin(math.radians(60))
    off = corrected_area_msh(100, GEOM, 500.0 + rho * 400.0, 500.0)
    assert off == pytest.approx(2 * centre, rel=1e-12)
    assert centre == pytest.approx(100e6 / (2 * math.pi * 400.0**2))


def flare_track(areas, xy=(500.0, 500.0), intens=None, start=0):
    tr = EventTrack(1, Label.FLARE)
    for k, a in enumerate(areas):
        i = start + k
        tr.observations.append(
            Observation(i, T0 + timedelta(seconds=30 * i), a, xy, GEOM.radial_of(*xy),
                        mean_intensity=None if intens is None else intens[k], rel_intensity=1.2)
        )
    return tr


def test_classify_flare_disk_centre():
    # 3.0 sq deg at disk centre, expressed in pixels
    px = 3.0 * 48.5 * 2 * math.pi * 400.0**2 / 1e6
    tr = flare_track([px / 3, px, px / 2], intens=[1.0, 1.5, 2.0], start=4)
    rep = classify_flare(tr, GEOM)
    assert rep.importance == "1"
    assert rep.start == T0 + timedelta(seconds=120)
    assert rep.end == T0 + timedelta(seconds=180)
    assert rep.peak == rep.end  # brightest frame, not the largest
    assert rep.lat_deg == pytest.approx(0.0, abs=1e-9)
    assert rep.area_msh == pytest.approx(3.0 * 48.5)


def test_classify_flare_off_disk_raises():
    tr = flare_track([50], xy=(950.0, 500.0), intens=[1.0])
    with pytest.raises(OffDiskCentroid):
        classify_flare(tr, GEOM)


def test_flare_report_ordering_and_record_round_trip():
    with pytest.raises(ValueError):
        FlareReport(1, T0 + timedelta(seconds=60), T0, T0 + timedelta(seconds=90), "1")
    rep = FlareReport(3, T0, T0 + timedelta(seconds=60), T0 + timedelta(seconds=90), "2", 10.5, -3.25, 400.0)
    rec = rep.to_record()
    assert rec["type"] == "flare" and "rel_intensity" not in rec and None not in rec.values()
    assert rec["start"].endswith("Z")
    assert report_from_record(rec) == rep
    er = EruptionReport(4, T0, T0, 1.0, 2.0, 55.0)
    back = report_from_record(er.to_record())
    assert isinstance(back, EruptionReport) and back.id == 4 and back.length_px == 55.0


# ----------------------------------------------------------------- eruptions


def filament_track(n_frames, cadence=60.0, radial=0.4, tid=1):
    x = 500.0 + radial * 400.0
    tr = EventTrack(tid, Label.FILAMENT)
    for i in range(n_frames):
        tr.observations.append(
            Observation(i, T0 + timedelta(seconds=cadence * i), 200, (x, 500.0), radial, lat_deg=0.0,
                        lon_deg=20.0, length_px=80.0)
        )
    return tr


def test_eruption_after_fifteen_minutes():
    tr = filament_track(121)  # two hours at one-minute cadence
    now = tr.last_seen + timedelta(minutes=15)
    reps = detect_eruptions([tr], now)
    assert len(reps) == 1 and tr.status == "erupted"
    assert (reps[0].disappearance - reps[0].last_seen).total_seconds() >= 900
    assert reps[0].length_px == 80.0
    # a track reports at most once
    assert detect_eruptions([tr], now + timedelta(hours=1)) == []


def test_no_eruption_after_ten_minutes():
    tr = filament_track(121)
    assert detect_eruptions([tr], tr.last_seen + timedelta(minutes=10)) == []
    assert tr.status == "active"


def test_limb_filament_ends_without_report():
    tr = filament_track(121, radial=0.97)
    assert detect_eruptions([tr], tr.last_seen + timedelta(minutes=15)) == []
    assert tr.status == "ended"
    tr2 = filament_track(121, radial=0.97)
    assert len(detect_eruptions([tr2], tr2.last_seen + timedelta(minutes=15), limb_radial=None)) == 1


def test_short_lived_filament_not_reported():
    tr = filament_track(2)
    assert detect_eruptions([tr], tr.last_seen + timedelta(minutes=20)) == []
    assert tr.status == "ended"


# ------------------------------------------------------------------- tracker


def test_tracker_flare_and_eruption_sequence():
    shape = (128, 128)
    geom = DiskGeometry(64.0, 64.0, 60.0)
    yy, xx = np.indices(shape)
    img = np.where(np.hypot(xx - 64, yy - 64) < 60, 1.0, 0.0)
    tracker = EventTracker(EventsConfig(min_report_importance="S"))
    out = {}
    for i in range(30):
        lab = blank(shape)
        if 2 <= i <= 6:
            lab[60:68, 40:48] = Label.FLARE
        if i <= 9:
            lab[30:33, 50:90] = Label.FILAMENT
        ts = T0 + timedelta(seconds=60 * i)
        data = img.copy()
        data[60:68, 40:48] += 0.5 if 2 <= i <= 6 else 0.0
        out[i] = tracker.update(LabelMap(lab, ts, i), frame(data, i, ts), geom)
    out[30] = tracker.finish()
    emitted = [(i, r) for i, reps in out.items() for r in reps]
    flares = [(i, r) for i, r in emitted if isinstance(r, FlareReport)]
    erupts = [(i, r) for i, r in emitted if isinstance(r, EruptionReport)]
    assert len(flares) == 1 and len(erupts) == 1
    i, fr = flares[0]
    assert i == 6 + 5  # out of the five-frame vote window
    assert fr.start == T0 + timedelta(seconds=120) and fr.end == T0 + timedelta(seconds=360)
    on_disk = img > 0
    disk_mean = (on_disk.sum() + 64 * 0.5) / on_disk.sum()
    assert fr.rel_intensity == pytest.approx(1.5 / disk_mean, rel=1e-9)
    assert fr.peak == fr.start  # equal brightness; the first brightest frame wins
    j, er = erupts[0]
    assert j == 9 + 15
    assert er.last_seen == T0 + timedelta(seconds=540)
    assert er.length_px == pytest.approx(39.0, abs=2.0)
    assert fr.id != er.id
