import xml.etree.ElementTree as ET

import numpy as np
import pytest
from conftest import tiny_truth
from hypothesis import given, settings
from hypothesis import strategies as st

from stamp import report
from stamp import shotgrid as sg
from stamp.errors import ComponentMissing
from stamp.inference import fit
from stamp.lgm.config import MINIMAL
from stamp.synth import realize

SVG = "{http://www.w3.org/2000/svg}"

# -- percentiles ---------------------------------------------------------------------------------------


def test_midrank_percentiles_examples():
    np.testing.assert_allclose(report.midrank_percentiles([3.0, 1.0, 2.0, 4.0]), [62.5, 12.5, 37.5, 87.5])
    np.testing.assert_allclose(report.midrank_percentiles([1.0] * 7), 50.0)
    np.testing.assert_allclose(report.midrank_percentiles([1.0, 2.0, 10.0, 20.0], groups=[0, 0, 1, 1]),
                               [25.0, 75.0, 25.0, 75.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=40))
def test_midrank_percentiles_properties(values):
    p = report.midrank_percentiles(values)
    n = len(values)
    assert np.all((p > 0) & (p < 100))
    # midranks sum to n(n+1)/2, so the percentiles average 50
    assert abs(p.mean() - 50.0) < 1e-9
    v = np.array(values)
    for a, b in zip(*np.nonzero(v[:, None] < v[None, :])):
        assert p[a] < p[b]
    assert n == len(p)


def test_percentile_labels_and_ramp():
    assert report.percentile_label(50.0) == "p50"
    assert report.percentile_label(6.5) == "p07"
    assert report.percentile_label(2.49) == "p02"
    assert report.percentile_label(97.5) == "p98"
    assert [report.ramp_bin(p) for p in (0.0, 12.49, 12.5, 50.0, 87.5, 99.9, 100.0)] == [0, 0, 1, 4, 7, 7, 7]
    assert report.ramp_color(1.0) == report.RAMP[0] and len(report.RAMP) == 8


# -- maps on a fitted league --------------------------------------------------------------------------


def test_percentile_map_matches_manual_ranking(small_fit):
    m = report.percentile_map(small_fit, 1, 0, "jump_shot")
    assert len(m.cells) == sg.N_AD and m.side_scaling
    w = small_fit.block_samples("w")
    r = small_fit.block_samples("r_jump")
    z = small_fit.block_samples("z")
    for j, (a, d) in enumerate(sg.VALID_AD):
        rates = np.exp(w[:, :, a, 0] + r[:, :, a, 0] + z[:, :, d, 0]).mean(axis=0)
        pct = report.midrank_percentiles(rates)
        cell = m.as_dict()[(a, d)]
        assert abs(cell.rate - rates[1]) < 1e-12 * rates[1]
        assert cell.percentile == pct[1]
    # without side scaling every side of an area has the same rate
    flat = report.percentile_map(small_fit, 1, 0, "jump_shot", side_scaling=False).as_dict()
    for (a, d), cell in flat.items():
        assert cell.rate == flat[(a, next(dd for aa, dd in sg.VALID_AD if aa == a))].rate


def test_percentile_maps_per_cell_average_fifty(small_fit):
    I = small_fit.index.n_teams
    _, pct = report.league_percentiles(small_fit, 1, "lay_up")
    assert pct.shape == (I, sg.N_AD)
    np.testing.assert_allclose(pct.mean(axis=0), 50.0)
    assert np.all((pct >= 100 / (2 * I)) & (pct <= 100 - 100 / (2 * I)))


def test_maps_csv(small_fit):
    maps = [report.percentile_map(small_fit, i, 0, "floater") for i in range(2)]
    lines = report.maps_to_csv(maps).splitlines()
    assert lines[0] == "team,season,shot_type,area,side,rate,percentile,label"
    assert len(lines) == 1 + 2 * sg.N_AD


def test_missing_components_raise():
    league = realize(tiny_truth(3, 1, scale=0.2), seed=0)
    f = fit(MINIMAL, league.regular, J=20, seed=0)
    with pytest.raises(ComponentMissing):
        report.percentile_map(f, 0, 0, "jump_shot")
    with pytest.raises(ComponentMissing):
        report.lr_bias(f)
    with pytest.raises(KeyError):
        report.percentile_map(f, "nobody", 0, "jump_shot")


# -- left/right bias ----------------------------------------------------------------------------------


def test_lr_bias_antisymmetric_under_side_swap(rng):
    z = rng.normal(size=(300, 4, 3, 2))
    teams = ["A", "B", "C", "D"]
    a = {r.team: r for r in report.lr_bias_from_samples(z, teams)}
    b = {r.team: r for r in report.lr_bias_from_samples(report.swap_sides(z), teams)}
    for t in teams:
        # exact, not approximate: the interval is built symmetrically from the draws
        assert a[t].point == -b[t].point and a[t].lower == -b[t].upper and a[t].upper == -b[t].lower
    np.testing.assert_array_equal(report.swap_sides(report.swap_sides(z)), z)


def test_lr_bias_on_fit(small_fit):
    rows = report.lr_bias(small_fit)
    assert len(rows) == small_fit.index.n_teams
    assert all(r.lower <= r.point <= r.upper for r in rows)
    assert [r.point for r in rows] == sorted(r.point for r in rows)
    z = small_fit.block_samples("z")
    diff = (z[:, :, report.summaries.RIGHT] - z[:, :, report.summaries.LEFT]).mean(axis=2).mean(axis=0)
    by_team = {r.team: r.point for r in rows}
    for i, t in enumerate(small_fit.index.teams):
        assert abs(by_team[str(t)] - diff[i]) < 1e-12
    csv_lines = report.lr_to_csv(rows).splitlines()
    assert csv_lines[0] == "team,log_ratio,lower,upper" and len(csv_lines) == 1 + len(rows)


# -- SVG ---------------------------------------------------------------------------------------------


def test_map_svg_is_well_formed_and_deterministic(small_fit):
    m = report.percentile_map(small_fit, 0, 1, "jump_shot")
    text = report.render_map_svg(m)
    assert text == report.render_map_svg(m)
    root = ET.fromstring(text.encode())
    assert root.tag == SVG + "svg"
    court = next(g for g in root.iter(SVG + "g") if g.get("id") == "court")
    tiles = court.findall(SVG + "rect")
    assert len(tiles) == 13
    names = {t.find(SVG + "title").text for t in tiles}
    assert names == set(sg.ZONE_NAMES[z] for z in range(1, 14))
    labels = [t.text for t in court.findall(SVG + "text")]
    assert all(lab.startswith("p") and len(lab) == 3 for lab in labels)
    fills = {t.get("fill") for t in tiles}
    assert fills <= set(report.RAMP)


def test_empty_map_renders_legend_only():
    root = ET.fromstring(report.render_map_svg(None).encode())
    assert not [g for g in root.iter(SVG + "g") if g.get("id") == "court"]
    assert any(g.get("id") == "legend" for g in root.iter(SVG + "g"))


def test_lr_svg_is_well_formed(small_fit):
    rows = report.lr_bias(small_fit)
    root = ET.fromstring(report.render_lr_svg(rows).encode())
    assert len(root.findall(SVG + "circle")) == len(rows)
    dashed = [ln for ln in root.findall(SVG + "line") if ln.get("stroke-dasharray")]
    assert len(dashed) == 1
    ET.fromstring(report.render_lr_svg([]).encode())
