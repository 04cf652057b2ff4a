import numpy as np

from looaudit.data import full_plan
from looaudit.metrics import audit_deterministic
from looaudit.render import (
    confidence_plot_svg,
    diverging_rgb,
    emit_plots,
    histogram_svg,
    ppm_bytes,
    probability_rgb,
    read_ppm,
    write_ppm,
)
from looaudit.rules import LearningRule, table_dataset


def _report():
    ds = table_dataset()
    return audit_deterministic(LearningRule("table-rule"), ds, full_plan(ds))


def test_svgs_are_byte_stable_and_labelled():
    rep = _report()
    a = confidence_plot_svg(rep.confidence_curve)
    assert a == confidence_plot_svg(_report().confidence_curve)
    assert "E_x[LUF(h,S,x)] (%)" in a and a.startswith("<?xml")
    h = histogram_svg(rep.flip_histogram)
    assert "% Points Flipped" in h and h.count("<rect") >= 3


def test_emit_plots_skips_empty_report(tmp_path):
    assert emit_plots(None, tmp_path) == []
    paths = emit_plots(_report(), tmp_path)
    assert [p.name for p in paths] == ["confidence_curve.svg", "flip_histogram.svg"]


def test_diverging_map_endpoints():
    rgb = diverging_rgb(np.array([[-1.0, 0.0, 1.0]]))
    assert rgb[0, 1].tolist() == [255, 255, 255]
    assert rgb[0, 0, 2] > rgb[0, 0, 0]
    assert rgb[0, 2, 0] > rgb[0, 2, 2]
    assert probability_rgb(np.array([[0.5]]))[0, 0].tolist() == [255, 255, 255]


def test_ppm_round_trip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
    p = write_ppm(tmp_path / "x.ppm", rgb)
    assert p.read_bytes().startswith(b"P6\n7 5\n255\n")
    assert np.array_equal(read_ppm(p), rgb)
    assert len(ppm_bytes(rgb)) == len(b"P6\n7 5\n255\n") + 105
