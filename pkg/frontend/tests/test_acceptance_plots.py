"""Secondary acceptance: render the concentration and decay figures from real
CLI outputs, with reference lines and slope annotation, byte-stable across runs."""

from hessplots import formats
from hessplots.figures import FigureSpec, LIMIT_COLOR, MEAN_COLOR, render


def _render_twice(spec_a, spec_b):
    pa = render(spec_a)
    pb = render(spec_b)
    for x, y in zip(pa, pb):
        assert open(x, "rb").read() == open(y, "rb").read()
    return pa


def test_c11_plotting(tmp_path, concentration_files, decay_files):
    conc_paths = _render_twice(
        FigureSpec(kind="concentration", inputs=concentration_files,
                   output=str(tmp_path / "conc_a")),
        FigureSpec(kind="concentration", inputs=concentration_files,
                   output=str(tmp_path / "conc_b")),
    )
    svg = open(conc_paths[1]).read()
    assert MEAN_COLOR in svg and LIMIT_COLOR in svg  # mean curve + limit line drawn

    decay_paths = _render_twice(
        FigureSpec(kind="decay", inputs=decay_files, output=str(tmp_path / "dec_a")),
        FigureSpec(kind="decay", inputs=decay_files, output=str(tmp_path / "dec_b")),
    )
    fit = formats.read_json(decay_files["fit"])
    svg = open(decay_paths[1]).read()
    assert f"{fit['slope']:.3f}" in svg
    print("\nACCEPTANCE 11 PASS: concentration and decay figures rendered with "
          "reference lines and slope annotation, byte-stable across two runs "
          "(PNG and SVG)")
