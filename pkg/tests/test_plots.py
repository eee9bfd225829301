import json
import re
import xml.etree.ElementTree as ET

from etairl.plots import bar_plot_svg, line_plot_svg


def embedded_data(svg):
    return json.loads(re.search(r"<!-- data: (.*) -->", svg).group(1))


def test_line_plot_embeds_series():
    svg = line_plot_svg({"run <a>": ([0, 1, 2], [3.0, 2.0, float("nan")])}, "title & co", "x", "y")
    ET.fromstring(svg)
    data = embedded_data(svg)
    assert data["run <a>"]["x"] == [0.0, 1.0, 2.0]
    assert svg.count("<polyline") == 1


def test_bar_plot_embeds_values():
    svg = bar_plot_svg({"a": 1.0, "b": 0.5}, "bars", "MMD")
    ET.fromstring(svg)
    assert embedded_data(svg) == {"a": 1.0, "b": 0.5}
    assert svg.count("<rect") == 3  # background plus two bars


def test_empty_inputs_still_render():
    ET.fromstring(line_plot_svg({}))
    ET.fromstring(bar_plot_svg({}))
