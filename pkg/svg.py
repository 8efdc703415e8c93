"""
svg.py

Minimal string-building SVG 1.1 writer. Coordinates are printed with a fixed
number of decimals so identical input gives byte-identical documents.
"""

from typing import Dict, Iterable, Optional, Tuple
from xml.sax.saxutils import escape, quoteattr


def _num(value: float) -> str:
    text = f"{value:.2f}"
    return "0.00" if text == "-0.00" else text


def _attrs(attr: Optional[Dict[str, str]]) -> str:
    if not attr:
        return ""
    return "".join(f" {key}={quoteattr(str(value))}" for key, value in attr.items())


class SVG:
    def __init__(self):
        self.svg = ""

    def header(self, width: int, height: int):
        self.svg += f"""<?xml version="1.0" standalone="no"?>
<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN" "http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd">
<svg version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" xmlns="http://www.w3.org/2000/svg">
<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>
"""

    def group_start(self, attr: Optional[Dict[str, str]] = None, title: Optional[str] = None):
        self.svg += f"<g{_attrs(attr)}>\n"
        if title:
            self.svg += f"<title>{escape(title)}</title>\n"

    def group_end(self):
        self.svg += "</g>\n"

    def filled_rectangle(self, x1: float, y1: float, x2: float, y2: float, fill: str, extra: Optional[Dict[str, str]] = None):
        self.svg += (
            f'<rect x="{_num(x1)}" y="{_num(y1)}" width="{_num(x2 - x1)}" height="{_num(y2 - y1)}" '
            f'fill="{fill}"{_attrs(extra)}/>\n'
        )

    def line(self, x1: float, y1: float, x2: float, y2: float, stroke: str, extra: Optional[Dict[str, str]] = None):
        self.svg += (
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
            f'stroke="{stroke}"{_attrs(extra)}/>\n'
        )

    def polyline(self, points: Iterable[Tuple[float, float]], stroke: str, extra: Optional[Dict[str, str]] = None):
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in points)
        self.svg += f'<polyline points="{coords}" fill="none" stroke="{stroke}"{_attrs(extra)}/>\n'

    def polygon(self, points: Iterable[Tuple[float, float]], fill: str, extra: Optional[Dict[str, str]] = None):
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in points)
        self.svg += f'<polygon points="{coords}" fill="{fill}"{_attrs(extra)}/>\n'

    def circle(self, x: float, y: float, r: float, fill: str):
        self.svg += f'<circle cx="{_num(x)}" cy="{_num(y)}" r="{_num(r)}" fill="{fill}"/>\n'

    def string_ttf(self, x: float, y: float, string: str, extra: Optional[Dict[str, str]] = None):
        self.svg += f'<text x="{_num(x)}" y="{_num(y)}"{_attrs(extra)}>{escape(string)}</text>\n'

    def get_svg(self) -> str:
        return f"{self.svg}</svg>\n"
