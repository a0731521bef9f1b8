"""Deterministic SVG product cards.

Stands in for catalog photography: the background hue encodes the color
attribute, the glyph shape encodes the category, and an overlay encodes the
pattern.  Identical products always render to identical bytes, and products
differing only in color differ only in fill attributes.
"""

from __future__ import annotations

import hashlib
from xml.sax.saxutils import escape

from .catalog import Product

_KNOWN_HUES = {
    "red": 0, "maroon": 345, "peach": 28, "olive": 80, "green": 120,
    "navy": 230, "blue": 220, "sky blue": 200, "violet": 275,
    "black": 0, "white": 0, "beige": 35,
}
_KNOWN_LIGHT = {"black": (10, 25), "white": (92, 97)}

_GLYPHS = (
    "M30,120 L75,60 L120,70 L165,120 Z",                     # wedge
    "M30,115 C55,70 145,70 170,115 L30,115 Z",               # arch
    "M35,120 L35,75 L100,60 L165,75 L165,120 Z",             # block
    "M30,110 Q100,40 170,110 Q100,135 30,110 Z",             # lens
    "M40,120 L60,65 L140,65 L160,120 Z",                     # trapeze
    "M30,100 L70,60 L130,60 L170,100 L130,125 L70,125 Z",    # hex
)

_PATTERNS = ("none", "stripes", "dots", "checks")


def _bucket(token: str, n: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little") % n


def _color_fills(color: str | None) -> tuple[str, str]:
    """(background fill, glyph fill) for a color token."""
    if color is None:
        return "hsl(0,0%,88%)", "hsl(0,0%,45%)"
    hue = _KNOWN_HUES.get(color, _bucket(color, 360))
    sat = 0 if color in ("black", "white") else 65
    bg_l, fg_l = _KNOWN_LIGHT.get(color, (86, 42))
    return f"hsl({hue},{sat}%,{bg_l}%)", f"hsl({hue},{sat}%,{fg_l}%)"


def _pattern_overlay(pattern: str | None) -> str:
    kind = "none" if pattern is None else _PATTERNS[_bucket(pattern, len(_PATTERNS) - 1) + 1]
    if kind == "stripes":
        lines = "".join(
            f'<line x1="{x}" y1="30" x2="{x - 20}" y2="140" stroke="rgba(255,255,255,0.45)" stroke-width="4"/>'
            for x in range(40, 200, 28)
        )
        return f"<g>{lines}</g>"
    if kind == "dots":
        dots = "".join(
            f'<circle cx="{x}" cy="{y}" r="4" fill="rgba(255,255,255,0.5)"/>'
            for y in range(48, 130, 26) for x in range(44, 170, 30)
        )
        return f"<g>{dots}</g>"
    if kind == "checks":
        cells = "".join(
            f'<rect x="{x}" y="{y}" width="14" height="14" fill="rgba(255,255,255,0.35)"/>'
            for y in range(40, 130, 28) for x in range(36, 170, 28)
        )
        return f"<g>{cells}</g>"
    return ""


def render_product_svg(product: Product) -> str:
    """Render one product to a standalone 200x200 SVG document."""
    color = product.attrs.get("color")
    pattern = product.attrs.get("pattern")
    bg, fg = _color_fills(color)
    glyph = _GLYPHS[_bucket(product.category, len(_GLYPHS))]

    # caption lists everything except the color word, which the card shows
    caption_attrs = [v for a, v in sorted(product.attrs.items()) if a != "color"]
    line1 = escape(f"{product.id} · {product.gender} {product.category}")
    line2 = escape(" · ".join(caption_attrs[:3]))

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" width="200" height="200" viewBox="0 0 200 200">',
        f'<rect x="0" y="0" width="200" height="200" fill="{bg}"/>',
        f'<path d="{glyph}" fill="{fg}"/>',
        _pattern_overlay(pattern),
        f'<rect x="0" y="150" width="200" height="50" fill="rgba(255,255,255,0.85)"/>',
        f'<text x="100" y="168" text-anchor="middle" font-family="sans-serif" font-size="11">{line1}</text>',
        f'<text x="100" y="184" text-anchor="middle" font-family="sans-serif" font-size="9">{line2}</text>',
        "</svg>",
    ]
    return "".join(p for p in parts if p)
