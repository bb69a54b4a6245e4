#!/usr/bin/env python3
"""Render Arabic glyph bitmaps for `glyphclass build-atlas`.

Writes one raw 36x36 8-bit file per glyph into OUT_DIR plus OUT_DIR/manifest.tsv
mapping `hex+hex` keys to file names. Keys are the positional presentation form
of a letter, optionally followed by combining marks, which is what the
classifier looks up for each shaped character cluster.

    render_glyphs.py --font /path/to/arabic.ttf --out-dir glyphs [--marks]
"""

import argparse
import pathlib
import unicodedata

from PIL import Image, ImageDraw, ImageFont

SIZE = 36

# Harakat and related marks that appear on top of letters in running text.
MARKS = [0x064B, 0x064C, 0x064D, 0x064E, 0x064F, 0x0650, 0x0651, 0x0652, 0x0670]


def presentation_forms():
    out = []
    for cp in list(range(0xFB50, 0xFBB2)) + list(range(0xFE70, 0xFEFD)):
        if unicodedata.name(chr(cp), "").startswith("ARABIC"):
            out.append(cp)
    return out


def plain_characters():
    cps = list(range(0x0621, 0x064B)) + list(range(0x0660, 0x066A)) + [0x060C, 0x061B, 0x061F]
    cps += list(range(0x20, 0x7F))
    return [cp for cp in cps if unicodedata.category(chr(cp)) != "Cc"]


def render(text, font):
    image = Image.new("L", (SIZE, SIZE), 0)
    draw = ImageDraw.Draw(image)
    left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
    x = (SIZE - (right - left)) / 2 - left
    y = (SIZE - (bottom - top)) / 2 - top
    draw.text((x, y), text, fill=255, font=font)
    return image.tobytes()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--font", required=True, help="TrueType font covering Arabic presentation forms")
    parser.add_argument("--out-dir", required=True, type=pathlib.Path)
    parser.add_argument("--point-size", type=int, default=24)
    parser.add_argument("--marks", action="store_true", help="also render every letter form with each single mark")
    args = parser.parse_args()

    font = ImageFont.truetype(args.font, args.point_size)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    keys = [[cp] for cp in presentation_forms() + plain_characters()]
    if args.marks:
        keys += [[cp, mark] for cp in presentation_forms() for mark in MARKS]

    lines = []
    for key in keys:
        name = "+".join(f"{cp:04X}" for cp in key)
        (args.out_dir / f"{name}.raw").write_bytes(render("".join(map(chr, key)), font))
        lines.append(f"{name}\t{name}.raw")
    (args.out_dir / "FALLBACK.raw").write_bytes(render("□", font))
    lines.append("FALLBACK\tFALLBACK.raw")
    (args.out_dir / "manifest.tsv").write_text("\n".join(lines) + "\n")
    print(f"{len(keys)} glyphs written to {args.out_dir}")


if __name__ == "__main__":
    main()
