#!/usr/bin/env python3
"""Regenerates include/glyphclass/detail/presentation_forms.inc.

Each row maps a base Arabic letter to its isolated, final, initial and medial
presentation-form code points (0 when the form does not exist), derived from
the <isolated>/<final>/<initial>/<medial> compatibility decompositions.
Presentation Forms-B entries take precedence over Forms-A.
"""
import sys
import unicodedata

ORDER = ("isolated", "final", "initial", "medial")


def main() -> None:
    forms: dict[int, dict[str, int]] = {}
    ranges = list(range(0xFE70, 0xFF00)) + list(range(0xFB50, 0xFE00))
    for cp in ranges:
        decomposition = unicodedata.decomposition(chr(cp))
        if not decomposition.startswith("<"):
            continue
        tag, *rest = decomposition.split()
        if len(rest) != 1:
            continue
        base = int(rest[0], 16)
        if unicodedata.category(chr(base)) != "Lo":
            continue
        forms.setdefault(base, {}).setdefault(tag.strip("<>"), cp)

    out = sys.stdout
    out.write(f"// Generated by tools/gen_presentation_forms.py (Unicode {unicodedata.unidata_version}).\n")
    out.write("// base, isolated, final, initial, medial\n")
    for base in sorted(forms):
        row = ", ".join(f"0x{forms[base].get(name, 0):04X}" for name in ORDER)
        out.write(f"{{0x{base:04X}, {row}}},\n")


if __name__ == "__main__":
    main()
