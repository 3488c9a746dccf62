#!/usr/bin/env python3
"""Regenerate core/src/casefold_table.inc from Python's str.casefold().

Each entry maps one codepoint to its full case folding (up to three
codepoints). Codepoints that fold to themselves are omitted.

    python3 tools/gen_casefold_table.py > core/src/casefold_table.inc
"""
import sys
import unicodedata


def main() -> None:
    rows = []
    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        ch = chr(cp)
        folded = ch.casefold()
        if folded == ch:
            continue
        if len(folded) > 3:
            sys.exit(f"fold of U+{cp:04X} longer than 3 codepoints")
        cps = [ord(c) for c in folded] + [0] * (3 - len(folded))
        rows.append((cp, len(folded), cps))

    out = sys.stdout
    out.write("// Generated by tools/gen_casefold_table.py; do not edit.\n")
    out.write(f"// Unicode {unicodedata.unidata_version}, {len(rows)} entries.\n")
    for cp, n, cps in rows:
        out.write(f"{{0x{cp:05X}, {n}, {{0x{cps[0]:05X}, 0x{cps[1]:05X}, 0x{cps[2]:05X}}}}},\n")


if __name__ == "__main__":
    main()
