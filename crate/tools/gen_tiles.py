#!/usr/bin/env python3
"""Regenerates crates/core/data/{catalog.txt,examples/*.txt} from the sketches below.

Sketch legend (one char per cell):
  .  empty           ,  lawn        g  garden
  t  tree            T  grove
  s  street          p  parking
  m  unit middle     e  unit end (wall on the row end that faces outside)
  >  <  ^  v         unit divider, arrow points at the divider edge
  c  unit inner corner (corridor on two sides)
  -  |  corridor straight        +  corridor corner
  K  core (attached to the neighbouring corridor)
"""

import os

DIRS = "NESW"
DELTA = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}

# (category, variant, symmetry, name)
PROTOTYPES = [
    ("Livable", 0, "T", "unit-middle"),
    ("Livable", 1, "F", "unit-end"),
    ("Livable", 2, "F", "unit-divider"),
    ("Livable", 3, "L", "unit-corner"),
    ("Corridor", 0, "I", "corridor"),
    ("Corridor", 1, "L", "corridor-corner"),
    ("Core", 0, "T", "core"),
    ("Tree", 0, "X", "tree"),
    ("Tree", 1, "X", "grove"),
    ("Lawn", 0, "X", "lawn"),
    ("Lawn", 1, "X", "garden"),
    ("Street", 0, "X", "street"),
    ("Street", 1, "X", "parking"),
    ("Empty", 0, "X", "empty"),
]


def canonical(sym, o, r):
    if sym == "X":
        return 0, False
    if sym == "I":
        return o % 180, False
    if sym == "T":
        return o, False
    if sym == "L":
        return ((o + 270) % 360, False) if r else (o, False)
    return o, r


def world(local, o, r):
    i = DIRS.index(local)
    if r and local in "EW":
        i = DIRS.index("W" if local == "E" else "E")
    return DIRS[(i + o // 90) % 4]


def build_catalog():
    tiles = []
    for cat, var, sym, name in PROTOTYPES:
        seen = []
        for o in (0, 90, 180, 270):
            for r in (False, True):
                c = canonical(sym, o, r)
                if c not in seen:
                    seen.append(c)
        for o, r in seen:
            tiles.append(dict(id=len(tiles), cat=cat, o=o, r=r, var=var, sym=sym, name=name))
    return tiles


def find(tiles, cat, var, o, r):
    sym = next(t["sym"] for t in tiles if t["cat"] == cat and t["var"] == var)
    o, r = canonical(sym, o, r)
    for t in tiles:
        if (t["cat"], t["var"], t["o"], t["r"]) == (cat, var, o, r):
            return t["id"]
    raise KeyError((cat, var, o, r))


def solve_orientation(requirements):
    """requirements: list of (local_dir, world_dir); returns first (o, r) satisfying all."""
    for o in (0, 90, 180, 270):
        for r in (False, True):
            if all(world(l, o, r) == w for l, w in requirements):
                return o, r
    raise ValueError(requirements)


SIMPLE = {
    ".": ("Empty", 0),
    ",": ("Lawn", 0),
    "g": ("Lawn", 1),
    "t": ("Tree", 0),
    "T": ("Tree", 1),
    "s": ("Street", 0),
    "p": ("Street", 1),
}
LIVABLE = set("me><^vc")
CORRIDOR = set("-|+")
ARROW = {">": "E", "<": "W", "^": "N", "v": "S"}


def convert(tiles, sketch):
    rows = [list(line) for line in sketch.strip("\n").split("\n")]
    h, w = len(rows), len(rows[0])
    assert all(len(r) == w for r in rows), sketch

    def at(r, c, d):
        dr, dc = DELTA[d]
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w:
            return rows[rr][cc]
        return " "

    out = []
    for r in range(h):
        line = []
        for c in range(w):
            ch = rows[r][c]
            if ch in SIMPLE:
                cat, var = SIMPLE[ch]
                line.append(find(tiles, cat, var, 0, False))
                continue
            doors = [d for d in DIRS if at(r, c, d) in CORRIDOR or at(r, c, d) == "K"]
            if ch == "K":
                corr = [d for d in DIRS if at(r, c, d) in CORRIDOR]
                assert len(corr) == 1, (r, c, sketch)
                o, rf = solve_orientation([("S", corr[0])])
                line.append(find(tiles, "Core", 0, o, rf))
            elif ch in "-|":
                o = 0 if ch == "-" else 90
                line.append(find(tiles, "Corridor", 0, o, False))
            elif ch == "+":
                conn = [d for d in DIRS if at(r, c, d) in CORRIDOR or at(r, c, d) == "K"]
                assert len(conn) == 2, (r, c)
                o, rf = solve_orientation([("N", conn[0]), ("E", conn[1])] if DIRS.index(conn[1]) - DIRS.index(conn[0]) == 1
                                          else [("N", conn[1]), ("E", conn[0])])
                line.append(find(tiles, "Corridor", 1, o, rf))
            elif ch == "c":
                assert len(doors) == 2, (r, c)
                a, b = doors
                o, rf = solve_orientation([("N", a), ("E", b)] if DIRS.index(b) - DIRS.index(a) == 1
                                          else [("N", b), ("E", a)])
                line.append(find(tiles, "Livable", 3, o, rf))
            else:
                assert len(doors) == 1, (r, c, ch, sketch)
                door = doors[0]
                if ch == "m":
                    o, rf = solve_orientation([("S", door)])
                    line.append(find(tiles, "Livable", 0, o, rf))
                elif ch == "e":
                    axis = [d for d in DIRS if d != door and DIRS.index(d) % 2 != DIRS.index(door) % 2]
                    outside = [d for d in axis if at(r, c, d) not in LIVABLE]
                    assert len(outside) >= 1, (r, c, sketch)
                    o, rf = solve_orientation([("S", door), ("E", outside[0])])
                    line.append(find(tiles, "Livable", 1, o, rf))
                else:
                    o, rf = solve_orientation([("S", door), ("E", ARROW[ch])])
                    line.append(find(tiles, "Livable", 2, o, rf))
        out.append(line)
    return out


EXAMPLES = {
    "twin-bars": """
,,t,,g,,t,,,,s
,..,,,..,t,..s
t.em>me.,,...s
,.K---K.t,..ps
,.emm>e.,,...s
g,,,t,,......s
,..em>m>e.,t,s
,..K----K.,,.s
,..e>mmme...ps
ssssssssssssss
""",
    "l-court": """
,,,t,,,g,,,,,s
,.em>mme.,t..s
t.K----+e.,,.s
,.emm>c|m.T,.s
g.....m|v.t,.s
,.tt..v|m.,..s
,.Tt..m|m..,ps
,.....eKe,...s
,,..g.......ps
ssssssssssssss
""",
    "garden-block": """
,,t,T,,g,,t,,s
,,ttT,,gg.eKes
t,tT,,,,,.m|vs
,,,,,t,,..v|ms
T,.emm>me.m|^s
,,.K----K.m|ms
g,.e>mmme.^|ms
,,T.......eKes
,,g,,,..pp,,.s
ssssssssssssss
""",
    "row-houses": """
,,,,,,,t,,,,,s
t.e>m>m>mme..s
,.K-------K.ps
,.em>m>m>me..s
,...,,t,,...,s
T.e>me.em>me.s
,.K--K.K---K.s
g.emme.e>mme.s
,.......pp...s
ssssssssssssss
""",
    "tower-park": """
,,t,,,g,,,t,,s
,eKe.,,tT,,..s
,m|v.tTTt,,,.s
,^|m.,tTt,...s
,m|m.,,,t,eKes
,v|m..g,,,m|ms
,m|^.,,,,,m|ms
,eKe...pp.v|^s
,.....,pp.eKes
ssssssssssssss
""",
}


def main():
    root = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "data")
    os.makedirs(os.path.join(root, "examples"), exist_ok=True)
    tiles = build_catalog()
    with open(os.path.join(root, "catalog.txt"), "w") as f:
        f.write("# qdtile-catalog v1\n")
        f.write("# id category orientation reflected variant symmetry name\n")
        for t in tiles:
            f.write(f"{t['id']} {t['cat']} {t['o']} {int(t['r'])} {t['var']} {t['sym']} {t['name']}\n")
    for name, sketch in EXAMPLES.items():
        grid = convert(tiles, sketch)
        with open(os.path.join(root, "examples", f"{name}.txt"), "w") as f:
            f.write(f"# qdtile-example v1 {name}\n")
            for row in grid:
                f.write(" ".join(str(x) for x in row) + "\n")
    print(f"{len(tiles)} tiles, {len(EXAMPLES)} examples")


if __name__ == "__main__":
    main()
