#!/usr/bin/env python3
"""Draws the fixture glyphs and computes their golden outputs.

Independent re-implementation of the preprocessing and feature chain in
plain Python. Writes into crates/core/tests/fixtures/:

  <name>.pgm           grayscale input (P2, maxval 15)
  <name>.scaled.pgm    binarized, cropped, 100x100 (P5, ink 255)
  <name>.skeleton.pgm  thinned (P5, ink 255)
  <name>.k<k>.csv      header and one row of normalized gc features

Run from the repository root: python3 tools/golden.py
"""

import math
import os
import random

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures")
SIZE = 100
CELLS = [(3, 35.0), (4, 30.0), (5, 25.0)]


def seg_dist(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    L = dx * dx + dy * dy
    t = 0.0 if L == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / L))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def draw(w, h, polylines, width, seed):
    rnd = random.Random(seed)
    img = []
    for r in range(h):
        row = []
        for c in range(w):
            x, y = c + 0.5, r + 0.5
            d = min(
                seg_dist(x, y, *pl[i], *pl[i + 1]) for pl in polylines for i in range(len(pl) - 1)
            )
            if d <= width / 2:
                v = 15 - rnd.randrange(3)
            else:
                v = rnd.randrange(5)  # background clutter, below threshold 8
            row.append(v)
        img.append(row)
    return img


def ellipse(cx, cy, rx, ry, a0, a1, n):
    return [
        (cx + rx * math.cos(math.radians(a0 + (a1 - a0) * i / n)), cy - ry * math.sin(math.radians(a0 + (a1 - a0) * i / n)))
        for i in range(n + 1)
    ]


GLYPHS = {
    "ring": (37, 41, [ellipse(18.5, 20.5, 13, 15, 0, 360, 48)], 4.0),
    "zed": (30, 44, [[(4, 6), (26, 5), (5, 39), (27, 38)]], 3.5),
    "vee": (48, 40, [[(5, 4), (24, 35), (43, 6)]], 5.0),
    "hook": (33, 52, [[(22, 4), (22, 38)], ellipse(14, 38, 8, 9, 0, -180, 20)], 3.0),
    "cross": (45, 45, [[(6, 8), (39, 37)], [(38, 7), (8, 38)], [(22, 3), (22, 42)]], 3.0),
}


def binarize(img, maxval):
    t = (maxval + 1) // 2
    return [[1 if v >= t else 0 for v in row] for row in img]


def crop(b):
    rows = [r for r, row in enumerate(b) if any(row)]
    cols = [c for c in range(len(b[0])) if any(row[c] for row in b)]
    return [row[cols[0] : cols[-1] + 1] for row in b[rows[0] : rows[-1] + 1]]


def scale(b, tw, th):
    h, w = len(b), len(b[0])
    sx, sy = w / tw, h / th
    out = []
    for y in range(th):
        row = []
        for x in range(tw):
            c = math.floor(sx * x + 0.0 * y + 0.0 + 1e-9)
            r = math.floor(0.0 * x + sy * y + 0.0 + 1e-9)
            row.append(b[r][c] if 0 <= r < h and 0 <= c < w else 0)
        out.append(row)
    return out


def px(b, r, c):
    return b[r][c] if 0 <= r < len(b) and 0 <= c < len(b[0]) else 0


def ring(b, r, c):
    # P2..P9: N, NW, W, SW, S, SE, E, NE
    return [px(b, r - 1, c), px(b, r - 1, c - 1), px(b, r, c - 1), px(b, r + 1, c - 1),
            px(b, r + 1, c), px(b, r + 1, c + 1), px(b, r, c + 1), px(b, r - 1, c + 1)]


def zo(b, r, c):
    p = ring(b, r, c)
    return sum(1 for i in range(8) if p[i] == 0 and p[(i + 1) % 8] == 1)


def removable(b, r, c):
    p = ring(b, r, c)
    p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
    if not 2 <= sum(p) <= 6 or zo(b, r, c) != 1:
        return False
    if not (p2 * p4 * p8 == 0 or zo(b, r - 1, c) != 1):
        return False
    return p2 * p4 * p6 == 0 or zo(b, r, c - 1) != 1


def thin(b):
    b = [row[:] for row in b]
    changed = True
    while changed:
        changed = False
        for r in range(len(b)):
            for c in range(len(b[0])):
                if b[r][c] and removable(b, r, c):
                    b[r][c] = 0
                    changed = True
    return b


def bounds(n, k):
    base, extra = divmod(n, k)
    out, start = [], 0
    for i in range(k):
        end = start + base + (1 if i < extra else 0)
        out.append((start, end))
        start = end
    return out


def gc(b, rows, cols):
    total, prev = 0, None
    for r in range(*rows):
        cur = next((c for c in range(*cols) if b[r][c]), None)
        if prev is not None and cur is not None:
            total += cur - prev
        prev = cur
    return total


def features(b, k, a):
    vals = []
    for rows in bounds(len(b), k):
        for cols in bounds(len(b[0]), k):
            vals.append(min(1.0, max(0.0, (gc(b, rows, cols) + a) / (2 * a))))
    return vals


def write_p2(path, img, maxval):
    with open(path, "w") as f:
        f.write(f"P2\n# fixture glyph\n{len(img[0])} {len(img)}\n{maxval}\n")
        for row in img:
            f.write(" ".join(str(v) for v in row) + "\n")


def write_p5(path, b):
    with open(path, "wb") as f:
        f.write(f"P5\n{len(b[0])} {len(b)}\n255\n".encode())
        f.write(bytes(255 if v else 0 for row in b for v in row))


def main():
    os.makedirs(OUT, exist_ok=True)
    for i, (name, (w, h, strokes, width)) in enumerate(GLYPHS.items()):
        gray = draw(w, h, strokes, width, seed=100 + i)
        write_p2(os.path.join(OUT, f"{name}.pgm"), gray, 15)
        scaled = scale(crop(binarize(gray, 15)), SIZE, SIZE)
        skel = thin(scaled)
        write_p5(os.path.join(OUT, f"{name}.scaled.pgm"), scaled)
        write_p5(os.path.join(OUT, f"{name}.skeleton.pgm"), skel)
        for k, a in CELLS:
            header = "label," + ",".join(f"gc_{j}" for j in range(1, k * k + 1))
            row = name + "," + ",".join(f"{v:.6f}" for v in features(skel, k, a))
            with open(os.path.join(OUT, f"{name}.k{k}.csv"), "w") as f:
                f.write(header + "\n" + row + "\n")
        print(name, sum(map(sum, scaled)), "->", sum(map(sum, skel)))


if __name__ == "__main__":
    main()
