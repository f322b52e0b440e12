#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Regenerate the bundled toy corpus under data/toy/.

Small synthetic framework-like cells (one metal plus one to three light
atoms) with smooth made-up property labels. Deterministic: re-running
produces identical files.
"""

import json
import math
import pathlib
import random

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data" / "toy"
METALS = ["Zn", "Cu", "Co", "Fe", "Ni", "Mn"]
LIGANDS = ["C", "N", "O", "H"]


def cell_matrix(a, b, c, al, be, ga):
    ca, cb, cg = (math.cos(math.radians(x)) for x in (al, be, ga))
    sg = math.sin(math.radians(ga))
    rad = 1 - ca * ca - cb * cb - cg * cg + 2 * ca * cb * cg
    return [[a, 0, 0], [b * cg, b * sg, 0], [c * cb, c * (ca - cb * cg) / sg, c * math.sqrt(rad) / sg]]


def min_image_distance(m, f1, f2):
    best = float("inf")
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            for k in (-1, 0, 1):
                d = [f2[0] - f1[0] + i, f2[1] - f1[1] + j, f2[2] - f1[2] + k]
                r = [sum(d[q] * m[q][p] for q in range(3)) for p in range(3)]
                best = min(best, math.sqrt(sum(x * x for x in r)))
    return best


def make_structure(rng, ident):
    a, b, c = (round(rng.uniform(4.0, 6.0), 4) for _ in range(3))
    angles = [90.0, 90.0, 90.0]
    if rng.random() < 0.5:
        angles = [round(rng.uniform(82.0, 98.0), 3) for _ in range(3)]
    m = cell_matrix(a, b, c, *angles)
    elements = [rng.choice(METALS)] + [rng.choice(LIGANDS) for _ in range(rng.randint(1, 3))]
    sites = []
    for el in elements:
        while True:
            f = [round(rng.random(), 6) for _ in range(3)]
            if all(min_image_distance(m, f, s[1]) > 1.3 for s in sites):
                sites.append((el, f))
                break
    return {"id": ident, "cell": (a, b, c, *angles), "sites": sites}


def write_cif(path, s):
    lines = [f"data_{s['id']}"]
    tags = ["_cell_length_a", "_cell_length_b", "_cell_length_c",
            "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma"]
    for tag, v in zip(tags, s["cell"]):
        lines.append(f"{tag:<18}{v:.6f}")
    lines += ["loop_", "_atom_site_label", "_atom_site_type_symbol",
              "_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z"]
    for n, (el, f) in enumerate(s["sites"], 1):
        lines.append(f"{el}{n} {el} {f[0]:.6f} {f[1]:.6f} {f[2]:.6f}")
    path.write_text("\n".join(lines) + "\n")


def labels(s):
    els = [e for e, _ in s["sites"]]
    n = len(els)
    frac = {x: els.count(x) / n for x in LIGANDS}
    metal = METALS.index(els[0])
    a, b, c = s["cell"][:3]
    density = n / (a * b * c) * 100.0
    fe = 35.0 + 40.0 * (frac["N"] + frac["O"]) + 4.0 * metal + 8.0 * density
    v = -(0.4 + 0.8 * frac["C"] + 0.1 * metal + 0.05 * (a - 5.0))
    de = -0.6 - 1.2 * frac["O"] + 0.15 * metal - 0.3 * frac["H"] + 0.2 * density
    return round(min(fe, 99.0), 4), round(v, 4), round(de, 4)


def main():
    rng = random.Random(20240515)
    for sub in ("pool", "train", "holdout"):
        (ROOT / sub).mkdir(parents=True, exist_ok=True)

    for i in range(60):
        write_cif(ROOT / "pool" / f"toy_pool_{i:03d}.cif", make_structure(rng, f"toy_pool_{i:03d}"))

    for name, count in (("train", 15), ("holdout", 5)):
        rows = []
        for i in range(count):
            ident = f"{name}_{i:02d}"
            s = make_structure(rng, ident)
            write_cif(ROOT / name / f"{ident}.cif", s)
            fe, v, de = labels(s)
            rows.append(json.dumps({"cif": f"{name}/{ident}.cif", "fe_percent": fe,
                                    "voltage_v": v, "free_energy_ev_atom": de}))
        manifest = "manifest.jsonl" if name == "train" else "holdout.jsonl"
        (ROOT / manifest).write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
