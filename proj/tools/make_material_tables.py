#!/usr/bin/env python3
"""Regenerate the bundled three-process attenuation tables in data/materials.

Total mass attenuation coefficients are NIST XCOM/XAAMDI values (with
coherent scattering) at the standard energy grid. The total is split into
processes as follows:

  incoherent  = Klein-Nishina cross-section per electron * electrons per gram
                * binding suppression 1 / (1 + (E_b / E)^1.5), E_b = 2 keV * sqrt(Z)
  coherent    = power law c20 * (20 keV / E)^k fitted to XCOM coherent values
  photoelectric = total - incoherent - coherent; where that residual is not
                clearly positive (high energies) it is replaced by a power-law
                extrapolation from the last reliable node.

The partition is approximate; the totals are what drive transmission and HVL.
Compounds are built from elemental tables by mass fraction.
"""
import math
import pathlib

GRID = [1, 1.5, 2, 3, 4, 5, 6, 8, 10, 15, 20, 30, 40, 50, 60, 80, 100,
        150, 200, 300, 400, 500, 600, 800, 1000]

# NIST total mass attenuation, cm^2/g, on GRID.
TOTAL = {
    "H": [7.217, 2.148, 1.059, 0.5612, 0.4546, 0.4193, 0.4042, 0.3914, 0.3854,
          0.3764, 0.3695, 0.3570, 0.3458, 0.3355, 0.3260, 0.3091, 0.2944,
          0.2651, 0.2429, 0.2112, 0.1893, 0.1729, 0.1599, 0.1405, 0.1263],
    "C": [2211, 700.2, 302.6, 90.33, 37.78, 19.12, 11.03, 4.576, 2.373,
          0.8071, 0.4420, 0.2562, 0.2076, 0.1871, 0.1753, 0.1610, 0.1514,
          0.1347, 0.1229, 0.1066, 0.09546, 0.08715, 0.08058, 0.07076, 0.06361],
    "O": [4590, 1549, 694.9, 217.1, 93.15, 47.90, 27.70, 11.63, 5.952,
          1.836, 0.8651, 0.3779, 0.2585, 0.2132, 0.1907, 0.1678, 0.1551,
          0.1361, 0.1237, 0.1070, 0.09566, 0.08729, 0.08070, 0.07087, 0.06372],
    "Al": [1185, 402.2, 2263, 788.0, 360.5, 193.4, 115.3, 50.33, 26.23,
           7.955, 3.441, 1.128, 0.5685, 0.3681, 0.2778, 0.2018, 0.1704,
           0.1378, 0.1223, 0.1042, 0.09276, 0.08445, 0.07802, 0.06841, 0.06146],
    "Fe": [9085, 3399, 1626, 557.6, 256.7, 139.8, 89.57, 305.4, 170.6,
           57.08, 25.68, 8.176, 3.629, 1.958, 1.205, 0.5952, 0.3717,
           0.1964, 0.1460, 0.1099, 0.09400, 0.08414, 0.07704, 0.06699, 0.05995],
}
# K edges inside the grid: (energy, below, above).
EDGES = {"Al": [(1.5596, 362.1, 3957.0)], "Fe": [(7.1120, 59.42, 468.1)]}
Z = {"H": 1, "C": 6, "O": 8, "Al": 13, "Fe": 26}
A = {"H": 1.008, "C": 12.011, "O": 15.999, "Al": 26.982, "Fe": 55.845}
# coherent: (value at 20 keV, exponent)
COH = {"H": (0.0020, 2.0), "C": (0.0600, 1.9), "O": (0.0850, 1.9),
       "Al": (0.170, 1.85), "Fe": (0.550, 1.8)}

N_A = 6.02214076e23
R_E = 2.8179403262e-13  # cm
ME_C2 = 511.0


def klein_nishina_per_electron(e_kev):
    k = e_kev / ME_C2
    l = math.log(1 + 2 * k)
    return 2 * math.pi * R_E ** 2 * (
        (1 + k) / k ** 2 * (2 * (1 + k) / (1 + 2 * k) - l / k)
        + l / (2 * k) - (1 + 3 * k) / (1 + 2 * k) ** 2)


def nodes(el):
    rows = list(zip(GRID, TOTAL[el]))
    for e, lo, hi in EDGES.get(el, []):
        rows = [r for r in rows if r[0] != e] + [(e, lo), (e, hi)]
    rows.sort(key=lambda r: r[0])  # stable: below-edge row stays first
    return rows


def loglog(rows, e):
    for (e0, v0), (e1, v1) in zip(rows, rows[1:]):
        if e0 <= e <= e1 and e1 > e0:
            f = math.log(e / e0) / math.log(e1 / e0)
            return math.exp(math.log(v0) + f * (math.log(v1) - math.log(v0)))
    raise ValueError(e)


def partition(fractions):
    """fractions: {element: mass fraction}. Returns rows (E, pe, incoh, coh)."""
    energies = sorted({r[0] for el in fractions for r in nodes(el)})
    edge_set = {e for el in fractions for e, _, _ in EDGES.get(el, [])}
    out = []
    for e in energies:
        sides = (0, 1) if e in edge_set else (None,)
        for side in sides:
            total = incoh = coh = 0.0
            for el, w in fractions.items():
                rows = nodes(el)
                hit = [v for ee, v in rows if ee == e]
                if hit:
                    t = hit[0] if side in (None, 0) else hit[-1]
                else:
                    t = loglog(rows, e)
                kn = klein_nishina_per_electron(e) * N_A * Z[el] / A[el]
                eb = 2.0 * math.sqrt(Z[el])
                inc = kn / (1 + (eb / e) ** 1.5)
                c20, k = COH[el]
                c = c20 * (20.0 / max(e, 3.0)) ** k
                total += w * t
                incoh += w * inc
                coh += w * c
            out.append([e, total - incoh - coh, incoh, coh, total])
    # Replace unreliable photoelectric residuals with a power-law tail.
    last = None
    for i, r in enumerate(out):
        if r[1] > 0.1 * r[4]:
            last = i
    e_ref, pe_ref = out[last][0], out[last][1]
    e_prev, pe_prev = out[last - 1][0], out[last - 1][1]
    slope = math.log(pe_ref / pe_prev) / math.log(e_ref / e_prev)
    for r in out[last + 1:]:
        tail = pe_ref * (r[0] / e_ref) ** slope
        r[1] = tail
    return out


MATERIALS = {
    "pmma": (1.19, {"H": 0.080538, "C": 0.599848, "O": 0.319614}),
    "aluminum": (2.699, {"Al": 1.0}),
    "iron": (7.874, {"Fe": 1.0}),
}


def main():
    root = pathlib.Path(__file__).resolve().parent.parent / "data" / "materials"
    root.mkdir(parents=True, exist_ok=True)
    for name, (density, frac) in MATERIALS.items():
        rows = partition(frac)
        with open(root / f"{name}.csv", "w") as f:
            f.write("energy_keV,pe_cm2_per_g,compton_cm2_per_g,rayleigh_cm2_per_g\n")
            for e, pe, inc, coh, _ in rows:
                f.write(f"{e:g},{pe:.6g},{inc:.6g},{coh:.6g}\n")
        with open(root / f"{name}.meta", "w") as f:
            f.write(f"{name},{density}\n")


if __name__ == "__main__":
    main()
