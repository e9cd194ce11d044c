"""Independent recomputation of the golden ATE numbers.

Reads the fixture config and data directly, fits the Poisson propensity with
statsmodels, and rebuilds weights, outcome integrals and estimates with plain
numpy. Compares against a results.json produced by `geocausal ate`.

usage: oracle_ate.py <fixture_dir> <results.json>
"""

import csv
import json
import math
import sys
from pathlib import Path

import numpy as np
import statsmodels.api as sm
from scipy.stats import norm


def read_asc(path):
    lines = Path(path).read_text().split("\n")
    hdr = {}
    k = 0
    while lines[k].split()[0].lower() in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"):
        a, b = lines[k].split()
        hdr[a.lower()] = float(b)
        k += 1
    rows = [list(map(float, ln.split())) for ln in lines[k:] if ln.strip()]
    return np.array(rows[::-1])  # row 0 = south


def main(fixture, results):
    fixture = Path(fixture)
    cfg = json.loads((fixture / "config.json").read_text())
    res = json.loads(Path(results).read_text())
    nx, ny = cfg["grid"]["nx"], cfg["grid"]["ny"]
    x0, y0, x1, y1 = cfg["window"]["box"]
    dx, dy = (x1 - x0) / nx, (y1 - y0) / ny
    area = dx * dy
    T = cfg["T"]
    cx = x0 + dx * (np.arange(nx) + 0.5)
    cy = y0 + dy * (np.arange(ny) + 0.5)

    names = cfg["propensity"]["covariates"]
    cov = {n: read_asc(fixture / cfg["covariates"][n]) for n in names}

    treat = [[] for _ in range(T)]
    outc = [[] for _ in range(T)]
    with open(fixture / cfg["events"]) as f:
        for r in csv.DictReader(f):
            t = int(r["t"])
            if t > T:
                continue
            p = (float(r["x"]), float(r["y"]))
            (treat if r["stream"] == "treatment" else outc)[t - 1].append(p)

    def cell(p):
        i = min(int((p[0] - x0) / dx), nx - 1)
        j = min(int((p[1] - y0) / dy), ny - 1)
        return j, i

    counts = np.zeros((ny, nx))
    for pts in treat:
        for p in pts:
            counts[cell(p)] += 1
    X = np.column_stack([np.ones(nx * ny)] + [cov[n].ravel() for n in names])
    glm = sm.GLM(counts.ravel(), X, family=sm.families.Poisson(), offset=np.full(nx * ny, math.log(T * area)))
    beta = glm.fit(tol=1e-13).params
    lam = np.exp(X @ beta).reshape(ny, nx)
    Lam = lam.sum() * area
    dens = lam / Lam

    def log_f(intensity, total, pts):
        return sum(math.log(intensity[cell(p)]) for p in pts) - total

    log_e = np.array([log_f(lam, Lam, pts) for pts in treat])
    counts_of = {iv["label"]: iv["count"] for iv in cfg["interventions"]}

    def log_ratios(label):
        c = counts_of[label]
        return np.array([log_f(c * dens, c, pts) for pts in treat]) - log_e

    b = cfg["smoothing"]["bandwidth"]
    nrm = 1.0 / (2 * math.pi * b * b)

    def outcome_series(box):
        if box is None:
            ii, jj = np.arange(nx), np.arange(ny)
        else:
            ii = np.where((cx > box[0]) & (cx < box[2]))[0]
            jj = np.where((cy > box[1]) & (cy < box[3]))[0]
        y = np.zeros(T)
        for t, pts in enumerate(outc):
            for p in pts:
                sx = np.exp(-0.5 * (cx[ii] - p[0]) ** 2 / b**2).sum()
                sy = np.exp(-0.5 * (cy[jj] - p[1]) ** 2 / b**2).sum()
                y[t] += nrm * area * sx * sy
        return y

    regions = {r["label"]: outcome_series(r.get("box")) for r in cfg["regions"]}
    z95 = norm.ppf(0.975)

    worst = 0.0
    checked = 0
    for e in res["results"]["effects"]:
        L = e["L"]
        la, lb = e["intervention_a"], e["intervention_b"]
        ra, rb = log_ratios(la), log_ratios(lb)
        wa = np.exp(np.convolve(ra, np.ones(L), "valid"))
        wb = np.exp(np.convolve(rb, np.ones(L), "valid"))
        y = regions[e["region"]][L - 1 :]
        per_t = (wa - wb) * y
        ipw = per_t.mean()
        hajek = (wa * y).sum() / wa.sum() - (wb * y).sum() / wb.sum()
        half = z95 * math.sqrt((per_t**2).mean() / len(per_t))
        pairs = [
            (ipw, e["ipw"]),
            (hajek, e["hajek"]),
            (ipw - half, e["ci95"]["ipw"][0]),
            (ipw + half, e["ci95"]["ipw"][1]),
        ]
        for want, got in pairs:
            rel = abs(want - got) / max(1.0, abs(want))
            worst = max(worst, rel)
        checked += 1
    print(f"checked {checked} estimates, worst relative difference {worst:.3e}")
    return 0 if checked > 0 and worst < 1e-9 else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1], sys.argv[2]))
