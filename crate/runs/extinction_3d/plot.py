#!/usr/bin/env python3
"""Plots the series.csv sitting next to this script (written by `run`)."""
import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "series.csv")) as fh:
    rows = list(csv.reader(fh))
cols = [c.strip() for c in rows[0]]
data = {c: [float(r[i]) for r in rows[1:]] for i, c in enumerate(cols)}
t = data["t"]

fig, axes = plt.subplots(2, 2, figsize=(11, 8))
floor = 1e-300
axes[0][0].semilogy(t, [max(v, floor) for v in data["mass"]])
axes[0][0].set_title("mass $\\|u\\|_{L^2}^2$")
axes[0][1].semilogy(t, [max(v, floor) for v in data["lmp1"]])
axes[0][1].set_title("$\\|u\\|_{L^{m+1}}^{m+1}$")
axes[1][0].semilogy(t, [max(v, floor) for v in data["h1"]])
axes[1][0].semilogy(t, [max(v, floor) for v in data["h2"]])
axes[1][0].set_title("$H^1$, $H^2$ norms")
axes[1][1].plot(t, data["tail_mass"])
axes[1][1].set_title("tail mass fraction")
for row in axes:
    for ax in row:
        ax.set_xlabel("t")
        ax.grid(True, alpha=0.3)
fig.tight_layout()
fig.savefig(os.path.join(here, "series.png"), dpi=130)
print(os.path.join(here, "series.png"))
