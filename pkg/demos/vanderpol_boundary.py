"""Certificate for the reversed Van der Pol oscillator next to its true ROA.

The ROA is bounded by the unstable limit cycle, which we trace by flowing
backwards in time.  The figure goes to vanderpol_boundary.png.
"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from roacert.cli import ProblemFile, contour_lines, resolve_problem
from roacert.dynamics import OracleConfig, reverse_time_boundary
from roacert.roapipeline import estimate_roa

degree = int(sys.argv[1]) if len(sys.argv) > 1 else 8

pf = ProblemFile.load(resolve_problem("vanderpol"))
f = pf.build_field()
spec = pf.roa_spec(degree=degree, samples=2000)
cert = estimate_roa(f, spec, run_checks=False)
print(f"d={degree}: {cert.status}, objective {cert.objective:.4f}, area {cert.volume.value:.3f}")

cycle = reverse_time_boundary(f, [0.1, 0.1], 60.0, OracleConfig(R_escape=10 * spec.R))
(a0, b0), (a1, b1) = spec.box
X, Y = np.meshgrid(np.linspace(a0, b0, 300), np.linspace(a1, b1, 300), indexing="ij")
Z = cert.P.eval_many(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)

fig, ax = plt.subplots(figsize=(5, 6))
for ln in contour_lines(X, Y, Z):
    ax.plot(ln[:, 0], ln[:, 1], "k-", lw=1.5)
ax.plot(cycle[:, 0], cycle[:, 1], "r--", lw=1, label="limit cycle")
ax.set_aspect("equal")
ax.set_title(f"P_{degree} = 1")
ax.legend()
fig.savefig("vanderpol_boundary.png", dpi=120)
print("wrote vanderpol_boundary.png")
