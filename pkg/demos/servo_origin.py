"""Why the servomechanism benchmark has no certificate.

The linearization at the origin has eigenvalues -1 and +-i.  On the
center manifold the cubic term pushes trajectories outward, so even
starts very close to the origin drift away slowly and then blow up.
"""
import numpy as np

from roacert.dynamics import OracleConfig, Outcome, VectorField, integrate, local_stability
from roacert.polyalg import Poly

x1, x2, x3 = (Poly.variable(i, 3) for i in range(3))
f = VectorField([x2, x3, -x3 - (1 - x1**2) * x2 - x1])

ls = local_stability(f)
print("eigenvalues:", np.round(ls.eigenvalues, 6))
print("hurwitz:", ls.hurwitz, " marginal:", ls.marginal)

cfg = OracleConfig(R_escape=20.0)
for r in (0.05, 0.1, 0.2):
    x0 = r * np.array([1.0, 0.0, -1.0])
    tr = integrate(f, x0, 8000.0, cfg, stop_on_entry=False)
    norms = np.linalg.norm(tr.states, axis=1)
    when = tr.t[-1] if tr.outcome is Outcome.ESCAPED else None
    print(f"|x0| = {np.linalg.norm(x0):.3f}: min |x| {norms.min():.3f}, final |x| {norms[-1]:.3g}, "
          f"{'escaped at t = %.0f' % when if when else 'still bounded at t = 8000'}")
