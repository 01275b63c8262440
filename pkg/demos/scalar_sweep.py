"""Degree sweep on xdot = -x + x^3, whose region of attraction is (-1, 1).

Prints the objective, certified length (of {P < 1 - 1e-9}) and the distance D_V to the true
interval for each degree, then compares P_8 with the closed-form
W(x) = 1 - sqrt(1 - x^2) that it has to dominate.
"""
import numpy as np

from roacert.dynamics import VectorField
from roacert.polyalg import Poly
from roacert.roapipeline import RoaSpec, degree_sweep
from roacert.setmetrics import IndicatorSet


def main():
    x = Poly.variable(0, 1)
    f = VectorField([-x + x**3])
    spec = RoaSpec(lam=1.0, beta=1, R=1.5, box=[(-1.2, 1.2)], d=4, n_verify=4000)
    roa = IndicatorSet(lambda X: np.abs(X[:, 0]) < 1.0, "(-1,1)")

    rows = degree_sweep(f, spec, [4, 6, 8, 10], reference=roa)
    print(" d  status     objective  length   D_V")
    for r in rows:
        print(f"{r.d:2d}  {r.status:9s}  {r.objective:9.6f}  {r.certificate.volume_interior.value:.4f}  {r.dv.value:.4f}")

    P = rows[2].certificate.P
    xs = np.linspace(-0.95, 0.95, 9)
    W = 1 - np.sqrt(1 - xs**2)
    print("\n    x      W(x)    P_8(x)")
    for xi, wi, pi in zip(xs, W, P.eval_many(xs[:, None])):
        print(f"{xi:6.3f}  {wi:.5f}  {pi:.5f}")


if __name__ == "__main__":
    main()
