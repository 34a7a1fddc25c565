"""Geometry-only warm-up: differentiate the area of the unit disk.

J(Omega) = |Omega| has the distributed derivative dJ(theta) = int div(theta).
It is assembled here through the same tensor path the PDE problems use
(S1 = identity), so this is the gate to run first when something looks off:
if the area derivative is wrong, the problem is in the transport or the
assembly plumbing, not in any physics.
"""

import numpy as np

from shapegrad.flow import make_field
from shapegrad.mesh import gen_disk
from shapegrad.validation import AreaProblem, fd_shape_check

HOLDALL = np.array([[-1.5, -1.5], [1.5, 1.5]])

mesh = gen_disk((0.0, 0.0), 1.0, 5)
problem = AreaProblem(mesh)
print(f"disk mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles")
print(f"area = {problem.cost():.12f}  (pi = {np.pi:.12f}; the gap is the "
      "polygonal boundary, not an error)")

# A compactly supported bump that pushes part of the domain outward.  The
# support box keeps theta zero near the hold-all boundary.
theta = make_field("bump", (1.0, 0.4, 0.2, -0.1, 0.8), support_box=HOLDALL)
dJ = problem.derivative(theta)
print(f"\nassembled dJ = {dJ:.12e}")

# Central differences of the re-meshed area at shrinking step sizes.  The
# quotient error should fall at second order, and the Neville extrapolation
# of the quotients to s = 0 should land on the assembled value.
table = fd_shape_check(problem, theta, (0.02, 0.01, 0.005))
print("\n  s        central quotient      error      order")
for row in table.rows:
    order = f"{row.order:.3f}" if np.isfinite(row.order) else "  -  "
    print(f"  {row.s:<7.4f}  {row.central:+.12e}  {row.error:.2e}  {order}")
print(f"\nobserved order      = {table.observed_order():.3f}   (want >= 1.9)")
print(f"extrapolated gap    = {table.extrapolated_error:.2e}   (want <= 1e-10)")
