"""Constants shared by both kernel backends."""

CONVERGED = 0
MAX_ITERS = 1
OUTSIDE_HULL = 2

STATUS_NAMES = {CONVERGED: "converged", MAX_ITERS: "max_iters", OUTSIDE_HULL: "outside_hull"}

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 30
# J is treated as numerically singular below this fraction of max(eig_max, h^2)
SINGULAR_RTOL = 1e-14
# |lambda| * h beyond which a singular J is read as x outside conv(P)
LAMBDA_BLOWUP = 1e3
# longest trial step in units of 1/h; a near-singular J at lambda = 0 would otherwise
# propose steps that no number of halvings can bring back to a decrease
MAX_STEP = 50.0
