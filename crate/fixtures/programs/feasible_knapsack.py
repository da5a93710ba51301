# Two-item knapsack, capacity 4: stove (w=2, v=3), tent (w=3, v=4). Optimum 4.
import json

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

weights = np.array([2, 3])
values = np.array([3, 4])
res = milp(
    c=-values,
    constraints=[LinearConstraint(weights[np.newaxis, :], -np.inf, 4)],
    integrality=np.ones(2),
    bounds=Bounds(0, 1),
)
status = "OPTIMAL" if res.status == 0 else "SOLVER_STATUS_%d" % res.status
objective = float(-res.fun) if res.status == 0 else None
print("solver says:", res.message)
print("TRIVAL_RESULT " + json.dumps({"objective": objective, "status": status}))
