# x >= 1 and x <= 0 cannot both hold.
import json

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

res = milp(
    c=np.array([1.0]),
    constraints=[LinearConstraint(np.array([[1.0]]), 1, np.inf), LinearConstraint(np.array([[1.0]]), -np.inf, 0)],
    integrality=np.ones(1),
    bounds=Bounds(-10, 10),
)
status = {0: "OPTIMAL", 2: "INFEASIBLE", 3: "UNBOUNDED"}.get(res.status, "UNKNOWN")
objective = float(res.fun) if res.status == 0 else None
print("TRIVAL_RESULT " + json.dumps({"objective": objective, "status": status}))
