# maximize x with x >= 0 and nothing else.
import json

from scipy.optimize import linprog

res = linprog(c=[-1.0], bounds=[(0, None)], method="highs")
status = {0: "OPTIMAL", 2: "INFEASIBLE", 3: "UNBOUNDED"}.get(res.status, "UNKNOWN")
objective = float(-res.fun) if res.status == 0 else None
print("TRIVAL_RESULT " + json.dumps({"objective": objective, "status": status}))
