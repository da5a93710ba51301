import json

print("TRIVAL_RESULT " + json.dumps({"objective": 7.0, "status": "FEASIBLE"}))
print("improving...")
print("TRIVAL_RESULT " + json.dumps({"objective": 4.0, "status": "OPTIMAL"}))
