print("Optimal objective value: 4.0")
