capacities = {"truck": 4}
print("building model")
print(capacities["van"])
