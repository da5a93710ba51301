print('TRIVAL_RESULT {"objective": 4.0, "status": OPTIMAL}')
