# core/__init__.py
# Model, objectives and the two inner solvers of the LPQP relaxation
