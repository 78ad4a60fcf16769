# Harmonic planner
