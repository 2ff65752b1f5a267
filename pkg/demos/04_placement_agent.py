"""The actor-critic learning where to park two UAVs over six static devices.

Reward is coverage only and gamma is zero, so the best achievable placement is
known from a grid search.

Run: python3 demos/04_placement_agent.py   (about a minute)
"""
from aerofed.checks import train_placement

cov, opt = train_placement(seed=0)
print(f"trained coverage {cov:.3f}, grid optimum {opt:.3f} ({cov / opt:.0%})")
