"""Entropic risk on two lotteries.

A safe lottery pays 5 for sure; a risky one pays 0 or 10 with equal odds.
Both have mean 5. Under the entropic risk measure a negative beta prefers the
safe one, and the gap to the mean grows roughly like beta/2 times the variance.

    python demos/01_entropic_risk.py
"""
import torch

from risksac.oracle import entropic_risk, taylor_check
from risksac.risk import logsumexp_shifted

safe = [(1.0, 5.0)]
risky = [(0.5, 0.0), (0.5, 10.0)]

print("beta     safe    risky   mean+beta/2*var")
for beta in (-2.0, -1.0, -0.1, -0.01, 0.0, 0.1):
    _, approx, _ = taylor_check(risky, beta)
    print(f"{beta:6.2f}  {entropic_risk(safe, beta):6.3f}  {entropic_risk(risky, beta):7.3f}  {approx:8.3f}")

# The training code evaluates the same quantity on batched tensors with a
# shift that keeps every exponential at most one, so huge values stay finite.
w = torch.tensor([0.5, 0.5], dtype=torch.float64)
v = torch.tensor([0.0, 10.0], dtype=torch.float64)
print("\nbatched form at beta=-1:", float(logsumexp_shifted(w, v, -1.0)))
print("values scaled by 100, beta=-10:", float(logsumexp_shifted(w, 100 * v, -10.0)))
