"""Exact checks of the risk-sensitive soft Bellman recursion on small MDPs.

1. With no discounting, backward induction matches brute-force enumeration of
   every trajectory.
2. With discounting the recursion is only approximate, and the error shrinks
   as gamma approaches one.
3. Softmax policy improvement never lowers the Q-values (risk-neutral case).

    python demos/02_tabular_checks.py
"""
import numpy as np

from risksac.oracle import (
    approximation_gaps,
    bellman_backward,
    brute_force_Q,
    policy_improvement_check,
    random_mdp,
    random_policy,
    verification_report,
)

rng = np.random.default_rng(0)
mdp = random_mdp(rng, n_states=3, n_actions=2, horizon=4, gamma=1.0)
pi = random_policy(rng, mdp)

q_rec = bellman_backward(mdp, pi, beta=-1.0, alpha=0.5)
q_enum = brute_force_Q(mdp, pi, beta=-1.0, alpha=0.5)
print("Q at t=0 (recursion):\n", np.round(q_rec[0], 4))
print("max |recursion - enumeration| at gamma=1:", np.abs(q_rec - q_enum).max())

gaps = approximation_gaps(mdp, pi, beta=-1.0, alpha=0.5, gammas=(0.5, 0.9, 0.99, 0.999))
for g, gap in zip((0.5, 0.9, 0.99, 0.999), gaps):
    print(f"gamma={g:<6} gap {gap:.2e}")

rep = policy_improvement_check(mdp, pi, alpha=0.5, beta=0.0)
print("\nworst Q_new - Q_old after one improvement step:", rep.min_margin)

print("\nfull verification suite:")
for check in verification_report(n_mdps=50)["checks"]:
    print(f"  {check['name']:<20} passed={check['passed']}")
