# Subspace Adam in isolation.
#
# One layer, one gradient stream. We watch the optimizer keep its Adam
# moments in rank-r subspace coordinates, refresh the basis on schedule,
# and degenerate to textbook dense Adam when the basis is square.

import numpy as np

from gems.subspace import DenseAdamState, SubspaceState, dense_adam_step, step

rng = np.random.default_rng(0)
m, n, r = 16, 24, 4

state = SubspaceState.fresh(m, n, r, refresh_every=5, lr=1e-2)
w = rng.standard_normal((m, n))
target = rng.standard_normal((m, n))

print("rank-%d subspace Adam on a %dx%d layer (refresh every 5 steps)" % (r, m, n))
for t in range(20):
    g = w - target  # gradient of 0.5*||w - target||^2
    state, upd = step(state, g)
    w = w + upd.delta
    refreshed = "  <- basis refreshed" if t % 5 == 0 else ""
    print("step %2d  loss %.4f  |delta| %.5f%s"
          % (t, 0.5 * np.sum(g * g), np.linalg.norm(upd.delta), refreshed))

# moments live in subspace coordinates: r x n, not m x n
print("\nmoment shapes:", state.m1.shape, "vs dense", (m, n))

# degeneracy sanity: with the basis pinned to identity at full rank the
# subspace step IS textbook dense Adam (Adam is elementwise, so this only
# holds in the identity coordinates, not for an arbitrary rotation)
full = SubspaceState.fresh(m, n, m, refresh_every=10**9, lr=1e-2,
                           freeze_basis=True)
dense = DenseAdamState.fresh((m, n), lr=1e-2)
gap = 0.0
for _ in range(25):
    g = rng.standard_normal((m, n))
    full, upd = step(full, g)
    dense, ddelta = dense_adam_step(dense, g)
    gap = max(gap, float(np.max(np.abs(upd.delta - ddelta))))
print("identity-basis full rank vs dense Adam, max gap over 25 steps: %.2e" % gap)
