# Optimizer-state memory accounting.
#
# The method keeps one rank-r shared subspace plus two rank-r/2 task
# subspaces per 2-D layer: 2mr + 4nr optimizer-state elements against
# LoRA's 2mr + 2nr, but mn trainable weights against LoRA's mn + mr + nr.
# The closed forms are checked here against the actual live allocations.

import numpy as np

from gems.controller import GemsOptimizer
from gems.diagnostics import live_state_elements, memory_audit
from gems.gating import GatingNet

rng = np.random.default_rng(0)
r = 4
shapes = {"small": (4, 4), "wide": (8, 32), "tall": (48, 16), "big": (64, 64)}
params = {k: rng.standard_normal(s) for k, s in shapes.items()}
opt = GemsOptimizer(params, rank=r, gate=GatingNet.init(rng), variant="full")

print("layer   m x n    gems_states  lora_states  live  gems_w  lora_w")
for name, w in params.items():
    m, n = sorted(w.shape)
    a = memory_audit(m, n, r)
    t = opt.tuners[name]
    live = live_state_elements(t.shared, t.src, t.rec)
    print("%-6s %3dx%-3d  %11d  %11d  %5d %7d %7d"
          % (name, w.shape[0], w.shape[1], a.gems_states, a.lora_states,
             live, a.gems_weights, a.lora_weights))
    assert live == a.gems_states

# the worked 4x4 rank-2 instantiation: 48 state elements vs LoRA's 32,
# but 16 trainable weights vs LoRA's 32
a = memory_audit(4, 4, 2)
print("\n(4, 4, r=2): gems_states=%d lora_states=%d, "
      "gems_weights=%d lora_weights=%d"
      % (a.gems_states, a.lora_states, a.gems_weights, a.lora_weights))
