# %% [markdown]
# # Signature collisions
#
# A random hyperplane separates two unit vectors with probability
# theta / pi. Counting agreeing sign bits therefore estimates the angle.

# %%
import math

import numpy as np

from rocod.lsh import derive_params, random_projections, sign_bits

rng = np.random.default_rng(1)
a = rng.standard_normal(8)
a /= np.linalg.norm(a)
b = rng.standard_normal(8)
b -= (b @ a) * a
b /= np.linalg.norm(b)

proj = random_projections(20_000, 8, seed=2)
for theta in (0.2, 0.8, 1.6, 2.6):
    bits = sign_bits(np.vstack([a, math.cos(theta) * a + math.sin(theta) * b]), proj)
    agree = np.mean(bits[0] == bits[1])
    print(f"theta={theta:.1f}  agreement {agree:.4f}  expected {1 - theta / math.pi:.4f}")

# %% [markdown]
# ## How many signatures?
#
# Higher similarity thresholds make pairs collide more often, so fewer
# signature slots are needed for the same recall.

# %%
for alpha in (0.8, 0.9, 0.95, 0.99):
    p = derive_params(alpha, 0.975, 8)
    print(f"alpha={alpha}  slots={p.l}  bits={p.n_bits}")
