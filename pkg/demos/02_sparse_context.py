# %% [markdown]
# # Sparse contexts
#
# Behavior tracks a single context variable along a narrow band. Two points
# sit at the far ends of that band but follow the trend (A, B). Two points
# sit in the dense middle but break the trend (C, D). Distance-based
# detection flags the isolated pair; the contextual detector flags the pair
# that breaks the relationship.

# %%
import numpy as np

from rocod.dataset import Dataset, normalize
from rocod.evaluation import knn_distance_baseline
from rocod.pipeline import detect

rng = np.random.default_rng(0)
t = np.sort(rng.uniform(0.3, 0.7, 200))
amount = t + rng.normal(0, 0.02, t.size)
extra_t = np.array([0.02, 0.98, 0.45, 0.6])
extra_y = np.array([0.02, 0.98, 0.85, 0.15])
t = np.concatenate([t, extra_t])
y = np.concatenate([amount, extra_y])[:, None]

# cosine on one nonnegative attribute is always 1, so encode t as (t, 1 - t)
ds = Dataset(x=np.column_stack([t, 1 - t]), y=y)
points = dict(zip("ABCD", range(200, 204)))

# %%
rocod = detect(ds).report.ranks
knn = knn_distance_baseline(normalize(ds), 30).ranks
print("point  contextual  kNN")
for name, i in points.items():
    print(f"  {name}      {rocod[i]:>4}     {knn[i]:>4}")
