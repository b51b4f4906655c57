# %% [markdown]
# # California housing (user-supplied data)
#
# Runs the detector on the 1990 California housing table, with house value
# as the behavior and the eight remaining numeric columns as context.
# The data is not bundled. Pass a CSV with a header row:
#
#     python demos/04_houses.py housing.csv --count 206
#
# Rows with missing values are dropped and extra columns are ignored.
# Outliers are planted with the usual swap injection; no score is expected
# of the result.

# %%
import argparse
import csv

import numpy as np

from rocod.dataset import Dataset, inject_outliers, normalize
from rocod.evaluation import LabeledRanking, evaluate, knn_distance_baseline
from rocod.pipeline import detect

CONTEXT = ["median_income", "housing_median_age", "total_rooms", "total_bedrooms",
           "population", "households", "latitude", "longitude"]
BEHAVIOR = ["median_house_value"]

parser = argparse.ArgumentParser()
parser.add_argument("csv")
parser.add_argument("--count", type=int, default=206)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

with open(args.csv, newline="") as fh:
    rows = list(csv.DictReader(fh))
table = np.array([[float(r[c] or "nan") for c in CONTEXT + BEHAVIOR] for r in rows])
table = table[~np.isnan(table).any(axis=1)]
print(f"{table.shape[0]} complete rows")

# %%
ds = normalize(Dataset(x=table[:, : len(CONTEXT)], y=table[:, len(CONTEXT):]))
ds = inject_outliers(ds, args.count, seed=args.seed)
result = detect(ds)
n = min(100, 4 * args.count)
for name, report in (("contextual", result.report), ("kNN", knn_distance_baseline(ds, 10))):
    m = evaluate(LabeledRanking.from_report(report, ds.labels), (n,))
    print(f"{name:<11} PRC-AUC {m.prc_auc:.3f}  p@{n} {m.precision_at[n]:.2f}")
