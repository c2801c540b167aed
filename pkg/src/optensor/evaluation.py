"""Price-scale error metrics and report/prediction files."""
import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, IntegrityError
from .market_data import FEATURES
from .models import bs_baseline_predict

MAPE_EPS = 1e-8
METRICS = ("mse", "rmse", "map", "mape", "pcc")


@dataclass(frozen=True)
class EvalReport:
    model: str
    split: str
    mse: float
    rmse: float
    map: float  # mean absolute error
    mape: float  # None when every |y| < MAPE_EPS
    pcc: float  # None when either side has zero variance
    n_samples: int
    mape_excluded: int = 0

    def as_row(self):
        return {"model": self.model, "split": self.split, **{m: getattr(self, m) for m in METRICS},
                "n_samples": self.n_samples, "mape_excluded": self.mape_excluded}


def pearson(y, yhat):
    dy, dp = y - y.mean(), yhat - yhat.mean()
    syy, spp = (dy * dy).sum(), (dp * dp).sum()
    if syy == 0 or spp == 0:
        return None
    # the 1/(n-1) factors of sample covariance and variances cancel; one sqrt keeps r(y, y) == 1
    return float(np.clip((dy * dp).sum() / np.sqrt(syy * spp), -1.0, 1.0))


def compute_metrics(y, yhat, model="", split=""):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise DimensionError(f"compute_metrics: {y.size} targets vs {yhat.size} predictions")
    if y.size == 0:
        raise DimensionError("compute_metrics: no samples")
    err = y - yhat
    mse = float(np.mean(err * err))
    keep = np.abs(y) >= MAPE_EPS
    mape = float(np.mean(np.abs(err[keep] / y[keep]))) if keep.any() else None
    pcc = pearson(y, yhat) if y.size >= 2 else None
    return EvalReport(model, split, mse, math.sqrt(mse), float(np.mean(np.abs(err))), mape, pcc,
                      int(y.size), int((~keep).sum()))


def prediction_rows(data, yhat):
    return [(oid, date, float(y), float(p))
            for (oid, date), y, p in zip(data.option_index, data.settle(), np.reshape(yhat, -1))]


def evaluate(checkpoint, data, split="test", model=None):
    """Forward pass, de-normalize with the checkpoint's target stats, score on the price scale."""
    if len(checkpoint.norm_stats) != len(FEATURES) + 1:
        raise IntegrityError(
            f"checkpoint has {len(checkpoint.norm_stats)} norm stats, expected {len(FEATURES) + 1}"
        )
    if list(checkpoint.norm_stats) != list(data.norm_stats):
        raise IntegrityError("dataset was not prepared with the checkpoint's normalization stats")
    net = model or checkpoint.build()
    yhat = checkpoint.norm_stats[-1].invert(net.predict(data.inputs.data))
    report = compute_metrics(data.settle(), yhat, net.kind, split)
    return report, prediction_rows(data, yhat)


def evaluate_bs(data, rate, split="test"):
    yhat = bs_baseline_predict(data.target_records, rate).data
    return compute_metrics(data.settle(), yhat, "bs", split), prediction_rows(data, yhat)


def evaluate_naive(data, split="test"):
    """Yesterday's settle as today's prediction."""
    yhat = np.array([r.prev_settle for r in data.target_records])
    return compute_metrics(data.settle(), yhat, "naive", split), prediction_rows(data, yhat)


# output ------------------------------------------------------------------

def _cell(v):
    return "undefined" if v is None else f"{v:.5f}"


def format_table(reports):
    header = ["", "MSE", "RMSE", "MAP", "MAPE", "PCC"]
    rows = [[r.model] + [_cell(getattr(r, m)) for m in METRICS] for r in reports]
    widths = [max(len(row[j]) for row in [header] + rows) for j in range(len(header))]
    fmt = lambda row: "  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(row, widths)))
    return "\n".join([fmt(header)] + [fmt(r) for r in rows]) + "\n"


def _csv_value(v):
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def write_metrics_csv(reports, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["model", "split", *METRICS, "n_samples", "mape_excluded"]
        w.writerow(cols)
        for r in reports:
            row = r.as_row()
            w.writerow([_csv_value(row[c]) for c in cols])


def write_predictions(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "option_id", "y_true", "y_pred"])
        for oid, date, y, p in rows:
            w.writerow([date.isoformat(), oid, repr(y), repr(p)])
