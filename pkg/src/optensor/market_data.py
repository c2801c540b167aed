"""Option records, CSV ingestion, synthetic generation and the (T, C, N, D) tensor frame."""
import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import blackscholes as bs
from .autodiff import Tensor
from .errors import DataError, RowError, SchemaError, UsageError

log = logging.getLogger(__name__)

CHANNELS = (
    ("spot", "strike", "days_to_expire", "call_put", "implied_vol"),
    ("prev_settle", "settle_change", "theory_price", "theory_margin", "inventory"),
    ("delta", "gamma", "theta", "vega", "rho"),
)
FEATURES = tuple(name for channel in CHANNELS for name in channel)
TARGET = "settle"
CSV_COLUMNS = ("date", "option_id") + FEATURES + (TARGET,)
WINDOW = 10
MIN_STD = 1e-8


@dataclass(frozen=True)
class OptionRecord:
    date: dt.date
    option_id: str
    spot: float
    strike: float
    days_to_expire: float
    call_put: str  # "call" | "put"
    implied_vol: float
    prev_settle: float
    settle_change: float
    theory_price: float
    theory_margin: float
    inventory: float
    delta: float
    gamma: float
    theta: float
    vega: float
    rho: float
    settle: float

    def features(self):
        """The 15 model inputs in channel order, call/put encoded as +1/-1."""
        return [
            1.0 if name == "call_put" and self.call_put == "call"
            else -1.0 if name == "call_put"
            else getattr(self, name)
            for name in FEATURES
        ]


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    @property
    def scale(self):
        return max(self.std, MIN_STD)

    def apply(self, x):
        return (np.asarray(x) - self.mean) / self.scale

    def invert(self, z):
        return np.asarray(z) * self.scale + self.mean


@dataclass
class FeatureTensorSet:
    inputs: Tensor  # (T, C, N, D)
    targets: Tensor  # (N, 1), normalized settle
    norm_stats: list  # 15 feature NormStats followed by the target's
    option_index: list  # (option_id, target date) per sample
    target_records: list = field(default_factory=list)

    def __len__(self):
        return self.targets.shape[0]

    @property
    def target_stats(self):
        return self.norm_stats[-1]

    def settle(self):
        """Raw (price-scale) targets."""
        return np.array([r.settle for r in self.target_records])


# grouping ----------------------------------------------------------------

def group_by_option(records):
    groups = {}
    for r in records:
        groups.setdefault(r.option_id, []).append(r)
    return groups


def feature_matrix(records):
    return np.array([r.features() for r in records], dtype=np.float64).reshape(len(records), len(FEATURES))


# CSV ---------------------------------------------------------------------

def _parse_row(row, line):
    try:
        date = dt.date.fromisoformat(row["date"].strip())
    except ValueError:
        raise RowError(line, f"bad date {row['date']!r}") from None
    option_id = row["option_id"].strip()
    if not option_id:
        raise RowError(line, "empty option_id")
    cp = row["call_put"].strip().upper()
    if cp not in ("C", "P"):
        raise RowError(line, f"call_put must be C or P, got {row['call_put']!r}")
    values = {}
    for name in FEATURES + (TARGET,):
        if name == "call_put":
            continue
        try:
            values[name] = float(row[name])
        except (TypeError, ValueError):
            raise RowError(line, f"column {name}: cannot parse {row[name]!r} as a number") from None
        if not math.isfinite(values[name]):
            raise RowError(line, f"column {name}: non-finite value {row[name]!r}")
    if values["spot"] <= 0 or values["strike"] <= 0:
        raise RowError(line, "spot and strike must be positive")
    if values["days_to_expire"] < 0:
        raise RowError(line, "days_to_expire must be >= 0")
    return OptionRecord(date=date, option_id=option_id, call_put="call" if cp == "C" else "put", **values)


def load_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in CSV_COLUMNS:
            if col not in header:
                raise SchemaError(f"missing column {col}")
        reader.fieldnames = header
        records = [_parse_row(row, reader.line_num) for row in reader]

    groups = group_by_option(records)
    for option_id, rows in groups.items():
        for prev, cur in zip(rows, rows[1:]):
            if cur.date == prev.date:
                raise DataError(f"duplicate row for option {option_id} on {cur.date}")
            if cur.date < prev.date:
                raise DataError(f"dates not increasing for option {option_id}: {prev.date} then {cur.date}")
    return [r for rows in groups.values() for r in rows]


def _fmt(x):
    return repr(float(x))


def write_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            row = [r.date.isoformat(), r.option_id]
            for name in FEATURES + (TARGET,):
                if name == "call_put":
                    row.append("C" if r.call_put == "call" else "P")
                else:
                    row.append(_fmt(getattr(r, name)))
            w.writerow(row)


# selection and splitting -------------------------------------------------

def filter_min_lifetime(records, min_days=20):
    groups = group_by_option(records)
    keep = {oid for oid, rows in groups.items() if len({r.date for r in rows}) >= min_days}
    return [r for r in records if r.option_id in keep]


def option_order(records):
    """Option ids ordered by first trading date, ties broken by id."""
    groups = group_by_option(records)
    return sorted(groups, key=lambda oid: (min(r.date for r in groups[oid]), oid))


def split_by_option(records, n_train_options=600):
    order = option_order(records)
    if n_train_options >= len(order):
        raise UsageError(
            f"n_train_options={n_train_options} leaves no test options (only {len(order)} options)"
        )
    train_ids = set(order[:n_train_options])
    train = [r for r in records if r.option_id in train_ids]
    test = [r for r in records if r.option_id not in train_ids]
    return train, test


# normalization and windowing ---------------------------------------------

def fit_normalization(train_records):
    if not train_records:
        raise UsageError("cannot fit normalization on an empty training set")
    x = feature_matrix(train_records)
    y = np.array([r.settle for r in train_records])
    cols = [x[:, j] for j in range(x.shape[1])] + [y]
    # population variance, 1/n
    return [NormStats(float(c.mean()), float(c.std())) for c in cols]


def window_count(lengths, window=WINDOW):
    return sum(max(0, n - window + 1) for n in lengths)


def build_windows(records, stats, window=WINDOW):
    """Slide a ``window``-day frame over each option; the target is the last day's settle."""
    if len(stats) != len(FEATURES) + 1:
        raise UsageError(f"expected {len(FEATURES) + 1} norm stats, got {len(stats)}")
    mean = np.array([s.mean for s in stats[:-1]])
    scale = np.array([s.scale for s in stats[:-1]])
    n_ch, n_feat = len(CHANNELS), len(CHANNELS[0])

    blocks, targets, index, target_records = [], [], [], []
    for oid, rows in group_by_option(records).items():
        if len(rows) < window:
            continue
        x = ((feature_matrix(rows) - mean) / scale).reshape(len(rows), n_ch, n_feat)
        # (L - window + 1, n_ch, n_feat, window) -> samples x window x C x D
        views = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)
        blocks.append(views.transpose(0, 3, 1, 2))
        for r in rows[window - 1:]:
            targets.append(r.settle)
            index.append((oid, r.date))
            target_records.append(r)

    if blocks:
        samples = np.concatenate(blocks, axis=0)
    else:
        log.warning("no option has %d or more trading days; the window set is empty", window)
        samples = np.zeros((0, window, n_ch, n_feat))
    inputs = np.ascontiguousarray(samples.transpose(1, 2, 0, 3))
    y = stats[-1].apply(np.array(targets, dtype=np.float64)).reshape(-1, 1)
    return FeatureTensorSet(Tensor(inputs), Tensor(y), list(stats), index, target_records)


# synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class GbmConfig:
    s0: float = 3.0
    mu: float = 0.05
    sigma: float = 0.2


@dataclass(frozen=True)
class SyntheticConfig:
    n_options: int = 50
    days_per_option: int = 60
    gbm: GbmConfig = GbmConfig()
    rate: float = bs.DEFAULT_RATE
    noise_std: float = 0.02
    seed: int = 0
    listing_gap: int = 1  # trading days between consecutive listings
    expiry_buffer: int = 30  # calendar days from the last record to expiry
    moneyness_range: float = 0.1
    start_date: dt.date = dt.date(2018, 4, 2)
    trading_days_per_year: int = 252


def business_days(start, n):
    days, d = [], start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def gbm_path(s0, mu, sigma, n, rng, dt_years):
    z = rng.standard_normal(n - 1)
    steps = (mu - 0.5 * sigma * sigma) * dt_years + sigma * math.sqrt(dt_years) * z
    return s0 * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))


def _noisy_settle(theory, noise, lower, upper):
    settle = theory * (1.0 + noise)
    # noise that would break no-arbitrage bounds is pulled halfway back toward the theory price
    if settle <= lower:
        settle = lower + 0.5 * (theory - lower)
    elif settle >= upper:
        settle = upper - 0.5 * (upper - theory)
    return settle


def generate_synthetic(config):
    c = config
    if c.n_options < 1 or c.days_per_option < 1:
        raise UsageError("n_options and days_per_option must be positive")
    if not c.gbm.sigma > 0 or not c.gbm.s0 > 0:
        raise UsageError("gbm sigma and s0 must be positive")
    if c.noise_std < 0 or c.listing_gap < 0 or c.expiry_buffer < 1:
        raise UsageError("noise_std and listing_gap must be >= 0, expiry_buffer >= 1")

    rng = np.random.default_rng(c.seed)
    n_days = 1 + (c.n_options - 1) * c.listing_gap + c.days_per_option
    spots = gbm_path(c.gbm.s0, c.gbm.mu, c.gbm.sigma, n_days, rng, 1.0 / c.trading_days_per_year)
    dates = business_days(c.start_date, n_days)
    width = len(str(c.n_options - 1))

    records = []
    for i in range(c.n_options):
        first = 1 + i * c.listing_gap
        last = first + c.days_per_option - 1
        kind = "call" if rng.random() < 0.5 else "put"
        strike = round(float(spots[first] * math.exp(rng.uniform(-c.moneyness_range, c.moneyness_range))), 4)
        expiry = dates[last] + dt.timedelta(days=c.expiry_buffer)
        noise = rng.standard_normal(c.days_per_option) * c.noise_std
        inventory = int(rng.integers(100, 1000))
        option_id = f"OPT{i:0{width}d}"

        def theory_at(day):
            dte = float((expiry - dates[day]).days)
            return dte, bs.bs_price(bs.BsInputs(float(spots[day]), strike, dte, c.rate, c.gbm.sigma, kind))

        prev_settle = theory_at(first - 1)[1]
        for j, day in enumerate(range(first, last + 1)):
            spot = float(spots[day])
            dte, theory = theory_at(day)
            lower, upper = bs.price_bounds(spot, strike, dte, c.rate, kind)
            settle = theory if c.noise_std == 0 else _noisy_settle(theory, float(noise[j]), lower, upper)
            iv = bs.implied_vol(settle, spot, strike, dte, c.rate, kind)
            g = bs.bs_greeks(bs.BsInputs(spot, strike, dte, c.rate, iv, kind))
            if j:
                inventory = max(1, inventory + int(round(rng.normal(0.0, 20.0))))
            records.append(OptionRecord(
                date=dates[day], option_id=option_id, spot=spot, strike=strike,
                days_to_expire=dte, call_put=kind, implied_vol=iv,
                prev_settle=prev_settle, settle_change=settle - prev_settle,
                theory_price=theory, theory_margin=0.12 * spot + settle,
                inventory=float(inventory),
                delta=g.delta, gamma=g.gamma, theta=g.theta, vega=g.vega, rho=g.rho,
                settle=settle,
            ))
            prev_settle = settle
    return records
