"""Forecast verification metrics.

Ensemble scores (CRPS, pooled CRPS), event-based scores over thresholded
fields (CSI, neighborhood CSI, FSS, economic value), spectral diagnostics
(radially averaged power spectral density) and pixel errors (RMSE/MAE).

Conventions
-----------
* Events are ``field >= threshold``.
* Neighborhood windows are centered, odd-sided, and truncated at the grid
  boundary; pooling for pooled CRPS uses non-overlapping blocks instead.
* Counts accumulate over every grid point of every supplied case, so scores
  are test-set-wide, not per-case averages.
* All floating accumulation is float64 with a fixed order.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ShapeError


@dataclass
class EnsembleForecast:
    """Stacked ensemble members (M, N, C, H, W) for one case."""

    members: np.ndarray
    case_id: int = 0

    def __post_init__(self):
        self.members = np.asarray(self.members)
        if self.members.ndim < 2 or self.members.shape[0] < 1:
            raise ParameterError("ensemble needs at least one member")


@dataclass
class ContingencyTable:
    """Additive hit/miss/false-alarm/correct-rejection counters."""

    hits: int = 0
    misses: int = 0
    false_alarms: int = 0
    correct_rejections: int = 0

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        return ContingencyTable(
            self.hits + other.hits,
            self.misses + other.misses,
            self.false_alarms + other.false_alarms,
            self.correct_rejections + other.correct_rejections,
        )

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.false_alarms + self.correct_rejections

    @property
    def no_events(self) -> bool:
        return self.hits + self.misses + self.false_alarms == 0

    @property
    def csi(self) -> float:
        denom = self.hits + self.misses + self.false_alarms
        return self.hits / denom if denom else 0.0

    @property
    def hit_rate(self) -> float:
        denom = self.hits + self.misses
        return self.hits / denom if denom else float("nan")

    @property
    def false_alarm_rate(self) -> float:
        denom = self.false_alarms + self.correct_rejections
        return self.false_alarms / denom if denom else float("nan")

    @property
    def base_rate(self) -> float:
        return (self.hits + self.misses) / self.total if self.total else float("nan")


def _members(forecast) -> np.ndarray:
    if isinstance(forecast, EnsembleForecast):
        return np.asarray(forecast.members, dtype=np.float64)
    return np.asarray(forecast, dtype=np.float64)


def _pairwise_abs_sum(sorted_members: np.ndarray) -> np.ndarray:
    # sum_{i,j} |x_i - x_j| = 2 * sum_k (2k - M + 1) * x_(k) for ascending x_(k)
    M = sorted_members.shape[0]
    coef = (2.0 * np.arange(M) - M + 1.0).reshape((M,) + (1,) * (sorted_members.ndim - 1))
    return 2.0 * np.sum(coef * sorted_members, axis=0)


def crps_ensemble(forecast, truth: np.ndarray, fair: bool = False):
    """Empirical ensemble CRPS per coordinate plus its mean.

    CRPS = mean_i |x_i - y| - pair_sum / (2 M^2), where pair_sum is
    sum_{i,j} |x_i - x_j|. With ``fair=True`` the pair term divides by
    2 M (M - 1) instead (unbiased for i.i.d. members; needs M >= 2).

    Returns
    -------
    (field, mean) : per-coordinate CRPS with truth's shape, and its mean.
    """
    members = _members(forecast)
    truth = np.asarray(truth, dtype=np.float64)
    if members.shape[0] < 1 or members.ndim != truth.ndim + 1:
        raise ParameterError(
            f"forecast must stack M >= 1 members over truth shape, got {members.shape} vs {truth.shape}"
        )
    if members.shape[1:] != truth.shape:
        raise ShapeError(f"member shape {members.shape[1:]} != truth shape {truth.shape}")
    M = members.shape[0]
    term1 = np.mean(np.abs(members - truth[None]), axis=0)
    if fair and M < 2:
        raise ParameterError("fair CRPS needs at least 2 members")
    denom = 2.0 * M * (M - 1) if fair else 2.0 * M * M
    pair = _pairwise_abs_sum(np.sort(members, axis=0))
    field_ = term1 - pair / denom
    return field_, float(field_.mean())


def _pool(x: np.ndarray, window: int, agg: str) -> np.ndarray:
    H, W = x.shape[-2:]
    h = (H // window) * window
    w = (W // window) * window
    x = x[..., :h, :w]
    shape = x.shape[:-2] + (h // window, window, w // window, window)
    blocks = x.reshape(shape)
    if agg == "avg":
        return blocks.mean(axis=(-3, -1))
    if agg == "max":
        return blocks.max(axis=(-3, -1))
    raise ParameterError(f"agg must be 'avg' or 'max', got {agg!r}")


def pooled_crps(forecast, truth: np.ndarray, window: int, agg: str = "avg",
                fair: bool = False) -> float:
    """CRPS after pooling members and truth over non-overlapping blocks."""
    members = _members(forecast)
    truth = np.asarray(truth, dtype=np.float64)
    H, W = truth.shape[-2:]
    if not 1 <= window <= min(H, W):
        raise ParameterError(f"window must lie in [1, {min(H, W)}], got {window}")
    pooled_members = _pool(members, window, agg)
    pooled_truth = _pool(truth, window, agg)
    return crps_ensemble(pooled_members, pooled_truth, fair=fair)[1]


def _as_cases(fields) -> list:
    if isinstance(fields, np.ndarray):
        return [np.asarray(fields, dtype=np.float64)]
    return [np.asarray(f, dtype=np.float64) for f in fields]


def _paired_cases(forecasts, truths) -> list:
    fs, ts = _as_cases(forecasts), _as_cases(truths)
    if len(fs) != len(ts):
        raise ParameterError(f"{len(fs)} forecasts vs {len(ts)} truths")
    for f, t in zip(fs, ts):
        if f.shape != t.shape:
            raise ShapeError(f"forecast shape {f.shape} != truth shape {t.shape}")
    return list(zip(fs, ts))


def csi(forecasts, truths, threshold: float):
    """Critical success index with counts pooled over the whole test set.

    Returns (score, table); the score is 0 with ``table.no_events`` set when
    no event occurs anywhere.
    """
    if not np.isfinite(threshold):
        raise ParameterError(f"threshold must be finite, got {threshold!r}")
    table = ContingencyTable()
    for f, t in _paired_cases(forecasts, truths):
        fe = f >= threshold
        te = t >= threshold
        table = table + ContingencyTable(
            hits=int(np.count_nonzero(fe & te)),
            misses=int(np.count_nonzero(~fe & te)),
            false_alarms=int(np.count_nonzero(fe & ~te)),
            correct_rejections=int(np.count_nonzero(~fe & ~te)),
        )
    return table.csi, table


def _any_in_window(events: np.ndarray, window: int) -> np.ndarray:
    # centered odd window over the trailing two axes, truncated at edges
    size = (1,) * (events.ndim - 2) + (window, window)
    return ndimage.maximum_filter(events.astype(np.uint8), size=size,
                                  mode="constant", cval=0).astype(bool)


def _check_window(window: int) -> None:
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 1, got {window}")


def csi_neighborhood(forecasts, truths, threshold: float, window: int) -> float:
    """CSI where events count as hits if a matching event lies within a
    centered window: a forecast event with any nearby truth event is a hit,
    otherwise a false alarm; a truth event with no nearby forecast event is
    a miss. Counts accumulate test-set-wide."""
    _check_window(window)
    if not np.isfinite(threshold):
        raise ParameterError(f"threshold must be finite, got {threshold!r}")
    hits = misses = false_alarms = 0
    for f, t in _paired_cases(forecasts, truths):
        fe = f >= threshold
        te = t >= threshold
        t_near = _any_in_window(te, window)
        f_near = _any_in_window(fe, window)
        hits += int(np.count_nonzero(fe & t_near))
        false_alarms += int(np.count_nonzero(fe & ~t_near))
        misses += int(np.count_nonzero(te & ~f_near))
    denom = hits + misses + false_alarms
    return hits / denom if denom else 0.0


def _box_counts(mask: np.ndarray, window: int) -> np.ndarray:
    """Exact integer counts of true cells in centered truncated windows."""
    r = window // 2
    H, W = mask.shape[-2:]
    c = mask.astype(np.int64).cumsum(axis=-2).cumsum(axis=-1)
    c = np.pad(c, [(0, 0)] * (mask.ndim - 2) + [(1, 0), (1, 0)])
    y = np.arange(H)
    x = np.arange(W)
    y1 = np.maximum(y - r, 0)
    y2 = np.minimum(y + r, H - 1) + 1
    x1 = np.maximum(x - r, 0)
    x2 = np.minimum(x + r, W - 1) + 1
    return (c[..., y2[:, None], x2[None, :]] - c[..., y1[:, None], x2[None, :]]
            - c[..., y2[:, None], x1[None, :]] + c[..., y1[:, None], x1[None, :]])


def _window_fractions(events: np.ndarray, window: int) -> np.ndarray:
    counts = _box_counts(events, window)
    cells = _box_counts(np.ones_like(events, dtype=bool), window)
    return counts / cells


def fss(forecasts, truths, threshold: float, window: int) -> float:
    """Fractions skill score: 1 - FBS / FBS_worst over window event fractions.

    FBS is the mean squared difference of forecast and observed within-window
    event fractions; FBS_worst the mean of their squares. No events anywhere
    means a perfect (vacuous) score of 1.
    """
    _check_window(window)
    if not np.isfinite(threshold):
        raise ParameterError(f"threshold must be finite, got {threshold!r}")
    sq_diff_sum = 0.0
    sq_norm_sum = 0.0
    n = 0
    for f, t in _paired_cases(forecasts, truths):
        pf = _window_fractions(f >= threshold, window)
        po = _window_fractions(t >= threshold, window)
        sq_diff_sum += float(((pf - po) ** 2).sum())
        sq_norm_sum += float((pf ** 2 + po ** 2).sum())
        n += pf.size
    if sq_norm_sum == 0.0:
        return 1.0
    return 1.0 - (sq_diff_sum / n) / (sq_norm_sum / n)


def psd_radial(field_2d: np.ndarray):
    """Radially averaged power spectral density of one H x W field.

    The mean is removed, the 2-D DFT power is normalized so the total over
    all frequencies equals H * W * variance (Parseval), and power is averaged
    within integer radial wavenumber bins.

    Returns
    -------
    (wavenumbers, power) : integer bin centers and per-bin mean power.
    """
    field_2d = np.asarray(field_2d, dtype=np.float64)
    if field_2d.ndim != 2 or min(field_2d.shape) < 4:
        raise ParameterError(f"need a 2-D field with sides >= 4, got shape {field_2d.shape}")
    H, W = field_2d.shape
    spectrum = np.fft.fft2(field_2d - field_2d.mean())
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / (H * W)
    ky = np.fft.fftfreq(H) * H
    kx = np.fft.fftfreq(W) * W
    radius = np.hypot(ky[:, None], kx[None, :])
    bins = np.rint(radius).astype(int)
    sums = np.bincount(bins.ravel(), weights=power.ravel())
    counts = np.bincount(bins.ravel())
    present = counts > 0
    k = np.nonzero(present)[0]
    return k, sums[present] / counts[present]


@dataclass
class EconomicValueResult:
    """Relative value per cost-loss ratio plus the rates behind it."""

    ratios: np.ndarray
    values: np.ndarray        # NaN where the base rate makes the value undefined
    hit_rate: float
    false_alarm_rate: float
    base_rate: float
    decision_rule: str = "any-member-exceeds"
    table: ContingencyTable = field(default_factory=ContingencyTable)


def economic_value(forecasts, truths, threshold: float, cost_loss_ratios) -> EconomicValueResult:
    """Relative economic value of threshold-based precaution decisions.

    Forecast events fire when any ensemble member reaches the threshold
    (members stacked on the leading axis when one more dimension than the
    truth). With hit rate H, false-alarm rate F and base rate s, the value at
    cost-loss ratio r is

        V(r) = (min(r, s) - F r (1 - s) + H s (1 - r) - s) / (min(r, s) - s r)

    which is 1 for a perfect forecast and <= 0 for a skill-free one. A base
    rate of 0 or 1 leaves V undefined; those entries are NaN.
    """
    ratios = np.asarray(list(cost_loss_ratios), dtype=np.float64)
    if ratios.size == 0 or np.any((ratios <= 0.0) | (ratios >= 1.0)):
        raise ParameterError("cost-loss ratios must lie strictly in (0, 1)")
    table = ContingencyTable()
    fs, ts = _as_cases(forecasts), _as_cases(truths)
    if len(fs) != len(ts):
        raise ParameterError(f"{len(fs)} forecasts vs {len(ts)} truths")
    for f, t in zip(fs, ts):
        if f.ndim == t.ndim + 1:
            fe = np.any(f >= threshold, axis=0)
        elif f.shape == t.shape:
            fe = f >= threshold
        else:
            raise ShapeError(f"forecast shape {f.shape} incompatible with truth {t.shape}")
        if fe.shape != t.shape:
            raise ShapeError(f"event shape {fe.shape} != truth shape {t.shape}")
        te = t >= threshold
        table = table + ContingencyTable(
            hits=int(np.count_nonzero(fe & te)),
            misses=int(np.count_nonzero(~fe & te)),
            false_alarms=int(np.count_nonzero(fe & ~te)),
            correct_rejections=int(np.count_nonzero(~fe & ~te)),
        )
    s = table.base_rate
    hr = table.hit_rate
    far = table.false_alarm_rate
    values = np.full(ratios.shape, np.nan)
    if table.total and 0.0 < s < 1.0:
        for i, r in enumerate(ratios):
            num = min(r, s) - far * r * (1.0 - s) + hr * s * (1.0 - r) - s
            den = min(r, s) - s * r
            values[i] = num / den
    return EconomicValueResult(ratios=ratios, values=values, hit_rate=hr,
                               false_alarm_rate=far, base_rate=s, table=table)


@dataclass
class ErrorScores:
    rmse: float
    mae: float
    rmse_by_lead: np.ndarray
    mae_by_lead: np.ndarray


def rmse_mae(forecast: np.ndarray, truth: np.ndarray) -> ErrorScores:
    """Pixel RMSE and MAE, overall and per lead frame (leading axis)."""
    forecast = np.asarray(forecast, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if forecast.shape != truth.shape:
        raise ShapeError(f"forecast shape {forecast.shape} != truth shape {truth.shape}")
    diff = forecast - truth
    lead_axes = tuple(range(1, diff.ndim))
    return ErrorScores(
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        mae=float(np.mean(np.abs(diff))),
        rmse_by_lead=np.sqrt(np.mean(diff ** 2, axis=lead_axes)),
        mae_by_lead=np.mean(np.abs(diff), axis=lead_axes),
    )
