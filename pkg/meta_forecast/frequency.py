#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""Time frequencies, their default lag sets and source horizons, and the source/target pairing table
"""

from typing import Optional, List, Dict, Tuple

import pandas as pd

from .exceptions import DataError

class Frequency:
  """
  A descriptor that correlates a sampling frequency with the time lags fed to the
  model as covariates and with the forecast horizon used when the frequency is
  the training (source) dataset.
  """

  kind: str
  """Long name; e.g., 'monthly'"""

  token: str
  """Canonical short token as it appears in dataset metadata; e.g., 'M'"""

  default_lags: List[int]
  """Positive, strictly increasing lags used as covariates"""

  source_horizon: int
  """Forecast horizon of the source dataset of this frequency"""

  offset: pd.DateOffset
  """Calendar step between consecutive observations"""

  aliases: Tuple[str, ...]
  """Additional metadata tokens accepted for this frequency"""

  def __init__(
        self,
        kind: str,
        token: str,
        default_lags: List[int],
        source_horizon: int,
        offset: pd.DateOffset,
        aliases: Tuple[str, ...]=()
      ):
    """Construct a frequency descriptor

    Args:
        kind (str): Long name, e.g. 'monthly'.
        token (str): Canonical metadata token, e.g. 'M'.
        default_lags (List[int]): The lag set; must be positive and strictly increasing.
        source_horizon (int): Forecast horizon when used as a source dataset.
        offset (pd.DateOffset): Calendar step between observations.
        aliases (Tuple[str, ...], optional): Other accepted tokens. Defaults to ().
    """
    assert len(default_lags) > 0 and default_lags[0] > 0
    assert all(a < b for a, b in zip(default_lags, default_lags[1:]))
    self.kind = kind
    self.token = token
    self.default_lags = list(default_lags)
    self.source_horizon = source_horizon
    self.offset = offset
    self.aliases = aliases

  @property
  def max_lag(self) -> int:
    return self.default_lags[-1]

  def timestamp(self, start: pd.Timestamp, index: int) -> pd.Timestamp:
    """Timestamp of the observation index steps after start (index 0 is start itself)"""
    return start + index * self.offset

  def __repr__(self) -> str:
    return f"Frequency({self.kind})"

_frequency_list: List[Frequency] = [
    Frequency('yearly', 'Y', [1, 2, 3, 4, 5, 6, 7], 6, pd.DateOffset(years=1), ('A', 'YS', 'AS', '12M')),
    Frequency('quarterly', 'Q', [1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13], 8, pd.DateOffset(months=3), ('QS', '3M')),
    Frequency('monthly', 'M', [1, 2, 3, 4, 5, 6, 7, 11, 12, 13, 23, 24, 25, 35, 36, 37], 18, pd.DateOffset(months=1), ('MS',)),
    Frequency('weekly', 'W', [1, 2, 3, 4, 5, 6, 7, 8, 12, 51, 52, 53, 103, 104, 105, 155, 156, 157], 13, pd.DateOffset(weeks=1)),
    Frequency(
        'daily', 'D',
        [1, 2, 3, 4, 5, 6, 7, 8, 13, 14, 15, 20, 21, 22, 27, 28, 29, 30, 31, 56,
         84, 363, 364, 365, 727, 728, 729, 1091, 1092, 1093],
        14, pd.DateOffset(days=1), ('B',)),
    Frequency(
        'hourly', 'H',
        [1, 2, 3, 4, 5, 6, 7, 23, 24, 25, 47, 48, 49, 71, 72, 73,
         95, 96, 97, 119, 120, 121, 143, 144, 145, 167, 168, 169,
         335, 336, 337, 503, 504, 505, 671, 672, 673, 719, 720, 721],
        48, pd.DateOffset(hours=1), ('1H',)),
  ]
"""The frequencies known to the package"""

kind_to_frequency: Dict[str, Frequency] = dict((f.kind, f) for f in _frequency_list)
"""A map from long name ('monthly') to Frequency"""

token_to_frequency: Dict[str, Frequency] = dict(
    [(f.token, f) for f in _frequency_list] + [(a, f) for f in _frequency_list for a in f.aliases]
  )
"""A map from metadata token (canonical or alias) to Frequency"""

SOURCE_TARGETS: Dict[str, Tuple[int, List[Tuple[str, int]]]] = {
    'M4-yearly': (6, [('M3-yearly', 6), ('tour-year', 4)]),
    'M4-quarterly': (8, [('M3-quart', 8), ('M3-other', 8), ('tour-quart', 8)]),
    'M4-monthly': (18, [('M3-monthly', 18), ('tour-month', 24)]),
    'M4-hourly': (48, [('electr', 24), ('traff', 24)]),
  }
"""Source dataset -> (source horizon, [(target dataset, target horizon)]). Target horizons may differ from the source's."""

def parse_frequency(token: str) -> Frequency:
  """Look up a frequency from a metadata token or long name.

  Accepts canonical tokens ('M'), aliases ('MS', '12M'), anchored forms ('W-SUN',
  'Q-DEC'), lower case, and long names ('monthly').

  Args:
      token (str): The token.

  Raises:
      DataError: The token does not name a known frequency.

  Returns:
      Frequency: The matching descriptor.
  """
  raw = token.strip()
  result: Optional[Frequency] = kind_to_frequency.get(raw.lower(), None)
  if result is None:
    normalized = raw.upper().split('-', 1)[0]
    result = token_to_frequency.get(normalized, None)
    if result is None and normalized.startswith('1'):
      result = token_to_frequency.get(normalized[1:], None)
  if result is None:
    raise DataError(f"Unknown frequency token: {token!r}")
  return result

def recommended_targets(freq: Frequency) -> List[Tuple[str, int]]:
  """Target datasets (with their horizons) paired with the M4 source dataset of freq; empty if there is none"""
  entry = SOURCE_TARGETS.get(f"M4-{freq.kind}", None)
  return [] if entry is None else list(entry[1])
