#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Reproducible synthetic meta-datasets: positive series built from a level, an
exponential trend, one seasonal sinusoid and multiplicative noise. A source
family and a shifted target family differ in their seasonal periods and in
the ranges of every component, so a model trained on one and applied to the
other is forecasting genuinely out-of-sample series.
"""

from typing import List, Tuple

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .typehints import FloatArray
from .exceptions import ConfigError
from .frequency import Frequency, kind_to_frequency
from .dataset import TimeSeries

SYNTHETIC_START = pd.Timestamp('2000-01-01')

@dataclass(frozen=True)
class GeneratorFamily:
  """Ranges from which the components of each generated series are drawn"""

  name: str
  periods: Tuple[int, ...]
  amplitude: Tuple[float, float]
  """Seasonal amplitude relative to the level"""
  trend: Tuple[float, float]
  """Log growth per step"""
  noise: Tuple[float, float]
  """Standard deviation of the multiplicative noise"""
  level: Tuple[float, float]
  """Drawn log-uniformly"""
  length: Tuple[int, int]

SOURCE_FAMILY = GeneratorFamily(
    'source', periods=(4, 6, 12), amplitude=(0.05, 0.4), trend=(-0.004, 0.01),
    noise=(0.01, 0.08), level=(10.0, 10000.0), length=(60, 160),
  )

SHIFTED_FAMILY = GeneratorFamily(
    'shifted', periods=(3, 8, 12), amplitude=(0.1, 0.45), trend=(-0.008, 0.015),
    noise=(0.02, 0.1), level=(1.0, 50000.0), length=(50, 140),
  )

def sinusoid(length: int, period: float, level: float=1.0, amplitude: float=0.5, phase: float=0.0) -> FloatArray:
  """level * (1 + amplitude * sin(2πt/period + phase)) for t = 0..length-1"""
  t = np.arange(length, dtype=np.float64)
  return level * (1.0 + amplitude * np.sin(2.0 * math.pi * t / period + phase))

def generate_values(rng: np.random.Generator, family: GeneratorFamily, length: int) -> FloatArray:
  period = int(rng.choice(family.periods))
  amplitude = rng.uniform(*family.amplitude)
  trend = rng.uniform(*family.trend)
  noise = rng.uniform(*family.noise)
  level = math.exp(rng.uniform(math.log(family.level[0]), math.log(family.level[1])))
  phase = rng.uniform(0.0, 2.0 * math.pi)
  t = np.arange(length, dtype=np.float64)
  shocks = np.clip(rng.standard_normal(length), -3.0, 3.0)
  seasonal = sinusoid(length, period, 1.0, amplitude, phase)
  return level * np.exp(trend * t) * seasonal * (1.0 + noise * shocks)

def synthetic_dataset(
      count: int,
      family: GeneratorFamily=SOURCE_FAMILY,
      freq: Frequency=kind_to_frequency['monthly'],
      seed: int=0,
      prefix: str=''
    ) -> List[TimeSeries]:
  """count series of one family, identical for identical arguments

  Raises:
      ConfigError: count is negative.
  """
  if count < 0:
    raise ConfigError(f"Cannot generate {count} series")
  rng = np.random.default_rng(seed)
  result: List[TimeSeries] = []
  for i in range(count):
    length = int(rng.integers(family.length[0], family.length[1] + 1))
    values = generate_values(rng, family, length)
    result.append(TimeSeries(f"{prefix or family.name}-{i}", SYNTHETIC_START, freq, values))
  return result

def toy_meta_dataset(
      seed: int=0,
      source_count: int=500,
      target_count: int=200,
      freq: Frequency=kind_to_frequency['monthly']
    ) -> Tuple[List[TimeSeries], List[TimeSeries]]:
  """A source dataset and a target dataset drawn from the shifted family"""
  seeds = np.random.SeedSequence(seed).generate_state(2)
  return (
      synthetic_dataset(source_count, SOURCE_FAMILY, freq, int(seeds[0])),
      synthetic_dataset(target_count, SHIFTED_FAMILY, freq, int(seeds[1])),
    )
