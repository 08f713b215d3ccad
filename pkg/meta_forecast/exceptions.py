#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""Exception classes for meta_forecast package"""

class MetaForecastError(Exception):
  """Generic exception raised by package meta_forecast"""
  pass

class ConfigError(MetaForecastError):
  """A configuration value is missing, unknown, or out of its allowed range"""
  pass

class DataError(MetaForecastError):
  """A dataset record, forecast export or metric input is malformed or misaligned"""
  pass

class NumericError(MetaForecastError):
  """A computation produced a non-finite value or a factorization failed"""
  pass

class ShapeError(NumericError):
  """Tensor operands have incompatible shapes"""
  pass
