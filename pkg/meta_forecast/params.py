#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Global model parameters (backbone weights, the ridge regularizer and, for the
global-head variants, the global output weights) together with the metadata
needed to rebuild the forecasting pipeline, and their on-disk format.

A model file is a YAML document with sorted keys. Tensors are stored as the
base64 encoding of their little-endian float64 bytes, so saving the same
parameters twice yields byte-identical files and reloading restores every bit.
Paths ending in '.gz' are gzipped with a fixed modification time, which keeps
compressed files deterministic as well.
"""

from typing import Optional, List, Dict, Tuple, Sequence, Any

import os
import gzip
import math
import logging
from io import BytesIO
from base64 import b64encode, b64decode
from dataclasses import dataclass, field

import numpy as np
import yaml

from .typehints import FloatArray, JsonableDict
from .exceptions import ConfigError, DataError, NumericError
from .config import CovariateConfig, TrainConfig, ADAPTATIONS, STRATEGIES
from .frequency import Frequency, parse_frequency
from .dataset import covariate_dim
from .backbone import Backbone, make_backbone
from .autodiff import Tape, Value

logger = logging.getLogger(__name__)

MODEL_FORMAT: str = 'meta-forecast-model'
MODEL_FORMAT_VERSION: int = 1

GZIP_FIXED_MTIME: float = 0.0
"""Timestamp written into gzipped model files so their bytes depend only on the parameters"""

GAMMA_RAW_INIT: float = math.log(math.e - 1.0)
"""softplus(GAMMA_RAW_INIT) == 1"""

@dataclass(frozen=True)
class ModelSpec:
  """Everything besides the weights that is needed to run a model"""

  backbone: str
  rep_dim: int
  hidden_dim: int
  zoneout: float
  freq: Frequency
  lags: Tuple[int, ...]
  covariates: CovariateConfig
  context_len: int
  horizon: int
  """Training horizon; prediction may use a different one"""
  adaptation: str
  strategy: str
  ada_gamma: float = 1.0

  @property
  def input_dim(self) -> int:
    return covariate_dim(self.lags, self.covariates)

  @property
  def has_global_head(self) -> bool:
    return self.adaptation != 'meta'

  def make_backbone(self) -> Backbone:
    return make_backbone(self.backbone, self.input_dim, self.rep_dim, self.hidden_dim, self.zoneout)

  def to_dict(self) -> JsonableDict:
    return dict(
        backbone=self.backbone,
        rep_dim=self.rep_dim,
        hidden_dim=self.hidden_dim,
        zoneout=self.zoneout,
        freq=self.freq.token,
        lags=list(self.lags),
        log_scale_covariate=self.covariates.log_scale,
        normalize_age=self.covariates.normalize_age,
        warmup_over_padding=self.covariates.warmup_over_padding,
        context_len=self.context_len,
        horizon=self.horizon,
        adaptation=self.adaptation,
        strategy=self.strategy,
        ada_gamma=self.ada_gamma,
      )

  @classmethod
  def from_dict(cls, data: Dict[str, Any]) -> 'ModelSpec':
    try:
      result = cls(
          backbone=str(data['backbone']),
          rep_dim=int(data['rep_dim']),
          hidden_dim=int(data['hidden_dim']),
          zoneout=float(data['zoneout']),
          freq=parse_frequency(str(data['freq'])),
          lags=tuple(int(x) for x in data['lags']),
          covariates=CovariateConfig(
              log_scale=bool(data['log_scale_covariate']),
              normalize_age=bool(data['normalize_age']),
              warmup_over_padding=bool(data['warmup_over_padding']),
            ),
          context_len=int(data['context_len']),
          horizon=int(data['horizon']),
          adaptation=str(data['adaptation']),
          strategy=str(data['strategy']),
          ada_gamma=float(data.get('ada_gamma', 1.0)),
        )
    except (KeyError, TypeError, ValueError) as e:
      raise DataError(f"Invalid model description: {e}")
    if not result.adaptation in ADAPTATIONS or not result.strategy in STRATEGIES:
      raise DataError(f"Invalid model description: adaptation {result.adaptation!r}, strategy {result.strategy!r}")
    return result

  @classmethod
  def from_config(cls, config: TrainConfig, freq: Frequency, horizon: Optional[int]=None, lags: Optional[Sequence[int]]=None) -> 'ModelSpec':
    """Derive the model description of a training run on a dataset of frequency freq"""
    h = horizon if not horizon is None else (config.horizon if not config.horizon is None else freq.source_horizon)
    return cls(
        backbone=config.backbone,
        rep_dim=config.rep_dim,
        hidden_dim=config.effective_hidden_dim,
        zoneout=config.zoneout,
        freq=freq,
        lags=tuple(freq.default_lags if lags is None else lags),
        covariates=config.covariates,
        context_len=config.context_len(h),
        horizon=h,
        adaptation=config.adaptation,
        strategy=config.strategy,
        ada_gamma=config.ada_gamma,
      )

def _encode_tensor(tensor: FloatArray) -> JsonableDict:
  data = np.ascontiguousarray(tensor, dtype='<f8')
  return dict(shape=list(data.shape), data=b64encode(data.tobytes()).decode('utf-8'))

def _decode_tensor(name: str, encoded: Any) -> FloatArray:
  try:
    shape = tuple(int(n) for n in encoded['shape'])
    raw = b64decode(encoded['data'])
  except (KeyError, TypeError, ValueError) as e:
    raise DataError(f"Tensor '{name}' is malformed: {e}")
  result = np.frombuffer(raw, dtype='<f8')
  expected = int(np.prod(shape)) if len(shape) > 0 else 1
  if result.size != expected:
    raise DataError(f"Tensor '{name}' holds {result.size} values, shape {shape} needs {expected}")
  return result.astype(np.float64).reshape(shape)

@dataclass
class GlobalParams:
  """The trainable state of a model: named weight tensors plus the description needed to use them"""

  spec: ModelSpec
  tensors: Dict[str, FloatArray] = field(default_factory=dict)

  @classmethod
  def initialize(cls, spec: ModelSpec, rng: np.random.Generator) -> 'GlobalParams':
    """Fresh parameters: backbone weights from its initializer, gamma = 1, w_global uniform in +-1/sqrt(d)"""
    tensors = spec.make_backbone().init_parameters(rng)
    tensors['gamma_raw'] = np.array(GAMMA_RAW_INIT, dtype=np.float64)
    if spec.has_global_head:
      bound = 1.0 / math.sqrt(spec.rep_dim)
      tensors['w_global'] = rng.uniform(-bound, bound, size=(spec.rep_dim,))
    return cls(spec, tensors)

  @property
  def names(self) -> List[str]:
    return sorted(self.tensors.keys())

  @property
  def gamma(self) -> float:
    """The ridge regularizer softplus(gamma_raw); always > 0"""
    return float(np.logaddexp(0.0, self.tensors['gamma_raw']))

  @property
  def size(self) -> int:
    return sum(int(t.size) for t in self.tensors.values())

  def bind(self, tape: Tape, trainable: bool=True) -> Dict[str, Value]:
    """Place every tensor on a tape, as variables or constants"""
    return dict(
        (name, tape.variable(self.tensors[name]) if trainable else tape.constant(self.tensors[name]))
          for name in self.names
      )

  def copy(self) -> 'GlobalParams':
    return GlobalParams(self.spec, dict((k, v.copy()) for k, v in self.tensors.items()))

  def with_tensors(self, tensors: Dict[str, FloatArray]) -> 'GlobalParams':
    return GlobalParams(self.spec, tensors)

  def flatten(self) -> FloatArray:
    """All tensors concatenated in name order"""
    return np.concatenate([self.tensors[name].reshape(-1) for name in self.names])

  def unflatten(self, vector: FloatArray) -> 'GlobalParams':
    """New parameters with tensors read back from a flat vector laid out as flatten() does"""
    if vector.shape != (self.size,):
      raise NumericError(f"Parameter vector has shape {vector.shape}, expected ({self.size},)")
    tensors: Dict[str, FloatArray] = {}
    offset = 0
    for name in self.names:
      shape = self.tensors[name].shape
      count = int(self.tensors[name].size)
      tensors[name] = np.array(vector[offset:offset + count], dtype=np.float64).reshape(shape)
      offset += count
    return GlobalParams(self.spec, tensors)

  def is_finite(self) -> bool:
    return all(bool(np.all(np.isfinite(t))) for t in self.tensors.values())

  def to_document(self, step: Optional[int]=None) -> JsonableDict:
    doc: JsonableDict = dict(
        format=MODEL_FORMAT,
        version=MODEL_FORMAT_VERSION,
        spec=self.spec.to_dict(),
        tensors=dict((name, _encode_tensor(self.tensors[name])) for name in self.names),
      )
    if not step is None:
      doc['step'] = step
    return doc

  @classmethod
  def from_document(cls, doc: Any) -> Tuple['GlobalParams', Optional[int]]:
    if not isinstance(doc, dict) or doc.get('format', None) != MODEL_FORMAT:
      raise DataError("Not a meta-forecast model document")
    if doc.get('version', None) != MODEL_FORMAT_VERSION:
      raise DataError(f"Unsupported model format version {doc.get('version', None)!r}")
    spec = ModelSpec.from_dict(doc.get('spec', {}))
    encoded = doc.get('tensors', {})
    if not isinstance(encoded, dict):
      raise DataError("Model document 'tensors' must be a mapping")
    params = cls(spec, dict((str(k), _decode_tensor(str(k), v)) for k, v in encoded.items()))
    expected = set(spec.make_backbone().parameter_shapes().keys()) | {'gamma_raw'}
    if spec.has_global_head:
      expected.add('w_global')
    if set(params.tensors.keys()) != expected:
      raise DataError(f"Model tensors {params.names} do not match the {spec.backbone} backbone ({sorted(expected)})")
    shapes = spec.make_backbone().parameter_shapes()
    for name, shape in shapes.items():
      if params.tensors[name].shape != shape:
        raise DataError(f"Tensor '{name}' has shape {params.tensors[name].shape}, expected {shape}")
    if not params.is_finite():
      raise DataError("Model contains non-finite weights")
    step = doc.get('step', None)
    return params, (None if step is None else int(step))

  def render(self, step: Optional[int]=None) -> bytes:
    """The serialized file contents"""
    content = yaml.dump(self.to_document(step), sort_keys=True, default_flow_style=False, width=10000)
    return content.encode('utf-8')

  def save(self, path: str, step: Optional[int]=None) -> None:
    """Write a model (or, with step, a checkpoint) file atomically"""
    bcontent = self.render(step)
    if path.endswith('.gz'):
      buff = BytesIO()
      with gzip.GzipFile(None, 'wb', compresslevel=9, fileobj=buff, mtime=GZIP_FIXED_MTIME) as g:
        g.write(bcontent)
      bcontent = buff.getvalue()
    tmp_path = path + '.tmp'
    with open(tmp_path, 'wb') as f:
      f.write(bcontent)
    os.replace(tmp_path, path)

  @classmethod
  def load_with_step(cls, path: str) -> Tuple['GlobalParams', Optional[int]]:
    try:
      with open(path, 'rb') as f:
        bcontent = f.read()
    except OSError as e:
      raise DataError(f"Cannot read model file {path}: {e}")
    if bcontent[:2] == b'\x1f\x8b':
      bcontent = gzip.decompress(bcontent)
    try:
      doc = yaml.safe_load(bcontent.decode('utf-8'))
    except (UnicodeDecodeError, yaml.YAMLError) as e:
      raise DataError(f"Model file {path} is not a valid model document: {e}")
    return cls.from_document(doc)

  @classmethod
  def load(cls, path: str) -> 'GlobalParams':
    """Read a model or checkpoint file

    Raises:
        DataError: The file is unreadable or does not describe a consistent model.
    """
    return cls.load_with_step(path)[0]

def average_params(snapshots: Sequence[GlobalParams]) -> GlobalParams:
  """Arithmetic mean of each tensor over snapshots of the same model

  Raises:
      NumericError: No snapshots, or their tensor sets differ.
  """
  if len(snapshots) == 0:
    raise NumericError("Cannot average zero parameter snapshots")
  first = snapshots[0]
  for other in snapshots[1:]:
    if other.names != first.names:
      raise NumericError("Parameter snapshots have different tensors")
  tensors = dict(
      (name, np.mean(np.stack([s.tensors[name] for s in snapshots]), axis=0))
        for name in first.names
    )
  return GlobalParams(first.spec, tensors)
