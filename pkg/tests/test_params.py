import gzip

import numpy as np
import pytest
import yaml

from meta_forecast.exceptions import DataError, NumericError
from meta_forecast.config import TrainConfig
from meta_forecast.frequency import kind_to_frequency
from meta_forecast.params import ModelSpec, GlobalParams, average_params, GAMMA_RAW_INIT

QUARTERLY = kind_to_frequency['quarterly']

def make_params(seed=0, **config_overrides):
  config = TrainConfig(rep_dim=5, **config_overrides)
  spec = ModelSpec.from_config(config, QUARTERLY)
  return GlobalParams.initialize(spec, np.random.default_rng(seed))


def test_gamma_starts_at_one():
  assert GAMMA_RAW_INIT == pytest.approx(0.5413, abs=1e-4)
  assert make_params().gamma == pytest.approx(1.0, abs=1e-12)

def test_spec_from_config():
  spec = ModelSpec.from_config(TrainConfig(context_mult=1.5, rep_dim=7, log_scale_covariate=False), QUARTERLY)
  assert spec.horizon == 8
  assert spec.context_len == 12
  assert spec.lags == tuple(QUARTERLY.default_lags)
  assert spec.input_dim == len(QUARTERLY.default_lags) + 1
  assert spec.hidden_dim == 7
  assert not spec.has_global_head

def test_spec_round_trips_through_dict():
  spec = ModelSpec.from_config(TrainConfig(adaptation='ada', ada_gamma=2.5, normalize_age=True), QUARTERLY, horizon=4)
  assert ModelSpec.from_dict(spec.to_dict()) == spec

def test_global_head_only_when_needed():
  assert not 'w_global' in make_params().tensors
  assert make_params(adaptation='global_head').tensors['w_global'].shape == (5,)
  assert 'w_global' in make_params(adaptation='ada').tensors

def test_initialization_is_seeded():
  a, b, c = make_params(1), make_params(1), make_params(2)
  assert np.array_equal(a.flatten(), b.flatten())
  assert not np.array_equal(a.flatten(), c.flatten())

def test_flatten_and_unflatten():
  params = make_params()
  vector = params.flatten()
  assert vector.shape == (params.size,)
  restored = params.unflatten(vector * 2.0)
  for name in params.names:
    assert np.array_equal(restored.tensors[name], params.tensors[name] * 2.0)
  with pytest.raises(NumericError):
    params.unflatten(vector[:-1])

def test_save_and_load(tmp_path):
  params = make_params(backbone='ff')
  path = str(tmp_path / 'model.yaml')
  params.save(path, step=50)
  loaded, step = GlobalParams.load_with_step(path)
  assert step == 50
  assert loaded.spec == params.spec
  assert np.array_equal(loaded.flatten(), params.flatten())

def test_saved_files_are_deterministic(tmp_path):
  params = make_params()
  for name in ('a.yaml', 'b.yaml', 'a.yaml.gz', 'b.yaml.gz'):
    params.save(str(tmp_path / name))
  assert (tmp_path / 'a.yaml').read_bytes() == (tmp_path / 'b.yaml').read_bytes()
  assert (tmp_path / 'a.yaml.gz').read_bytes() == (tmp_path / 'b.yaml.gz').read_bytes()
  assert gzip.decompress((tmp_path / 'a.yaml.gz').read_bytes()) == (tmp_path / 'a.yaml').read_bytes()
  assert np.array_equal(GlobalParams.load(str(tmp_path / 'a.yaml.gz')).flatten(), params.flatten())

def test_load_rejects_foreign_documents(tmp_path):
  path = tmp_path / 'other.yaml'
  path.write_text(yaml.dump(dict(format='something-else')))
  with pytest.raises(DataError):
    GlobalParams.load(str(path))

def test_load_rejects_missing_tensor(tmp_path):
  doc = make_params().to_document()
  del doc['tensors']['gamma_raw']
  path = tmp_path / 'broken.yaml'
  path.write_text(yaml.dump(doc))
  with pytest.raises(DataError):
    GlobalParams.load(str(path))

def test_load_rejects_wrong_shape(tmp_path):
  params = make_params(backbone='linear')
  tensors = dict(params.tensors)
  tensors['lin.b'] = np.zeros(6)
  path = tmp_path / 'shape.yaml'
  path.write_bytes(params.with_tensors(tensors).render())
  with pytest.raises(DataError):
    GlobalParams.load(str(path))

def test_load_missing_file(tmp_path):
  with pytest.raises(DataError):
    GlobalParams.load(str(tmp_path / 'nothing.yaml'))

def test_average_of_identical_snapshots():
  params = make_params()
  averaged = average_params([params.copy() for _ in range(5)])
  for name in params.names:
    assert np.allclose(averaged.tensors[name], params.tensors[name], rtol=1e-12, atol=0.0)

def test_average_is_the_mean():
  a = make_params(1)
  b = make_params(2)
  averaged = average_params([a, b])
  assert np.allclose(averaged.flatten(), (a.flatten() + b.flatten()) / 2.0)

def test_average_rejects_bad_input():
  with pytest.raises(NumericError):
    average_params([])
  with pytest.raises(NumericError):
    average_params([make_params(), make_params(adaptation='global_head')])

def test_bind_places_tensors_on_tape():
  from meta_forecast.autodiff import Tape
  params = make_params()
  tape = Tape()
  variables = params.bind(tape)
  constants = params.bind(tape, trainable=False)
  assert all(v.requires_grad for v in variables.values())
  assert not any(v.requires_grad for v in constants.values())
  assert set(variables.keys()) == set(params.names)
