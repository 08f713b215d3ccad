import hashlib

from meta_forecast.version import __version__
from meta_forecast.manifest import RunManifest, load_manifest, sha256_file

def test_manifest_lifecycle(tmp_path):
  path = str(tmp_path / 'out' / 'manifest.yaml')
  manifest = RunManifest(path, 'train', dict(seed=3), seeds=dict(master=3)).begin()
  assert load_manifest(path)['status'] == 'running'

  artifact = tmp_path / 'out' / 'model.yaml'
  artifact.write_bytes(b'weights')
  digest = manifest.add_artifact(str(artifact))
  assert digest == hashlib.sha256(b'weights').hexdigest()
  manifest.time_phase('train', 1.5)
  manifest.time_phase('train', 0.5)
  manifest.details['checkpoints'] = 2
  manifest.finalize()

  saved = load_manifest(path)
  assert saved['status'] == 'ok'
  assert saved['command'] == 'train'
  assert saved['artifacts'] == {'model.yaml': digest}
  assert saved['timings']['train'] == 2.0
  assert saved['timings']['total'] >= 0.0
  assert saved['seeds'] == dict(master=3)
  assert saved['details'] == dict(checkpoints=2)
  assert saved['tool_version'] == __version__

def test_failed_run(tmp_path):
  path = str(tmp_path / 'manifest.yaml')
  RunManifest(path, 'evaluate', {}).begin().finalize('failed')
  assert load_manifest(path)['status'] == 'failed'

def test_sha256_of_large_file(tmp_path):
  content = b'x' * (3 << 20)
  path = tmp_path / 'big.bin'
  path.write_bytes(content)
  assert sha256_file(str(path)) == hashlib.sha256(content).hexdigest()
