#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""Run manifests: the resolved configuration, seeds, artifact hashes and timings of one command
"""

from typing import Optional, Dict, Any

import os
import time
import hashlib
import logging
from dataclasses import dataclass, field

import yaml

from .typehints import JsonableDict
from .version import __version__

logger = logging.getLogger(__name__)

MANIFEST_NAME: str = 'manifest.yaml'

def sha256_file(path: str) -> str:
  h = hashlib.sha256()
  with open(path, 'rb') as f:
    for chunk in iter(lambda: f.read(1 << 20), b''):
      h.update(chunk)
  return h.hexdigest()

@dataclass
class RunManifest:
  """
  Written when a command starts (status 'running') and rewritten when it ends
  ('ok' or 'failed'), always atomically, so an interrupted run leaves a readable
  manifest behind.
  """

  path: str
  command: str
  config: JsonableDict
  seeds: Dict[str, int] = field(default_factory=dict)
  artifacts: Dict[str, str] = field(default_factory=dict)
  """Artifact path relative to the manifest's directory -> sha256"""
  timings: Dict[str, float] = field(default_factory=dict)
  """Phase name -> wall-clock seconds"""
  details: JsonableDict = field(default_factory=dict)
  status: str = 'running'
  tool_version: str = __version__
  started_at: float = field(default_factory=time.time)
  finished_at: Optional[float] = None

  def to_dict(self) -> JsonableDict:
    return dict(
        command=self.command,
        config=self.config,
        seeds=dict(self.seeds),
        artifacts=dict(self.artifacts),
        timings=dict(self.timings),
        details=dict(self.details),
        status=self.status,
        tool_version=self.tool_version,
        started_at=self.started_at,
        finished_at=self.finished_at,
      )

  def write(self) -> None:
    directory = os.path.dirname(self.path)
    if directory != '':
      os.makedirs(directory, exist_ok=True)
    tmp_path = self.path + '.tmp'
    with open(tmp_path, 'w', encoding='utf-8') as f:
      yaml.dump(self.to_dict(), f, sort_keys=True, default_flow_style=False)
    os.replace(tmp_path, self.path)

  def begin(self) -> 'RunManifest':
    self.status = 'running'
    self.write()
    return self

  def add_artifact(self, path: str) -> str:
    """Record the hash of a file written by the run"""
    digest = sha256_file(path)
    self.artifacts[os.path.relpath(path, os.path.dirname(os.path.abspath(self.path)))] = digest
    return digest

  def time_phase(self, name: str, seconds: float) -> None:
    self.timings[name] = self.timings.get(name, 0.0) + seconds

  def finalize(self, status: str='ok') -> None:
    self.status = status
    self.finished_at = time.time()
    self.timings['total'] = self.finished_at - self.started_at
    self.write()
    logger.debug(f"Manifest {self.path} finalized with status {status}")

def load_manifest(path: str) -> Dict[str, Any]:
  with open(path, 'r', encoding='utf-8') as f:
    return dict(yaml.safe_load(f))
