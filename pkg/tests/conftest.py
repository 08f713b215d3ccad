#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

from typing import List

import pytest

def pytest_addoption(parser: pytest.Parser) -> None:
  parser.addoption('--run-slow', action='store_true', default=False, help="run the long reproduction tests")

def pytest_collection_modifyitems(config: pytest.Config, items: List[pytest.Item]) -> None:
  if config.getoption('--run-slow'):
    return
  skip_slow = pytest.mark.skip(reason="needs --run-slow")
  for item in items:
    if 'slow' in item.keywords:
      item.add_marker(skip_slow)
