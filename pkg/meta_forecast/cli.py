#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Command-line interface:

  meta-forecast train     --source <records> [--out <dir>] ...
  meta-forecast forecast  --model <model> --target <records> ...
  meta-forecast evaluate  --forecasts <file>[,<file>...] --target <records> --metric smape|nd|mape
  meta-forecast search    --source <records> --trials N --topk K ...
  meta-forecast ablate    --source <records> [--target <records>] ...
  meta-forecast gradcheck [--rep-dim 4] ...

Every key of a flat YAML config file (--config) has a matching flag, e.g.
--learning-rate for learning_rate; flags override the file. Each command writes
a manifest.yaml to its output directory. Exit status is 0 on success, 2 for
configuration errors, 3 for data errors, 4 for numeric failures (including a
failed gradient check) and 1 for anything else.
"""

from typing import Optional, List, Dict, Tuple, Sequence, Any, Callable

import os
import sys
import time
import logging
import argparse
import dataclasses

import numpy as np
import yaml

from .version import __version__
from .exceptions import MetaForecastError, ConfigError, DataError, NumericError
from .config import (
    TrainConfig, RunConfig, SearchSpace, DEFAULT_SEARCH_SPACE, RUN_KEYS, load_config_file, describe
  )
from .frequency import kind_to_frequency, recommended_targets
from .dataset import (
    TimeSeries, DatasetMetadata, ForecastTask, load_dataset, load_metadata, find_metadata, split_train_test
  )
from .params import GlobalParams, ModelSpec
from .model import forecast_series
from .training import train, pipeline_grad_check
from .evaluation import (
    ForecastSet, report, ensemble_median, holdout_targets,
    write_forecasts, read_forecasts, write_atomic
  )
from .search import random_search, ablation_grid, parse_ablation_label, trial_table, TrialResult, rank_trials
from .synthetic import synthetic_dataset, SOURCE_FAMILY
from .manifest import RunManifest, MANIFEST_NAME

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

GRADCHECK_TOLERANCE: float = 1e-4
GRADCHECK_MAX_DIM: int = 8
GRADCHECK_MAX_CONTEXT: int = 40
GRADCHECK_SPLIT: int = 24
GRADCHECK_HORIZON: int = 6
GRADCHECK_SERIES: int = 2

COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    'gradcheck': dict(
        rep_dim=4, backbone='rnn', adaptation='meta', strategy='iterated',
        context_mult=4.0, horizon=GRADCHECK_HORIZON, minibatch_size=GRADCHECK_SERIES,
      ),
  }
"""Per-command values applied before the config file and flags"""

def load_records(path: str) -> Tuple[List[TimeSeries], DatasetMetadata]:
  """A records file and its metadata sidecar"""
  if not os.path.isfile(path):
    raise DataError(f"Dataset not found: {path}")
  metadata = load_metadata(find_metadata(path))
  return load_dataset(path, metadata), metadata

def _require(value: Optional[str], flag: str) -> str:
  if value is None:
    raise ConfigError(f"This command needs {flag}")
  return value

def _start(run: RunConfig) -> RunManifest:
  os.makedirs(run.out, exist_ok=True)
  seed_init, seed_batch = run.seeds()
  manifest = RunManifest(
      os.path.join(run.out, MANIFEST_NAME), run.command, run.to_dict(),
      seeds=dict(master=run.seed, init=seed_init, batch=seed_batch),
    )
  return manifest.begin()

def _horizon(run: RunConfig, metadata: DatasetMetadata) -> int:
  return run.train.horizon if not run.train.horizon is None else metadata.prediction_length

def forecast_dataset(
      params: GlobalParams,
      series: Sequence[TimeSeries],
      horizon: int,
      holdout: bool,
      anchor: bool,
      model_id: str,
      dataset_id: str
    ) -> Tuple[ForecastSet, Dict[str, Tuple[Any, Any]]]:
  """Forecast each series independently; also returns the timestamp of each series' first forecast step"""
  result = ForecastSet(model_id, dataset_id)
  stamps: Dict[str, Tuple[Any, Any]] = {}
  for s in series:
    result.add(s.item_id, forecast_series(s, params, horizon, holdout, anchor))
    first_index = len(s) - horizon if holdout else len(s)
    stamps[s.item_id] = (s.freq.timestamp(s.start, first_index), s.freq.offset)
  return result, stamps

def cmd_train(run: RunConfig) -> int:
  """Train on the source dataset (its last horizon points held out) and write model.yaml"""
  manifest = _start(run)
  try:
    started = time.perf_counter()
    source, metadata = load_records(_require(run.source, '--source'))
    horizon = _horizon(run, metadata)
    config = run.resolved_train()
    logger.info(f"Training with {' '.join(describe(config)) or 'default settings'}")
    split = split_train_test(source, horizon)
    monitor = split.test[:config.eval_series] if config.eval_every > 0 else None
    checkpoint_dir = os.path.join(run.out, 'checkpoints')
    os.makedirs(checkpoint_dir, exist_ok=True)
    log_path = os.path.join(run.out, 'train_log.yaml')
    manifest.time_phase('load', time.perf_counter() - started)
    started = time.perf_counter()
    with open(log_path, 'w', encoding='utf-8') as log_stream:
      result = train(split.train, config, metadata.freq, horizon, checkpoint_dir, log_stream, monitor)
    manifest.time_phase('train', time.perf_counter() - started)
    model_path = os.path.join(run.out, 'model.yaml')
    result.params.save(model_path)
    manifest.add_artifact(model_path)
    manifest.add_artifact(log_path)
    for step in result.checkpoint_steps:
      manifest.add_artifact(os.path.join(checkpoint_dir, f"checkpoint-{step:06d}.yaml"))
    manifest.details.update(
        checkpoints=len(result.checkpoint_steps),
        checkpoint_steps=list(result.checkpoint_steps),
        skipped_steps=result.skipped_steps,
        train_series=len(split.train),
      )
    manifest.finalize()
    logger.info(f"Model written to {model_path}")
    return EXIT_OK
  except BaseException:
    manifest.finalize('failed')
    raise

def cmd_forecast(run: RunConfig) -> int:
  """Forecast every target series on its own and write forecasts.jsonl"""
  manifest = _start(run)
  try:
    params = GlobalParams.load(_require(run.model, '--model'))
    target_path = _require(run.target, '--target')
    target, metadata = load_records(target_path)
    spec = params.spec
    if not metadata.freq is spec.freq:
      if not run.allow_freq_mismatch:
        raise ConfigError(
            f"Model frequency {spec.freq.kind} does not match target frequency {metadata.freq.kind} "
            f"(use --allow-freq-mismatch to override)"
          )
      logger.warning(f"Forecasting {metadata.freq.kind} data with a {spec.freq.kind} model")
    pairs = recommended_targets(spec.freq)
    if len(pairs) > 0:
      logger.info(f"Targets paired with {spec.freq.kind} sources: {', '.join(f'{n}/{h}' for n, h in pairs)}")
    horizon = metadata.prediction_length
    if horizon != spec.horizon:
      logger.info(f"Rolling out {horizon} steps with a model trained on horizon {spec.horizon}")
    forecasts, stamps = forecast_dataset(
        params, target, horizon, run.holdout, run.anchor_global,
        os.path.basename(run.model or ''), os.path.basename(target_path)
      )
    os.makedirs(run.out, exist_ok=True)
    path = os.path.join(run.out, 'forecasts.jsonl')
    write_forecasts(path, forecasts, stamps)
    manifest.add_artifact(path)
    manifest.details.update(series=len(target), horizon=horizon, holdout=run.holdout)
    manifest.finalize()
    return EXIT_OK
  except BaseException:
    manifest.finalize('failed')
    raise

def cmd_evaluate(run: RunConfig) -> int:
  """Score forecast exports against the held-out tails of the target dataset and write report.yaml"""
  manifest = _start(run)
  try:
    paths = [p for p in _require(run.forecasts, '--forecasts').split(',') if p != '']
    sets = [read_forecasts(p, model_id=p) for p in paths]
    target_path = _require(run.target, '--target')
    target, _ = load_records(target_path)
    targets = holdout_targets(target, sets[0].horizon)
    result = report(sets, targets, run.metric, os.path.basename(target_path), ensemble=len(sets) > 1 or run.ensemble)
    path = os.path.join(run.out, 'report.yaml')
    result.save(path)
    manifest.add_artifact(path)
    manifest.finalize()
    print(f"{run.metric}: {result.mean:.6f}" + ('' if result.ci == 0.0 else f" ± {result.ci:.6f}"))
    if not result.ensemble is None and len(sets) > 1:
      print(f"{run.metric} (median ensemble): {result.ensemble:.6f}")
    return EXIT_OK
  except BaseException:
    manifest.finalize('failed')
    raise

def _load_space(run: RunConfig) -> SearchSpace:
  if run.search_space is None:
    return DEFAULT_SEARCH_SPACE
  try:
    with open(run.search_space, 'r', encoding='utf-8') as f:
      data = yaml.safe_load(f)
  except (OSError, yaml.YAMLError) as e:
    raise ConfigError(f"Cannot read search space {run.search_space}: {e}")
  if not isinstance(data, dict):
    raise ConfigError(f"Search space {run.search_space} must be a mapping")
  return SearchSpace.from_mapping(data)

def _read_completed(path: str) -> Dict[str, TrialResult]:
  if not os.path.isfile(path):
    return {}
  with open(path, 'r', encoding='utf-8') as f:
    rows = yaml.safe_load(f) or []
  completed = [TrialResult.from_dict(row) for row in rows]
  logger.info(f"Resuming search: {len(completed)} trials already done")
  return dict((r.key, r) for r in completed)

def cmd_search(run: RunConfig) -> int:
  """Random search; trial models go to trials/, the ranked table to search.yaml, the winners to topk.yaml"""
  manifest = _start(run)
  try:
    source, metadata = load_records(_require(run.source, '--source'))
    horizon = _horizon(run, metadata)
    space = _load_space(run)
    trials_dir = os.path.join(run.out, 'trials')
    os.makedirs(trials_dir, exist_ok=True)
    table_path = os.path.join(run.out, 'search.yaml')
    completed = _read_completed(table_path)
    finished: List[TrialResult] = list(completed.values())

    def on_trial(result: TrialResult) -> None:
      if not result.params is None:
        result.params.save(os.path.join(trials_dir, f"{result.key}.yaml"))
      finished.append(result)
      write_atomic(table_path, yaml.dump(trial_table(rank_trials(finished)), sort_keys=True))

    base = dataclasses.replace(run.train, horizon=horizon)
    results = random_search(
        source, space, run.trials, run.selection_series, np.random.default_rng(run.seed), base,
        metadata.freq, horizon, completed=completed, on_trial=on_trial, checked=not run.unchecked
      )
    write_atomic(table_path, yaml.dump(trial_table(results), sort_keys=True))
    manifest.add_artifact(table_path)
    ok = [r for r in results if r.status == 'ok']
    topk = run.topk
    if topk > len(ok):
      logger.warning(f"Only {len(ok)} successful trials; top-{topk} clipped to {len(ok)}")
      topk = len(ok)
    winners = ok[:topk]
    top_path = os.path.join(run.out, 'topk.yaml')
    write_atomic(top_path, yaml.dump(
        [dict(trial=r.trial, score=r.score, model=os.path.join('trials', f"{r.key}.yaml")) for r in winners],
        sort_keys=True,
      ))
    manifest.add_artifact(top_path)
    if run.ensemble and not run.target is None and len(winners) > 0:
      target, target_meta = load_records(run.target)
      sets: List[ForecastSet] = []
      stamps: Dict[str, Tuple[Any, Any]] = {}
      for r in winners:
        params = GlobalParams.load(os.path.join(trials_dir, f"{r.key}.yaml"))
        fs, stamps = forecast_dataset(
            params, target, target_meta.prediction_length, run.holdout, run.anchor_global,
            f"trial-{r.trial}", os.path.basename(run.target)
          )
        sets.append(fs)
      path = os.path.join(run.out, 'forecasts-ensemble.jsonl')
      write_forecasts(path, ensemble_median(sets, model_id=f"median-top{len(sets)}"), stamps)
      manifest.add_artifact(path)
    manifest.details.update(trials=len(results), successful=len(ok), topk=len(winners))
    manifest.finalize()
    for r in winners:
      print(f"trial {r.trial}: sMAPE {r.score:.4f}")
    return EXIT_OK
  except BaseException:
    manifest.finalize('failed')
    raise

def cmd_ablate(run: RunConfig) -> int:
  """Train every ablation cell at the configured budget and tabulate its score in ablation.yaml"""
  manifest = _start(run)
  try:
    source, metadata = load_records(_require(run.source, '--source'))
    horizon = _horizon(run, metadata)
    split = split_train_test(source, horizon)
    if run.target is None:
      evaluation_series, evaluation_horizon, dataset_id = split.test, horizon, 'source-holdout'
    else:
      target, target_meta = load_records(run.target)
      evaluation_series, evaluation_horizon, dataset_id = target, target_meta.prediction_length, os.path.basename(run.target)
    targets = holdout_targets(evaluation_series, evaluation_horizon)
    rows: List[Dict[str, Any]] = []
    for label, config in ablation_grid(run.resolved_train()):
      started = time.perf_counter()
      result = train(split.train, config, metadata.freq, horizon)
      forecasts, _ = forecast_dataset(
          result.params, evaluation_series, evaluation_horizon, True, run.anchor_global, label, dataset_id
        )
      value = report([forecasts], targets, run.metric, dataset_id, ensemble=False).mean
      backbone, adaptation, strategy = parse_ablation_label(label)
      rows.append(dict(label=label, backbone=backbone, adaptation=adaptation, strategy=strategy, metric=run.metric, value=value))
      manifest.time_phase(label, time.perf_counter() - started)
      logger.info(f"{label}: {run.metric} {value:.4f}")
    path = os.path.join(run.out, 'ablation.yaml')
    write_atomic(path, yaml.dump(rows, sort_keys=True))
    manifest.add_artifact(path)
    manifest.details.update(cells=len(rows))
    manifest.finalize()
    for row in rows:
      print(f"{row['label']:<14} {row['value']:.4f}")
    return EXIT_OK
  except BaseException:
    manifest.finalize('failed')
    raise

def gradcheck_tasks(config: TrainConfig, seed: int) -> Tuple[GlobalParams, List[ForecastTask]]:
  """A small yearly model and its tasks for the full-pipeline gradient check

  Raises:
      ConfigError: The representation is wider than GRADCHECK_MAX_DIM or the context
                   longer than GRADCHECK_MAX_CONTEXT.
  """
  horizon = config.horizon if not config.horizon is None else GRADCHECK_HORIZON
  if config.rep_dim > GRADCHECK_MAX_DIM or config.effective_hidden_dim > GRADCHECK_MAX_DIM:
    raise ConfigError(f"gradcheck needs rep_dim and hidden_dim <= {GRADCHECK_MAX_DIM}, got {config.rep_dim}/{config.effective_hidden_dim}")
  context_len = config.context_len(horizon)
  if context_len > GRADCHECK_MAX_CONTEXT:
    raise ConfigError(f"gradcheck needs a context of at most {GRADCHECK_MAX_CONTEXT}, got {context_len}")
  freq = kind_to_frequency['yearly']
  spec = ModelSpec.from_config(config, freq, horizon)
  params = GlobalParams.initialize(spec, np.random.default_rng(0 if config.seed_init is None else config.seed_init))
  series = synthetic_dataset(config.minibatch_size, SOURCE_FAMILY, freq, seed)
  t0 = min(GRADCHECK_SPLIT, min(len(s) for s in series) - horizon)
  return params, [ForecastTask(s, t0, horizon, context_len) for s in series]

def cmd_gradcheck(run: RunConfig) -> int:
  """Finite-difference check of the full training loss gradient; exit 4 if it fails"""
  manifest = _start(run)
  try:
    params, tasks = gradcheck_tasks(run.resolved_train(), run.seed)
    started = time.perf_counter()
    error = pipeline_grad_check(params, tasks)
    elapsed = time.perf_counter() - started
    manifest.time_phase('gradcheck', elapsed)
    passed = error < GRADCHECK_TOLERANCE
    manifest.details.update(max_relative_error=error, parameters=params.size, passed=passed)
    manifest.finalize('ok' if passed else 'failed')
    print(f"max relative error {error:.3e} over {params.size} parameters ({elapsed:.1f}s): {'pass' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_NUMERIC
  except BaseException:
    manifest.finalize('failed')
    raise

COMMANDS: Dict[str, Callable[[RunConfig], int]] = dict(
    train=cmd_train,
    forecast=cmd_forecast,
    evaluate=cmd_evaluate,
    search=cmd_search,
    ablate=cmd_ablate,
    gradcheck=cmd_gradcheck,
  )

def _flag(name: str) -> str:
  return '--' + name.replace('_', '-')

def _add_bool(parser: argparse.ArgumentParser, name: str, help: str) -> None:
  parser.add_argument(_flag(name), dest=name, action='store_const', const=True, default=None, help=help)
  parser.add_argument('--no-' + name.replace('_', '-'), dest=name, action='store_const', const=False, default=None)

def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(prog='meta-forecast', description="Meta-learned time-series forecasting")
  parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
  parser.add_argument('command', choices=sorted(COMMANDS.keys()))
  parser.add_argument('--config', default=None, help="Flat YAML file of config keys")
  parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
  run_types: Dict[str, Any] = dict(
      source=str, target=str, model=str, forecasts=str, out=str, seed=int, trials=int, topk=int,
      metric=str, selection_series=int, search_space=str,
    )
  for name in RUN_KEYS:
    if name in run_types:
      parser.add_argument(_flag(name), dest=name, type=run_types[name], default=None)
    else:
      _add_bool(parser, name, f"Set {name}")
  for f in dataclasses.fields(TrainConfig):
    default = f.default
    if isinstance(default, bool):
      _add_bool(parser, f.name, f"Set {f.name} (default {default})")
    elif isinstance(default, str):
      parser.add_argument(_flag(f.name), dest=f.name, type=str, default=None)
    elif isinstance(default, float):
      parser.add_argument(_flag(f.name), dest=f.name, type=float, default=None)
    else:
      parser.add_argument(_flag(f.name), dest=f.name, type=int, default=None)
  return parser

def make_run_config(args: argparse.Namespace) -> RunConfig:
  """Merge command defaults, the config file and flags (in increasing precedence)"""
  values: Dict[str, Any] = dict(COMMAND_DEFAULTS.get(args.command, {}))
  if not args.config is None:
    values.update(load_config_file(args.config))
  keys = list(RUN_KEYS) + [f.name for f in dataclasses.fields(TrainConfig)]
  for key in keys:
    value = getattr(args, key, None)
    if not value is None:
      values[key] = value
  return RunConfig.from_mapping(args.command, values).validate()

def main(argv: Optional[Sequence[str]]=None) -> int:
  parser = build_parser()
  args = parser.parse_args(argv)
  logging.basicConfig(level=getattr(logging, args.log_level), format='%(asctime)s %(levelname)s %(name)s: %(message)s')
  try:
    run = make_run_config(args)
    return COMMANDS[run.command](run)
  except ConfigError as e:
    logger.error(f"Configuration error: {e}")
    return EXIT_CONFIG
  except DataError as e:
    logger.error(f"Data error: {e}")
    return EXIT_DATA
  except NumericError as e:
    logger.error(f"Numeric error: {e}")
    return EXIT_NUMERIC
  except MetaForecastError as e:
    logger.error(f"{e}")
    return EXIT_UNEXPECTED
  except Exception:
    logger.exception("Unexpected failure")
    return EXIT_UNEXPECTED

if __name__ == '__main__':
  sys.exit(main())
