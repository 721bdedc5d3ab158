"""
Command-line front end.

Usage:
  python scripts/offset_lab.py bound  --config configs/sh_allones.json
  python scripts/offset_lab.py cover  --config configs/sh_allones.json --format table
  python scripts/offset_lab.py offset --config configs/demo_bounded.json --seed 3
  python scripts/offset_lab.py tails  --config configs/subgaussian.json
  python scripts/offset_lab.py erm    --config configs/demo_bounded.json --out runs/demo.json --workers 4
  python scripts/offset_lab.py report --result runs/demo.json

Exit codes:
  0  success
  1  usage error (unknown command, bad flag)
  2  config error (missing, unreadable or invalid config file); no output file is written
  3  runtime failure (any other lab error, or every experiment cell failed)

Result payloads go to stdout or --out; status lines go to stderr, so an output
file holds nothing but the payload and is byte-identical across reruns.
"""

import argparse
import json
import sys
from dataclasses import replace

import pandas as pd

from . import create_lab
from .engines.bounds.bounds import best_bound, cover_summary
from .engines.erm_lab.erm_lab import (render_table, result_frame, run_experiment, run_offset_study,
                                      run_tail_study, write_result)
from .engines.tails.tails import optimal_threshold
from .models.experiment import ExperimentResult, LabConfig, json_ready
from .utils.errors import ConfigError, LabError, LabIOError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

FORMATS = ('json', 'csv', 'table')
REPORT_COLUMNS = ['family', 'n', 'delta', 'penalty_constant', 'complexity_term', 'discretization_term',
                  'truncation_term', 'approximation_term', 'log_cover', 'total']


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog='offset_lab', description="Excess-risk bounds and offset complexity laboratory")
    sub = p.add_subparsers(dest='command', required=True, parser_class=_Parser)

    def command(name, help_text, needs_config=True):
        cp = sub.add_parser(name, help=help_text)
        if needs_config:
            cp.add_argument('--config', required=True, help='Path to the JSON config file')
        cp.add_argument('--out', help='Write the payload here instead of stdout')
        cp.add_argument('--format', choices=FORMATS, default='table' if name == 'report' else 'json')
        cp.add_argument('--seed', type=int, default=None, help='Base seed (default 0)')
        cp.add_argument('--workers', type=int, default=None, help='Worker processes; never changes results')
        return cp

    command('bound', 'Evaluate every configured bound family, delta minimised over the grid')
    command('cover', 'Covering numbers and allocations per parameter block')
    command('offset', 'Exact and Monte Carlo offset complexity of a random finite class')
    command('tails', 'Truncation thresholds, tail terms and truncation rates')
    command('erm', 'Run the ERM experiment grid')
    report = command('report', 'Render a stored experiment result', needs_config=False)
    report.add_argument('--result', required=True, help='Path to a result JSON written by erm')
    return p


def _status(message):
    print(message, file=sys.stderr)


def _render(payload, frame, fmt):
    if fmt == 'json':
        return json.dumps(json_ready(payload), indent=2, sort_keys=True, allow_nan=False)
    if fmt == 'csv':
        return frame.to_csv(index=False, float_format='%.17g').rstrip('\n')
    return frame.to_string(index=False, float_format=lambda v: f'{v:.6g}')


def _emit(text, out):
    if not out:
        sys.stdout.write(text + '\n')
        return
    try:
        with open(out, 'w') as fh:
            fh.write(text + '\n')
    except OSError as e:
        raise LabIOError(f"cannot write {out}: {e}")
    _status(f"✅ wrote {out}")


def cmd_bound(args, lab, settings):
    config = lab.experiment
    grid = lab.delta_grid.values()
    reports = []
    for n in config.n_grid:
        for family in config.bound_families:
            M = optimal_threshold(config.tail, n) if family in ('subgaussian', 'heavytail') else None
            reports.append(best_bound(family, lab.spec, lab.budget, n, grid, 0.0, M))
    for note in sorted({note for r in reports for note in r.notes}):
        _status(f"⚠️  {note}")
    frame = pd.DataFrame([r.to_dict() for r in reports], columns=REPORT_COLUMNS)
    _emit(_render({'reports': [r.to_dict() for r in reports]}, frame, args.format), args.out)
    return EXIT_OK


def cmd_cover(args, lab, settings):
    summaries = [cover_summary(lab.spec, lab.budget, float(delta)) for delta in lab.delta_grid.values()]
    rows = [{'delta': s['delta'], 'generic_log_cover': s['generic_log_cover'],
             'norm_log_cover': s['norm_log_cover'], **component}
            for s in summaries for component in s['components']]
    _emit(_render({'covers': summaries}, pd.DataFrame(rows), args.format), args.out)
    return EXIT_OK


def cmd_offset(args, lab, settings):
    study = run_offset_study(lab, seed=args.seed or 0, workers=args.workers or settings.workers,
                             chunk=settings.mc_chunk)
    rows = [{'method': 'monte_carlo', **study['monte_carlo']}]
    if study['exact'] is not None:
        rows.insert(0, {'method': 'exact', **study['exact']})
    frame = pd.DataFrame(rows)
    frame['finite_class_bound'] = study['finite_class_bound']
    _emit(_render(study, frame, args.format), args.out)
    return EXIT_OK


def cmd_tails(args, lab, settings):
    study = run_tail_study(lab, seed=args.seed or 0)
    if 'note' in study:
        _status(f"⚠️  {study['note']}")
    _emit(_render(study, pd.DataFrame(study['rows']), args.format), args.out)
    return EXIT_OK


def cmd_erm(args, lab, settings):
    config = lab.experiment
    if args.seed is not None:
        config = replace(config, seeds=tuple(args.seed + i for i in range(len(config.seeds))))
    result = run_experiment(config, workers=args.workers or settings.workers)
    if args.out:
        json_path, csv_path = write_result(result, args.out)
        _status(f"✅ wrote {json_path} and {csv_path}")
    else:
        text = result.to_json() if args.format == 'json' else (
            render_table(result) if args.format == 'table' else _render(None, result_frame(result), 'csv'))
        sys.stdout.write(text + '\n')
    failed = len(result.failed_cells)
    if failed == len(result.cells):
        _status(f"❌ all {failed} cells failed")
        return EXIT_RUNTIME
    if failed:
        _status(f"⚠️  {failed} of {len(result.cells)} cells failed")
    return EXIT_OK


def cmd_report(args, settings):
    result = ExperimentResult.load(args.result)
    if args.format == 'table':
        text = render_table(result)
    elif args.format == 'json':
        text = result.to_json()
    else:
        text = _render(None, result_frame(result), 'csv')
    _emit(text, args.out)
    return EXIT_OK


COMMANDS = {'bound': cmd_bound, 'cover': cmd_cover, 'offset': cmd_offset, 'tails': cmd_tails, 'erm': cmd_erm}


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        _status(f"❌ {e}")
        return EXIT_USAGE
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_OK

    settings = create_lab()
    try:
        if args.command == 'report':
            return cmd_report(args, settings)
        lab = LabConfig.load(args.config)
        return COMMANDS[args.command](args, lab, settings)
    except ConfigError as e:
        _status(f"❌ {e.message}")
        for error in (e.details or {}).get('errors', []):
            _status(f"   - {error['field']}: {error['message']} ({error['fix_instructions']})")
        return EXIT_CONFIG
    except LabError as e:
        _status(f"❌ {e.kind}: {e.message}")
        return EXIT_RUNTIME


def main():
    sys.exit(run_cli())
