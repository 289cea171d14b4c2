"""
Command line entry point: invrisk <command> [--config FILE] [overrides]

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
Failures also print one JSON line {"error", "exit", "message"} on stderr.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from invrisk import __version__
from invrisk.errors import BadMagicError, ConfigError, DimensionOverflowError, NumericError, RankError, \
    ShapeError, TruncatedPayloadError
from invrisk.harness.config import INVRISK_LOG_LEVEL, INVRISK_THREADS, load_config
from invrisk.harness.report import read_report, write_report, write_spectrum, write_sweep
from invrisk.harness.runner import ExperimentRunner, correlate_report
from invrisk.harness.tensor_io import write_tensor
from invrisk.model.defense_model import DefenseKind
from invrisk.model.risk_model import Calibration
from invrisk.model.tensor_model import Tensor

log = logging.getLogger("invrisk")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid grid {text}: {e}") from e


def _overrides(args: argparse.Namespace) -> dict:
    """
    Partial configuration document from the command line flags
    """
    doc = {}
    for flag, key in (('seed', 'seed'), ('n_instances', 'n_instances'),
                      ('output_dir', 'output_dir'), ('calibration', 'calibration')):
        if getattr(args, flag) is not None:
            doc[key] = getattr(args, flag)

    dataset = {}
    if args.data is not None:
        dataset.update({'kind': "tensor_file", 'path': args.data})
    if args.labels is not None:
        dataset['labels'] = args.labels
    if args.dataset_kind is not None:
        dataset['kind'] = args.dataset_kind
    if args.m is not None:
        dataset['m'] = args.m
    if args.texture is not None:
        dataset['texture'] = args.texture
    if dataset:
        doc['dataset'] = dataset

    mapping = {}
    if args.mode is not None:
        mapping['mode'] = args.mode
    if args.loss is not None:
        mapping['loss'] = args.loss
    if args.cut is not None:
        mapping['cut'] = args.cut
    network = {}
    if args.network is not None:
        network['path'] = args.network
    if args.dims is not None:
        network['dims'] = [int(v) for v in args.dims.split(",")]
    if args.warmup_steps is not None:
        network['warmup_steps'] = args.warmup_steps
    if network:
        mapping['network'] = network
    if mapping:
        doc['map'] = mapping

    # attack-driven commands run with the default attack unless configured otherwise
    attack = {} if args.command in ("attack", "correlate", "sweep", "defend") else None
    for flag in ('iters', 'distance', 'tv_weight', 'step_size'):
        if getattr(args, flag) is not None:
            attack = attack if attack is not None else {}
            attack[flag] = getattr(args, flag)
    if attack is not None:
        doc['attack'] = attack

    if args.defense is not None:
        defense = {'kind': args.defense}
        if args.delta is not None:
            defense['delta'] = args.delta
        if args.lam is not None:
            defense['lambda'] = args.lam
        if len(defense) == 1 and args.grid:
            # strength left open: start from the first grid point
            defense['delta' if DefenseKind(args.defense).is_noise else 'lambda'] = args.grid[0]
        doc['defense'] = defense
    if args.grid is not None:
        doc['sweep'] = {'grid': args.grid}

    scoring = {}
    if args.scoring is not None:
        scoring['mode'] = args.scoring
    if args.beta is not None:
        scoring['beta'] = args.beta
    if scoring:
        doc['scoring'] = scoring
    return doc


def _runner(args: argparse.Namespace) -> ExperimentRunner:
    config = load_config(args.config, _overrides(args))
    return ExperimentRunner(config, threads=args.threads)


def _out(runner: ExperimentRunner, name: str) -> Path:
    return Path(runner.config.output_dir) / name


def cmd_score(args: argparse.Namespace):
    runner = _runner(args)
    record = runner.run_score()
    Calibration.from_dict(record.calibration).save(_out(runner, "calibration.json"))
    write_report(record, _out(runner, "report.json"))


def cmd_attack(args: argparse.Namespace):
    runner = _runner(args)
    record = runner.run_attack_eval(runner.run_score())
    write_report(record, _out(runner, "report.json"))


def cmd_defend(args: argparse.Namespace):
    runner = _runner(args)
    if runner.config.defense is None:
        raise ConfigError("defend needs a defense configuration")
    record = runner.run_defense_sweep(runner.run_score(), [runner.config.defense.strength])
    write_report(record, _out(runner, "report.json"))
    write_sweep(record, _out(runner, "sweep.csv"))


def cmd_sweep(args: argparse.Namespace):
    runner = _runner(args)
    record = runner.run_defense_sweep(runner.run_score())
    write_report(record, _out(runner, "report.json"))
    write_sweep(record, _out(runner, "sweep.csv"))


def cmd_correlate(args: argparse.Namespace):
    if args.report is not None:
        correlations = correlate_report(read_report(args.report))
        print(json.dumps({name: res.to_dict() for name, res in correlations.items()}, indent=2))
        return
    runner = _runner(args)
    record = runner.correlate(runner.run_attack_eval(runner.run_score()))
    write_report(record, _out(runner, "report.json"))


def cmd_spectrum(args: argparse.Namespace):
    runner = _runner(args)
    write_spectrum(runner.spectrum(), _out(runner, "spectrum.json"))


def cmd_gen_data(args: argparse.Namespace):
    runner = _runner(args)
    instances = runner.instances()
    path = Path(args.out) if args.out else _out(runner, "data.ivt")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(path, Tensor.from_array([inst.x for inst in instances]))
    write_tensor(path.with_suffix(".labels.ivt"), Tensor.from_array([float(inst.label) for inst in instances]))
    log.info("%d instances written to %s", len(instances), path)


COMMANDS = {
    'score': (cmd_score, "InvRE of every instance"),
    'attack': (cmd_attack, "score, then run the matching attack at every tier"),
    'defend': (cmd_defend, "score, then apply the configured defense at its configured strength"),
    'sweep': (cmd_sweep, "score, then sweep the defense strength over a grid"),
    'correlate': (cmd_correlate, "correlation of InvRE with attack errors"),
    'spectrum': (cmd_spectrum, "singular values, cumulative mass and feasibility weights"),
    'gen-data': (cmd_gen_data, "write the instances of the experiment as IVT1 tensors"),
}


class _Parser(argparse.ArgumentParser):

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(json.dumps({'error': "usage_error", 'exit': EXIT_CONFIG, 'message': message}), file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON or TOML experiment file; its values override flags")
    common.add_argument("--log-level", default=INVRISK_LOG_LEVEL)
    common.add_argument("--threads", type=int, default=INVRISK_THREADS, help="instance fan-out, 0 = cpu count")
    common.add_argument("--seed", type=int)
    common.add_argument("--n-instances", type=int)
    common.add_argument("--output-dir")
    common.add_argument("--calibration", help="reference calibration file")
    common.add_argument("--data", help="IVT1 instances file")
    common.add_argument("--labels", help="IVT1 labels file")
    common.add_argument("--dataset-kind", choices=["synthetic_gaussian", "synthetic_grid", "tensor_file"])
    common.add_argument("--m", type=int, help="instance width")
    common.add_argument("--texture", type=float)
    common.add_argument("--mode", choices=["hfl_gradient", "vfl_embedding"])
    common.add_argument("--loss", choices=["squared_error", "cross_entropy"])
    common.add_argument("--cut", type=int)
    common.add_argument("--network", help="JSON network file")
    common.add_argument("--dims", help="comma separated layer widths, input first")
    common.add_argument("--warmup-steps", type=int)
    common.add_argument("--iters", type=int)
    common.add_argument("--distance", choices=["l2", "cosine"])
    common.add_argument("--tv-weight", type=float)
    common.add_argument("--step-size", type=float)
    common.add_argument("--defense", choices=["dnp", "gnp", "enp", "prune", "dropout",
                                              "invl_dnp", "invl_gnp", "invl_enp"])
    common.add_argument("--delta", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--grid", type=_grid, help="comma separated defense strengths")
    common.add_argument("--scoring", choices=["sigmoid", "inverse"])
    common.add_argument("--beta", type=float)

    parser = _Parser(prog="invrisk", description="Data reconstruction risk toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, (handler, summary) in COMMANDS.items():
        sub = commands.add_parser(name, parents=[common], help=summary)
        sub.set_defaults(handler=handler)
        if name == "correlate":
            sub.add_argument("--report", help="existing JSON report to correlate")
        if name == "gen-data":
            sub.add_argument("--out", help="IVT1 output file (labels go next to it)")
    return parser


def _error_code(e: Exception) -> str:
    match e:
        case BadMagicError():
            return "bad_magic"
        case TruncatedPayloadError():
            return "truncated_payload"
        case DimensionOverflowError():
            return "dimension_overflow"
        case RankError():
            return "rank_error"
        case ShapeError():
            return "shape_error"
        case NumericError():
            return "numeric_error"
        case ValueError():
            return "config_error"
        case _:
            return "io_error"


def _fail(e: Exception, code: int) -> int:
    log.error("%s", e)
    print(json.dumps({'error': _error_code(e), 'exit': code, 'message': str(e)}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        args.handler(args)
    except NumericError as e:
        return _fail(e, EXIT_NUMERIC)
    except ValueError as e:
        return _fail(e, EXIT_CONFIG)
    except OSError as e:
        return _fail(e, EXIT_IO)
    return 0


if __name__ == "__main__":
    sys.exit(main())
