"""
Command-line entry point.

    python cli.py gen-code 256 3 6 7 codes/h256.alist
    python cli.py ber-sweep configs/uncoded_ber.cfg results/uncoded.csv --jobs 4
    python cli.py complexity 256 512 1024 --alist codes/h256.alist
    python cli.py decode-one codes/h256.alist 8 adaptive-lp --seed 3

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import logging
import sys

import numpy as np

import settings
from channel import FrameParams, make_frame, make_rng, snr_db_to_noise_var
from harness import (DEFAULT_COMPLEXITY_LENGTHS, CodeSpec, complexity_report, emit_complexity_csv,
                     emit_csv, emit_plotdata, format_complexity_table, load_code, load_config,
                     run_sweep)
from ldpc import gallager_construct, save_alist
from lp_solver import format_lp
from receivers import RECEIVER_IDS, ReceiverSettings, run_receiver

logger = logging.getLogger(__name__)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _ArgumentParser(prog="relay-lp",
                             description="LP/MILP joint detection-decoding for DF relay links")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    gen = commands.add_parser("gen-code", help="construct a regular Gallager code and save it as alist")
    gen.add_argument("n", type=int)
    gen.add_argument("col_weight", type=int)
    gen.add_argument("row_weight", type=int)
    gen.add_argument("seed", type=int)
    gen.add_argument("out")

    sweep = commands.add_parser("ber-sweep", help="run a BER-vs-SNR sweep from a config file")
    sweep.add_argument("config")
    sweep.add_argument("out", help="CSV output path")
    sweep.add_argument("--plotdata", help="also write whitespace-separated blocks per receiver")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--jobs", type=int, default=settings.DEFAULT_JOBS)
    sweep.add_argument("--frames", type=int, dest="frames_per_point")
    sweep.add_argument("--target-errors", type=int)
    sweep.add_argument("--snr", dest="snr_grid_db", help="e.g. '0:20:2' or '0,5,10'")
    sweep.add_argument("--receivers", help="comma-separated receiver ids")
    sweep.add_argument("--code", dest="code_spec")
    sweep.add_argument("--record-timing", action="store_true", default=None)

    comp = commands.add_parser("complexity", help="formulation sizes per code length")
    comp.add_argument("lengths", type=int, nargs="*",
                      help=f"(3,6)-regular code lengths; default {' '.join(map(str, DEFAULT_COMPLEXITY_LENGTHS))}")
    comp.add_argument("--alist", action="append", default=[], help="alist file (repeatable)")
    comp.add_argument("--out", help="CSV output path")
    comp.add_argument("--code-seed", type=int, default=7)
    comp.add_argument("--measure-frames", type=int, default=0,
                      help="frames per code for measured adaptive/unified/uncoded LP work means")
    comp.add_argument("--snr", type=float, default=8.0, help="SNR (dB) for measured means")
    comp.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)

    one = commands.add_parser("decode-one", help="decode a single frame and print the report")
    one.add_argument("code", help="alist path or code spec such as 'uncoded N=20'")
    one.add_argument("snr_db", type=float)
    one.add_argument("receiver", choices=RECEIVER_IDS)
    one.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    one.add_argument("--code-seed", type=int, default=7)
    one.add_argument("--sigma1-sq", type=float, default=0.5)
    one.add_argument("--sigma2-sq", type=float, default=1.0)
    one.add_argument("--lambda-t", type=float, default=1.0)
    one.add_argument("--lambda-tau", type=float, default=1.0)
    one.add_argument("--round-limit", type=int, default=100)
    one.add_argument("--cut-on-hard-decision", action="store_true")
    one.add_argument("--dump-lp", help="write the final LP in text form")
    return parser


def cmd_gen_code(args):
    H = gallager_construct(args.n, args.col_weight, args.row_weight, args.seed)
    with open(args.out, "w") as handle:
        handle.write(save_alist(H))
    print(f"wrote {args.out}: n = {H.n_cols}, checks = {H.n_rows}")


def cmd_ber_sweep(args):
    overrides = {
        "seed": args.seed,
        "frames_per_point": args.frames_per_point,
        "target_errors": args.target_errors,
        "snr_grid_db": args.snr_grid_db,
        "receivers": args.receivers,
        "code_spec": args.code_spec,
        "record_timing": args.record_timing,
    }
    config = load_config(args.config, overrides)
    result = run_sweep(config, jobs=max(1, args.jobs))
    emit_csv(result, args.out)
    if args.plotdata:
        emit_plotdata(result, args.plotdata)
    print(f"wrote {args.out}: {len(result.points)} points")


def cmd_complexity(args):
    lengths = args.lengths or ([] if args.alist else list(DEFAULT_COMPLEXITY_LENGTHS))
    specs = [CodeSpec(kind="gallager", length=n) for n in lengths]
    specs += [CodeSpec(kind="alist", path=path) for path in args.alist]
    rows = complexity_report(specs, code_seed=args.code_seed, measure_frames=args.measure_frames,
                             snr_db=args.snr, seed=args.seed)
    sys.stdout.write(format_complexity_table(rows))
    if args.out:
        emit_complexity_csv(rows, args.out)


def cmd_decode_one(args):
    code = load_code(args.code, args.code_seed)
    params = FrameParams(noise_var=snr_db_to_noise_var(args.snr_db, args.sigma1_sq),
                         sigma1_sq=args.sigma1_sq, sigma2_sq=args.sigma2_sq,
                         n_symbols=code.n_symbols)
    frame = make_frame(code.encoder, make_rng(args.seed, 0), params)
    receiver_settings = ReceiverSettings(lambda_t=args.lambda_t, lambda_tau=args.lambda_tau,
                                         round_limit=args.round_limit,
                                         cut_on_hard_decision=args.cut_on_hard_decision)
    report = run_receiver(args.receiver, frame, code.H, receiver_settings)

    print(f"receiver = {args.receiver}")
    print(f"tx_bits = {''.join(str(int(b)) for b in frame.tx_bits)}")
    for key, value in report.as_dict().items():
        print(f"{key} = {value}")
    print(f"bit_errors = {int(np.count_nonzero(report.decoded_bits != frame.tx_bits))}")

    if args.dump_lp:
        if report.final_problem is None:
            raise ValueError(f"{args.receiver} does not solve an LP; nothing to dump")
        with open(args.dump_lp, "w") as handle:
            handle.write(format_lp(report.final_problem, name=args.receiver))


COMMANDS = {
    "gen-code": cmd_gen_code,
    "ber-sweep": cmd_ber_sweep,
    "complexity": cmd_complexity,
    "decode-one": cmd_decode_one,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code

    settings.configure_logging()
    logger.info(f"relay-lp {args.command} starting")
    try:
        COMMANDS[args.command](args)
    except Exception as e:
        logger.error(f"relay-lp {args.command} failed: {e}")
        print(f"relay-lp: error: {e}", file=sys.stderr)
        return 2
    logger.info(f"relay-lp {args.command} finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())
