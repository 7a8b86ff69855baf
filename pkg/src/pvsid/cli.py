"""Command-line entry point: ``pvsid {collect,train,eval,ablate,control,compare}``.

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import experiments as ex
from .config import PROFILES, parse_config
from .csvio import write_csv
from .errors import NumericError, PvsidError, ValidationError
from .identification import kstep_mse
from .modelio import load_model, save_model
from .plant import IoLog

log = logging.getLogger("pvsid")


def _comment(cfg, seed, command):
    return f"pvsid {command} fingerprint={cfg.fingerprint} seed={seed} profile={cfg.profile}"


def _load_log(args, cfg, seed):
    path = args.log or cfg["data"]["log"]
    if path:
        return IoLog.from_csv(path)
    default = os.path.join(args.out, "iolog.csv")
    if os.path.exists(default) and not args.fresh:
        return IoLog.from_csv(default)
    log.info("collecting identification data (%.1f simulated minutes)", cfg["data"]["minutes"])
    return ex.collect(cfg, seed)


def _load_or_train(args, cfg, seed):
    path = args.model or cfg["nmpc"]["model"]
    if not path and os.path.exists(os.path.join(args.out, "model.json")):
        path = os.path.join(args.out, "model.json")
    if path:
        return load_model(path)
    model, history, _ = _train(args, cfg, seed)
    return model


def _progress(epoch, train_loss, val_loss):
    if epoch % 50 == 0:
        log.info("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)


def _train(args, cfg, seed):
    io_log = _load_log(args, cfg, seed)
    model, history, test = ex.train_model(cfg, io_log, seed=seed, callback=_progress)
    save_model(os.path.join(args.out, "model.json"), model, cfg.fingerprint)
    history.to_csv(os.path.join(args.out, "history.csv"), comment=_comment(cfg, seed, "train"))
    return model, history, test


def cmd_collect(args, cfg, seed):
    io_log = ex.collect(cfg, seed)
    path = os.path.join(args.out, "iolog.csv")
    io_log.to_csv(path, comment=_comment(cfg, seed, "collect"))
    print(f"wrote {path} ({len(io_log)} samples)")


def cmd_train(args, cfg, seed):
    model, history, _ = _train(args, cfg, seed)
    print(f"wrote {os.path.join(args.out, 'model.json')} (best epoch {history.best_epoch}, "
          f"val loss {min(history.val_loss):.6g})")


def cmd_eval(args, cfg, seed):
    model = _load_or_train(args, cfg, seed)
    io_log = _load_log(args, cfg, seed)
    _, _, test = ex.split_windows(cfg, io_log)
    mse = kstep_mse(model, test)
    path = os.path.join(args.out, "kstep_mse.csv")
    write_csv(path, ["k", "mse"], [(k + 1, v) for k, v in enumerate(mse)], comment=_comment(cfg, seed, "eval"))
    print(f"wrote {path}; mean MSE k=1..5: {ex.mean_short_horizon(mse) * 1e6:.4g} mm^2")


def cmd_ablate(args, cfg, seed):
    rows, failures = ex.run_ablation(cfg)
    path = os.path.join(args.out, "ablation.csv")
    ex.write_ablation(path, rows, comment=_comment(cfg, seed, "ablate"))
    print(f"wrote {path} ({len(rows)} rows, {len(failures)} failed cells)")


def cmd_control(args, cfg, seed):
    model = _load_or_train(args, cfg, seed) if args.controller == "nmpc" else None
    clog = ex.run_control(cfg, args.controller, model, seed)
    path = os.path.join(args.out, f"control_{args.controller}.csv")
    clog.to_csv(path, comment=_comment(cfg, seed, "control"))
    print(f"wrote {path}; tip RMS {clog.tip_rms * 1e3:.4g} mm")


def cmd_compare(args, cfg, seed):
    model = _load_or_train(args, cfg, seed)
    comp = ex.run_compare(cfg, model, seed)
    comment = _comment(cfg, seed, "compare")
    comp.nmpc.to_csv(os.path.join(args.out, "control_nmpc.csv"), comment=comment)
    comp.ik_ff.to_csv(os.path.join(args.out, "control_ik_ff.csv"), comment=comment)
    comp.write_summary(os.path.join(args.out, "compare_summary.csv"), comment=comment)
    print(f"tip RMS: nmpc {comp.nmpc.tip_rms * 1e3:.4g} mm, ik_ff {comp.ik_ff.tip_rms * 1e3:.4g} mm, "
          f"ratio {comp.ratio:.3g}")


COMMANDS = {"collect": cmd_collect, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "control": cmd_control, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--profile", choices=PROFILES, help="default profile (required if the file names none)")
    common.add_argument("--seed", type=int, help="overrides [experiment] seed")
    common.add_argument("--out", help="output directory (overrides [experiment] out)")
    common.add_argument("--log", help="identification log CSV to use instead of collecting")
    common.add_argument("--model", help="model file to use instead of training")
    common.add_argument("--fresh", action="store_true", help="ignore cached iolog.csv/model.json in --out")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="pvsid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "control":
            p.add_argument("--controller", choices=("nmpc", "ik_ff"), default="nmpc")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        profile = args.profile if args.config else (args.profile or "desk")
        cfg = parse_config(args.config, profile)
        seed = cfg.seed if args.seed is None else args.seed
        if seed < 0:
            raise ValidationError("--seed must be >= 0")
        args.out = args.out or cfg["experiment"]["out"]
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](args, cfg, seed)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except PvsidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
