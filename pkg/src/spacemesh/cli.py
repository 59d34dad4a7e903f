"""``spacemesh`` command line: synth, train, eval, infer, gradcheck, params."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .data_io import DataError, FormatError, _atomic_write, load_checkpoint, read_manifest, read_ppm, write_pgm
from .metrocon import build_grid, parity_report
from .model import SpaceMeshLab
from .tensor import Tensor

log = logging.getLogger("spacemesh")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _on_off(text: str) -> str:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return "true" if text == "on" else "false"


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--spam", type=_on_off, help="SpaM stream on|off")
    p.add_argument("--sca-cca", dest="sca_cca", type=_on_off, help="SCA/CCA gates on|off")
    p.add_argument("--head", choices=("metrocon", "aspp"))
    p.add_argument("--rates", help="MetroCon rates for both axes, e.g. 1..18 or 6,12,18")
    p.add_argument("--classes", type=int)
    p.add_argument("--seed", type=int)


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    flag_map = {
        "spam": "model.spam",
        "sca_cca": "model.attention",
        "head": "model.head",
        "rates": ("model.rates_v", "model.rates_h"),
        "classes": "model.num_classes",
        "seed": ("model.seed", "train.seed"),
        "iters": "train.max_iter",
        "batch": "train.batch",
        "tta_scales": "tta.scales",
        "tta_flip": "tta.flip",
    }
    for attr, keys in flag_map.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        for k in (keys,) if isinstance(keys, str) else keys:
            cfg.set(k, str(value))
    if cfg.model.head not in ("metrocon", "aspp"):
        raise ConfigError(f"model.head must be metrocon or aspp, got {cfg.model.head!r}")
    cfg.train.validate()
    cfg.tta.validate()
    return cfg


def _log_config(cfg: RunConfig, out_dir=None) -> None:
    text = cfg.dumps()
    for line in text.splitlines():
        log.info("config %s", line)
    if out_dir is not None:
        _atomic_write(Path(out_dir) / "resolved_config.txt", text.encode("utf-8"))


def _load_model(cfg: RunConfig, checkpoint) -> SpaceMeshLab:
    model = SpaceMeshLab(cfg.model)
    if checkpoint:
        load_checkpoint(checkpoint, model)
    return model


def cmd_synth(args) -> int:
    from .synth import synth_dataset

    m = synth_dataset(args.n, args.size, args.size, args.classes or 4, args.seed or 0, args.out, n_val=args.val)
    print(f"wrote {len(m.entries)} samples to {args.out}/manifest.txt")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train_loop

    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _log_config(cfg, out)
    manifest = read_manifest(args.data)
    train = manifest.load_split("train")
    val = manifest.load_split("val") if manifest.split("val") else None
    model = SpaceMeshLab(cfg.model)
    report = train_loop(model, train, cfg.train, val, out_dir=out)
    print(f"final loss {report.losses[-1]:.4f}; val mIoU {report.final_miou}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate

    cfg = resolve_config(args)
    _log_config(cfg, args.out)
    manifest = read_manifest(args.data)
    images, labels = manifest.load_split(args.split)
    model = _load_model(cfg, args.checkpoint)
    tta = cfg.tta if args.tta == "on" else None
    iou, mean, _ = evaluate(model, images, labels, cfg.model.num_classes, tta, ignore_index=cfg.train.ignore_index)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "iou"])
    for k, v in enumerate(iou):
        writer.writerow([k, "" if np.isnan(v) else f"{v:.6f}"])
    writer.writerow(["mean", f"{mean:.6f}"])
    sys.stdout.write(buf.getvalue())
    if args.out:
        _atomic_write(Path(args.out) / "eval.csv", buf.getvalue().encode("utf-8"))
    return EXIT_OK


def cmd_infer(args) -> int:
    from . import functional as F
    from .train import argmax_labels, snap_to_16, tta_predict

    cfg = resolve_config(args)
    _log_config(cfg)
    manifest = read_manifest(args.data) if args.data else None
    model = _load_model(cfg, args.checkpoint).eval()
    out = Path(args.out)
    for path in args.images:
        rgb = read_ppm(path).transpose(2, 0, 1).astype(np.float32) / 255.0
        if manifest is not None:
            rgb = manifest.normalize(rgb)
        x = Tensor(rgb[None])
        h, w = rgb.shape[1:]
        if args.tta == "on":
            logits = tta_predict(model.predict, x, cfg.tta)
        else:
            sh, sw = snap_to_16(h, w)
            logits = F.bilinear_resize(model.predict(F.bilinear_resize(x, sh, sw)), h, w)
        pred = argmax_labels(logits)[0].astype(np.uint8)
        target = out / (Path(path).stem + ".pgm")
        write_pgm(target, pred)
        print(f"{path} -> {target}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import run_gradchecks

    rows = run_gradchecks(seed=args.seed or 0)
    worst = 0.0
    for name, err in rows:
        status = "PASS" if err < args.tol else "FAIL"
        print(f"{status} {name:<22} max rel err {err:.3e}")
        worst = max(worst, err)
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


def cmd_params(args) -> int:
    cfg = resolve_config(args)
    m = cfg.model
    grid = build_grid(m.rates_v, m.rates_h, m.channel_budget)
    rows = parity_report(m.widths[-1], grid, (args.feat, args.feat), m.aspp_width)
    if args.head:
        rows = [r for r in rows if r["head"] == args.head]
    cols = ("head", "branches", "depth", "concat", "params", "macs")
    print("\t".join(cols))
    for r in rows:
        print("\t".join(str(r[c]) for c in cols))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spacemesh")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--val", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="manifest.txt")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("infer", cmd_infer)):
        p = sub.add_parser(name)
        _add_config_flags(p)
        p.add_argument("--checkpoint")
        p.add_argument("--tta", choices=("on", "off"), default="off")
        p.add_argument("--tta-scales", dest="tta_scales", help="comma-separated scales")
        p.add_argument("--tta-flip", dest="tta_flip", type=_on_off)
        p.set_defaults(func=func)
        if name == "eval":
            p.add_argument("--data", required=True)
            p.add_argument("--split", default="val")
            p.add_argument("--out")
        else:
            p.add_argument("--data", help="manifest supplying normalization stats")
            p.add_argument("--out", required=True)
            p.add_argument("images", nargs="+", help="PPM inputs")

    p = sub.add_parser("gradcheck", help="finite-difference checks per module")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-2)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="MetroCon vs ASPP size table")
    _add_config_flags(p)
    p.add_argument("--feat", type=int, default=4, help="feature map side for MAC counts")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
