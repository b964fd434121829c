"""``fenceguide`` command line: one binary, one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 runtime error (including a failed
gradient check). Reports go to standard output as ``key=value`` lines, or
one JSON object per line with ``--json``. Logs go to standard error.
"""
from __future__ import annotations

import argparse
import configparser
import difflib
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

log = logging.getLogger("fenceguide")

SUBCOMMANDS = ("edges", "guidance", "dcl", "dcl-gradcheck", "synth", "train", "predict", "eval")

GLOBAL_DEFAULTS = {"seed": 0, "threads": 1, "log_level": "info", "out_dir": None, "json": False}

DEFAULTS = {
    "edges": {"input": None, "out": None, "sigma": 1.4, "low": 30.0, "high": 90.0},
    "guidance": {"left": None, "right": None, "out": None, "tau": 100.0, "max_shift": None,
                 "min_shift": 0, "shift_dir": "right", "bandpass_inner": 3.0,
                 "bandpass_outer": None, "dump_curve": None, "dump_spectrum": None,
                 "sigma": 1.4, "low": 30.0, "high": 90.0},
    "dcl": {"mask": None, "report": False, "map_out": None},
    "dcl-gradcheck": {"size": 16, "count": 20, "eps": 1e-4, "rtol": 1e-5, "min_pass": 0.99},
    "synth": {"out": None, "train": None, "test": None, "image_size": None},
    "train": {"manifest": None, "out": None, "channels": 2, "lambda_dcl": 0.1, "lambda_l1": 1.0,
              "epochs": 30, "lr": 0.0002, "batch_size": 32, "patch_size": 64,
              "history": None, "checkpoint_dir": None},
    "predict": {"model": None, "image": None, "fm": None, "out": None, "threshold": 0.5,
                "manifest": None, "split": "test"},
    "eval": {"pred_dir": None, "gt_dir": None, "report": None, "folds": None,
             "tolerance": 0, "threshold": 0.5},
}

REQUIRED = {
    "edges": ("input", "out"),
    "guidance": ("left", "right", "out"),
    "dcl": ("mask",),
    "synth": ("out",),
    "train": ("manifest", "out"),
    "predict": ("model", "out"),
    "eval": ("pred_dir", "gt_dir", "report"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_global(p, top=False):
    kw = {} if top else {"default": argparse.SUPPRESS}
    p.add_argument("--seed", type=int, help="master random seed", **kw)
    p.add_argument("--threads", type=int, help="worker cap; 1 is the reproducible reference", **kw)
    p.add_argument("--log-level", dest="log_level",
                   choices=["debug", "info", "warning", "error"], **kw)
    p.add_argument("--out-dir", dest="out_dir", help="all outputs must land inside this directory", **kw)
    p.add_argument("--json", action="store_true", help="JSON-lines reports", **kw)
    p.add_argument("--config", dest="config_file", help="flat key = value file", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fenceguide", description=__doc__.splitlines()[0],
                     argument_default=argparse.SUPPRESS)
    _add_global(parser, top=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("edges", help="Canny edge map of one image", argument_default=argparse.SUPPRESS)
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    _add_canny(p)
    _add_global(p)

    p = sub.add_parser("guidance", help="stereo guidance mask from a left/right pair",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--left")
    p.add_argument("--right")
    p.add_argument("--out")
    p.add_argument("--tau", type=float)
    p.add_argument("--max-shift", dest="max_shift", type=int)
    p.add_argument("--min-shift", dest="min_shift", type=int)
    p.add_argument("--shift-dir", dest="shift_dir", choices=["left", "right", "both"])
    p.add_argument("--bandpass-inner", dest="bandpass_inner", type=float)
    p.add_argument("--bandpass-outer", dest="bandpass_outer", type=float)
    p.add_argument("--dump-curve", dest="dump_curve")
    p.add_argument("--dump-spectrum", dest="dump_spectrum")
    _add_canny(p)
    _add_global(p)

    p = sub.add_parser("dcl", help="directional connectivity loss of a soft mask image",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--mask")
    p.add_argument("--report", action="store_true")
    p.add_argument("--map-out", dest="map_out")
    _add_global(p)

    p = sub.add_parser("dcl-gradcheck", help="finite-difference check of the DCL gradient",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--size", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--rtol", type=float)
    p.add_argument("--min-pass", dest="min_pass", type=float)
    _add_global(p)

    p = sub.add_parser("synth", help="generate a pseudo-stereo dataset",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--out")
    p.add_argument("--train", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    _add_global(p)

    p = sub.add_parser("train", help="train the segmenter", argument_default=argparse.SUPPRESS)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--channels", type=int, choices=[1, 2])
    p.add_argument("--lambda-dcl", dest="lambda_dcl", type=float)
    p.add_argument("--lambda-l1", dest="lambda_l1", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--history")
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    _add_global(p)

    p = sub.add_parser("predict", help="predict a fence mask", argument_default=argparse.SUPPRESS)
    p.add_argument("--model")
    p.add_argument("--image")
    p.add_argument("--fm")
    p.add_argument("--out", help="mask file, or a directory with --manifest")
    p.add_argument("--threshold", type=float)
    p.add_argument("--manifest", help="predict every record of --split instead of one image")
    p.add_argument("--split", choices=["train", "test"])
    _add_global(p)

    p = sub.add_parser("eval", help="precision / recall / F-measure report",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--pred-dir", dest="pred_dir")
    p.add_argument("--gt-dir", dest="gt_dir")
    p.add_argument("--report")
    p.add_argument("--folds", type=int)
    p.add_argument("--tolerance", type=int)
    p.add_argument("--threshold", type=float)
    _add_global(p)
    return parser


def _add_canny(p):
    p.add_argument("--sigma", type=float)
    p.add_argument("--low", type=float)
    p.add_argument("--high", type=float)


def _read_flat_config(path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[root]\n" + Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    return {k.replace("-", "_"): v for k, v in parser["root"].items()}


def _coerce(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def resolve_config(command: str, ns: argparse.Namespace):
    """Merge CLI flags > config file > defaults. Returns (effective dict, extra file keys)."""
    cli = vars(ns).copy()
    cli.pop("command", None)
    config_file = cli.pop("config_file", None)
    defaults = {**GLOBAL_DEFAULTS, **DEFAULTS[command]}
    file_values, extra = {}, {}
    if config_file:
        allowed = set(defaults)
        if command == "synth":
            from .synth import SynthConfig
            from dataclasses import fields
            synth_keys = {f.name for f in fields(SynthConfig)}
        else:
            synth_keys = set()
        for key, raw in _read_flat_config(config_file).items():
            if key in allowed:
                file_values[key] = _coerce(raw, defaults[key]) if defaults[key] is not None else raw
            elif key in synth_keys:
                extra[key] = raw
            else:
                raise UsageError(f"unknown config key {key!r} for {command}")
    eff = {**defaults, **file_values, **cli}
    for key in REQUIRED.get(command, ()):
        if eff.get(key) is None:
            raise UsageError(f"{command}: missing required option --{key.replace('_', '-')}")
    if eff["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return eff, extra


class Runner:
    def __init__(self, cfg: dict, out=sys.stdout):
        self.cfg = cfg
        self.out = out
        self.out_dir = Path(cfg["out_dir"]).resolve() if cfg.get("out_dir") else None

    def report(self, **kv):
        if self.cfg.get("json"):
            self.out.write(json.dumps(kv, sort_keys=True, default=str) + "\n")
        else:
            self.out.write(" ".join(f"{k}={_fmt(v)}" for k, v in kv.items()) + "\n")

    def output_path(self, path) -> Path:
        p = Path(path)
        if self.out_dir is None:
            return p
        if not p.is_absolute():
            p = self.out_dir / p
        rp = p.resolve()
        if rp != self.out_dir and self.out_dir not in rp.parents:
            raise UsageError(f"output {p} lies outside --out-dir {self.out_dir}")
        return p


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------------------
# subcommands

def cmd_edges(r: Runner):
    from .edges import CannyParams, canny
    from .imagecore import load_image, save_mask
    c = r.cfg
    edges = canny(load_image(c["input"]), CannyParams(c["sigma"], c["low"], c["high"]))
    out = r.output_path(c["out"])
    save_mask(edges, out)
    r.report(command="edges", out=out, edge_pixels=int(edges.sum()))


def cmd_guidance(r: Runner):
    from .edges import CannyParams
    from .guidance import GuidanceParams, guidance_mask, spectrum_preview
    from .imagecore import load_image, save_image, save_mask
    c = r.cfg
    params = GuidanceParams(
        tau=c["tau"], bandpass_inner=c["bandpass_inner"],
        bandpass_outer=None if c["bandpass_outer"] is None else float(c["bandpass_outer"]),
        max_shift=None if c["max_shift"] is None else int(c["max_shift"]),
        min_shift=int(c["min_shift"]), shift_dir=c["shift_dir"])
    left, right = load_image(c["left"]), load_image(c["right"])
    keep = c["dump_spectrum"] is not None
    fm, curve = guidance_mask(left, right, CannyParams(c["sigma"], c["low"], c["high"]), params,
                              threads=c["threads"], keep_spectra=keep)
    out = r.output_path(c["out"])
    save_mask(fm, out)
    if c["dump_curve"]:
        r.output_path(c["dump_curve"]).write_text(curve.to_csv())
    if keep:
        d = r.output_path(c["dump_spectrum"])
        d.mkdir(parents=True, exist_ok=True)
        for shift, spec in curve.spectra.items():
            save_image(spectrum_preview(spec), d / f"spectrum_{shift:+04d}.png")
    r.report(command="guidance", out=out, best_shift=curve.best_shift,
             max_mas=max(curve.scores), median_mas=float(np.median(curve.scores)),
             low_confidence=curve.low_confidence, fm_pixels=int(fm.sum()))


def cmd_dcl(r: Runner):
    from .dcl import connectivity_map, dcl
    from .imagecore import load_image, save_image
    c = r.cfg
    y = load_image(c["mask"]).astype(np.float64) / 255.0
    value = dcl(y)
    if c["map_out"]:
        cmap = connectivity_map(y)
        img = np.floor(np.clip(cmap / 5.0, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        save_image(img, r.output_path(c["map_out"]))
    if c["report"] or not c["map_out"]:
        r.report(command="dcl", mask=c["mask"], dcl=value, height=y.shape[0], width=y.shape[1])


def cmd_dcl_gradcheck(r: Runner):
    from .gradcheck import dcl_gradcheck
    c = r.cfg
    res = dcl_gradcheck(seed=c["seed"], size=c["size"], count=c["count"], eps=c["eps"],
                        rtol=c["rtol"])
    ok = res.pass_fraction >= c["min_pass"] and res.tested > 0
    r.report(command="dcl-gradcheck", seed=c["seed"], masks=res.masks, tested=res.tested,
             passed=res.passed, pass_fraction=res.pass_fraction, max_rel_err=res.max_rel_err,
             ok=ok)
    return 0 if ok else 2


def cmd_synth(r: Runner, extra: dict):
    from .synth import SynthConfig, generate_dataset
    c = r.cfg
    values = dict(extra)
    for key, field_name in (("train", "n_train"), ("test", "n_test"), ("image_size", "image_size")):
        if c[key] is not None:
            values[field_name] = c[key]
    values["seed"] = c["seed"]
    cfg = SynthConfig.from_mapping(values)
    out = r.output_path(c["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = generate_dataset(cfg, out, threads=c["threads"])
    counts = manifest.counts
    r.report(command="synth", out=out, train=counts.get("train", 0), test=counts.get("test", 0),
             manifest=out / "manifest.jsonl")


def cmd_train(r: Runner):
    from .segmenter import TrainConfig, save_model, train
    from .synth import DatasetManifest
    c = r.cfg
    cfg = TrainConfig(learning_rate=c["lr"], batch_size=c["batch_size"], epochs=c["epochs"],
                      lambda_dcl=c["lambda_dcl"], lambda_l1=c["lambda_l1"], seed=c["seed"],
                      patch_size=c["patch_size"])
    manifest = DatasetManifest.load(c["manifest"])
    ckpt = None
    if c["checkpoint_dir"]:
        ckpt = r.output_path(c["checkpoint_dir"])
        ckpt.mkdir(parents=True, exist_ok=True)
    model, history = train(manifest, cfg, c_in=c["channels"], checkpoint_dir=ckpt)
    out = r.output_path(c["out"])
    save_model(model, out)
    hist_path = r.output_path(c["history"]) if c["history"] else out.with_suffix(".history.csv")
    if c["history"] is None:
        r.output_path(hist_path)
    hist_path.write_text(history.to_csv())
    last = history.rows[-1] if history.rows else {}
    r.report(command="train", out=out, epochs=len(history.rows), loss=last.get("loss"),
             val_f_measure=last.get("val_f_measure"), history=hist_path)


def cmd_predict(r: Runner):
    from .imagecore import load_image, load_mask, save_mask
    from .segmenter import load_model, predict
    from .synth import DatasetManifest
    c = r.cfg
    model = load_model(c["model"])
    if c["manifest"]:
        manifest = DatasetManifest.load(c["manifest"])
        out = r.output_path(c["out"])
        out.mkdir(parents=True, exist_ok=True)
        n = 0
        for rec in manifest.split(c["split"]):
            img = load_image(manifest.path(rec, "right_path"))
            fm = load_mask(manifest.path(rec, "fm_path")) if model.c_in == 2 else None
            mask = predict(model, img, fm, c["threshold"])
            save_mask(mask, out / Path(rec["gt_mask_path"]).name)
            n += 1
        r.report(command="predict", out=out, images=n)
        return
    if c["image"] is None:
        raise UsageError("predict: need --image or --manifest")
    fm = load_mask(c["fm"]) if c["fm"] else None
    if model.c_in == 2 and fm is None:
        raise UsageError("predict: this 2-channel model needs --fm")
    mask = predict(model, load_image(c["image"]), fm, c["threshold"])
    out = r.output_path(c["out"])
    save_mask(mask, out)
    r.report(command="predict", out=out, fence_pixels=int(mask.sum()))


def cmd_eval(r: Runner):
    from .evaluate import aggregate, aggregate_folds, prf_tolerant
    from .imagecore import load_image
    c = r.cfg
    pred_dir, gt_dir = Path(c["pred_dir"]), Path(c["gt_dir"])
    preds = sorted(p for p in pred_dir.iterdir() if p.suffix.lower() in (".png", ".pgm"))
    if not preds:
        raise UsageError(f"no prediction images in {pred_dir}")
    rows = []
    for p in preds:
        g = gt_dir / p.name
        pred = (load_image(p).astype(np.float64) / 255.0 > c["threshold"]).astype(np.uint8)
        gt = (load_image(g) > 0).astype(np.uint8)
        rows.append((p.name, prf_tolerant(pred, gt, c["tolerance"])))
    summary = aggregate([m for _, m in rows])
    lines = ["image,precision,recall,f_measure"]
    lines += [f"{name},{m.precision:.6f},{m.recall:.6f},{m.f_measure:.6f}" for name, m in rows]
    lines.append("mean,{:.6f},{:.6f},{:.6f}".format(*summary.mean))
    lines.append("std,{:.6f},{:.6f},{:.6f}".format(*summary.std))
    report = {"command": "eval", "images": len(rows), "precision": summary.mean[0],
              "recall": summary.mean[1], "f_measure": summary.mean[2]}
    if c["folds"]:
        folds = aggregate_folds([m for _, m in rows], int(c["folds"]))
        lines.append("fold_mean,{:.6f},{:.6f},{:.6f}".format(*folds.mean))
        lines.append("fold_std,{:.6f},{:.6f},{:.6f}".format(*folds.std))
        report["fold_f_std"] = folds.std[2]
    out = r.output_path(c["report"])
    out.write_text("\n".join(lines) + "\n")
    r.report(report=out, **report)


HANDLERS = {
    "edges": cmd_edges, "guidance": cmd_guidance, "dcl": cmd_dcl,
    "dcl-gradcheck": cmd_dcl_gradcheck, "train": cmd_train, "predict": cmd_predict,
    "eval": cmd_eval,
}


def _setup_logging(level: str):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("level=%(levelname)s logger=%(name)s msg=\"%(message)s\""))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper()))


def _limit_threads(n: int):
    # caps BLAS pools too; guidance and synth take ``threads`` explicitly
    return threadpool_limits(limits=n)


def dispatch(argv=None, out=None) -> int:
    out = out or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if not getattr(ns, "command", None):
            raise UsageError("a subcommand is required: " + ", ".join(SUBCOMMANDS))
        cfg, extra = resolve_config(ns.command, ns)
    except UsageError as exc:
        msg = str(exc)
        bad = re.search(r"invalid choice: '([^']*)'", msg)
        if bad and "command" in msg:
            hint = difflib.get_close_matches(bad.group(1), SUBCOMMANDS, n=1)
            msg = f"fenceguide: unknown command {bad.group(1)!r}"
            msg += f"; did you mean {hint[0]!r}?" if hint else ""
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"{msg}\n")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    _setup_logging(cfg["log_level"])
    log.info("command=%s " + " ".join(f"{k}={_fmt(v)}" for k, v in sorted(cfg.items())),
             ns.command)
    if extra:
        log.info("synth_config " + " ".join(f"{k}={v}" for k, v in sorted(extra.items())))
    runner = Runner(cfg, out)
    limiter = _limit_threads(cfg["threads"])
    try:
        if ns.command == "synth":
            code = cmd_synth(runner, extra)
        else:
            code = HANDLERS[ns.command](runner)
        return int(code or 0)
    except UsageError as exc:
        sys.stderr.write(f"fenceguide {ns.command}: {exc}\n")
        return 1
    except Exception as exc:  # runtime failure
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    finally:
        if limiter is not None:
            limiter.unregister()


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
