"""``veinmt`` command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import config as cfgmod
from .config import ConfigError, RunConfig
from .data import DataError, Dataset
from .diffcore import NonFiniteError, ShapeError

log = logging.getLogger("veinmt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------- helpers

def _paths(args, rc: RunConfig, *keys: str) -> dict[str, Path | None]:
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        out[k] = Path(v) if v is not None else rc.path(k)
    return out


def _require(paths: dict, *keys: str) -> None:
    missing = [k for k in keys if paths.get(k) is None]
    if missing:
        raise UsageError("missing required path(s): " + ", ".join(f"--{k}" for k in missing))


def _check_input(path: Path, what: str, is_dir: bool = False) -> None:
    ok = path.is_dir() if is_dir else path.is_file()
    if not ok:
        raise DataError(f"{what} not found: {path}")


def _check_output(path: Path, overwrite: bool, allow: Path | None = None) -> None:
    if path.exists() and not overwrite and path != allow:
        raise UsageError(f"output {path} exists (pass --overwrite)")
    if not path.parent.exists():
        raise UsageError(f"output directory {path.parent} does not exist")


def _load_images(args, paths) -> Dataset:
    from .ingest import ingest_dataset, load_image

    if getattr(args, "input", None):
        imgs = [load_image(p) for p in args.input]
        names = [Path(p).stem for p in args.input]
        return Dataset(np.stack(imgs), np.zeros(len(imgs), int), ["input"], names, list(args.input))
    _require(paths, "data")
    return ingest_dataset(paths["data"])


def _load_ckpt(path: Path) -> ck.Checkpoint:
    _check_input(path, "checkpoint")
    return ck.load(path)


def _augmentor(ckpt: ck.Checkpoint, rc: RunConfig, aug=None):
    from .mtaug import MTAugmentor

    basis = ck.get_basis(ckpt)
    if basis is None:
        raise DataError("checkpoint has no motion-basis section (run analyze-motion first)")
    return MTAugmentor(ck.get_model(ckpt), basis, aug or rc.aug)


# ---------------------------------------------------------------------------- commands

def cmd_synth_gen(args, rc: RunConfig) -> int:
    from .veinsim import gen_dataset

    p = _paths(args, rc, "out")
    _require(p, "out")
    out = p["out"]
    if out.exists() and any(out.iterdir()) and not args.overwrite:
        raise UsageError(f"output {out} exists and is not empty (pass --overwrite)")
    train_r, test_r = rc.synth.pose_ranges()
    ds = gen_dataset(out, rc.synth.classes, rc.synth.samples, train_r, rc.seed, True, test_r)
    print(f"wrote {len(ds)} images in {ds.num_classes} classes to {out}")
    return EXIT_OK


def cmd_train_mt(args, rc: RunConfig) -> int:
    from .ingest import ingest_dataset
    from .model import MTModel
    from .mttrain import train

    p = _paths(args, rc, "data", "out", "log")
    _require(p, "data", "out")
    _check_input(p["data"], "dataset directory", is_dir=True)
    _check_output(p["out"], args.overwrite)
    log_path = p["log"] or Path(str(p["out"]) + ".metrics.tsv")
    _check_output(log_path, args.overwrite)
    ds = ingest_dataset(p["data"])
    tc = rc.train_config()
    model = MTModel(rc.model_config(ds.image_shape))
    result = train(ds, tc, model=model, log_path=log_path)
    ck.save(p["out"], ck.from_model(result.model, meta={"train": dataclasses.asdict(tc)}))
    last = result.history[-1] if result.history else None
    print(f"saved {p['out']} ({model.num_parameters()} parameters)"
          + (f"; final perceptual loss {last.loss_perc:.5f}" if last else ""))
    return EXIT_OK


def cmd_analyze_motion(args, rc: RunConfig) -> int:
    from .ingest import ingest_dataset
    from .mtaug import analyze_motion

    p = _paths(args, rc, "data", "checkpoint", "out")
    _require(p, "data", "checkpoint")
    _check_input(p["data"], "dataset directory", is_dir=True)
    out = p["out"] or p["checkpoint"]
    _check_output(out, args.overwrite, allow=p["checkpoint"])
    ckpt = _load_ckpt(p["checkpoint"])
    model = ck.get_model(ckpt)
    ds = ingest_dataset(p["data"])
    basis = analyze_motion(ds, model.detector, rc.aug.n)
    ck.save(out, ck.add_basis(ckpt, basis))
    if args.export:
        basis.export_text(args.export)
    print(f"motion basis: {basis.n} components, variances " + " ".join(f"{v:.4g}" for v in basis.variances))
    return EXIT_OK


def cmd_augment(args, rc: RunConfig) -> int:
    from .mtaug import augment
    from .veinsim import save_png

    p = _paths(args, rc, "data", "checkpoint", "out")
    _require(p, "checkpoint", "out")
    ckpt = _load_ckpt(p["checkpoint"])
    aug = rc.aug
    if args.scale is not None:
        aug = dataclasses.replace(aug, scale_min=abs(args.scale), scale_max=abs(args.scale))
    augmentor = _augmentor(ckpt, rc, aug)
    ds = _load_images(args, p)
    out = p["out"]
    if out.exists() and any(out.iterdir()) and not args.overwrite:
        raise UsageError(f"output {out} exists and is not empty (pass --overwrite)")
    rng = np.random.default_rng([rc.seed, 3])
    n = 0
    for i in range(len(ds)):
        cdir = out / ds.class_ids[ds.labels[i]]
        cdir.mkdir(parents=True, exist_ok=True)
        for k in range(args.variants):
            img = augment(ds.images[i], augmentor.model, augmentor.basis, rng, aug)
            save_png(cdir / f"{ds.names[i]}_aug{k:02d}.png", img)
            n += 1
    print(f"wrote {n} augmented images to {out}")
    return EXIT_OK


def cmd_train_fvr(args, rc: RunConfig) -> int:
    from .fvreval import train_fvr, write_scores
    from .ingest import ingest_dataset

    p = _paths(args, rc, "data", "checkpoint", "out", "scores", "log")
    _require(p, "data")
    _check_input(p["data"], "dataset directory", is_dir=True)
    out = p["out"] or p["checkpoint"]
    if out is None:
        raise UsageError("train-fvr needs --out (or --checkpoint to extend)")
    _check_output(out, args.overwrite, allow=p["checkpoint"])
    ckpt = _load_ckpt(p["checkpoint"]) if p["checkpoint"] is not None else ck.Checkpoint()
    augmentor = None if args.no_mtaug else (_augmentor(ckpt, rc) if p["checkpoint"] is not None else None)
    if augmentor is None and not args.no_mtaug:
        log.info("no checkpoint given: training without MT-Aug")
    ds = ingest_dataset(p["data"])
    fc = rc.fvr_config()
    res = train_fvr(ds, augmentor, fc, log_path=p["log"])
    ckpt.meta["fvr"] = {"config": fc.to_dict(), "eer": res.eer, "threshold": res.threshold,
                        "mtaug": augmentor is not None}
    ck.save(out, ck.add_embedder(ckpt, res.embedder))
    if p["scores"] is not None:
        write_scores(p["scores"], res.scores)
    print(f"EER {res.eer:.4f}")
    print(f"threshold {res.threshold:.6f} genuine {len(res.scores.genuine)} impostor {len(res.scores.impostor)}")
    return EXIT_OK


def cmd_eval_eer(args, rc: RunConfig) -> int:
    from .fvreval import compute_eer, evaluate, read_scores, split_dataset, write_scores
    from .ingest import ingest_dataset

    p = _paths(args, rc, "data", "checkpoint", "scores", "out")
    if p["scores"] is not None and p["checkpoint"] is None:
        _check_input(p["scores"], "score file")
        scores = read_scores(p["scores"])
        eer, thr = compute_eer(scores)
    else:
        _require(p, "checkpoint", "data")
        ckpt = _load_ckpt(p["checkpoint"])
        emb = ck.get_embedder(ckpt)
        if emb is None:
            raise DataError("checkpoint has no embedder section (run train-fvr first)")
        _check_input(p["data"], "dataset directory", is_dir=True)
        fc = rc.fvr_config()
        _, test = split_dataset(ingest_dataset(p["data"]), fc)
        eer, thr, scores = evaluate(emb, test, fc.seed, fc.full_impostor)
        if p["out"] is not None:
            write_scores(p["out"], scores)
    print(f"EER {eer:.4f}")
    print(f"threshold {thr:.6f}")
    return EXIT_OK


def cmd_render_grid(args, rc: RunConfig) -> int:
    from .veinsim import save_png
    from .viz import motion_grid

    p = _paths(args, rc, "data", "checkpoint", "out")
    _require(p, "checkpoint", "out")
    _check_output(p["out"], args.overwrite)
    ckpt = _load_ckpt(p["checkpoint"])
    augmentor = _augmentor(ckpt, rc)
    ds = _load_images(args, p)
    rows = ds.images[:args.rows]
    grid = motion_grid(rows, augmentor.model, augmentor.basis, args.directions)
    save_png(p["out"], grid)
    print(f"wrote {grid.shape[1]}x{grid.shape[0]} grid to {p['out']}")
    return EXIT_OK


COMMANDS = {
    "synth-gen": (cmd_synth_gen, "generate a synthetic vein dataset"),
    "train-mt": (cmd_train_mt, "train the motion-transfer model"),
    "analyze-motion": (cmd_analyze_motion, "fit the principal motion basis into a checkpoint"),
    "augment": (cmd_augment, "write augmented variants of input images"),
    "train-fvr": (cmd_train_fvr, "train the recognition baseline and report EER"),
    "eval-eer": (cmd_eval_eer, "EER from a score dump or a checkpoint and dataset"),
    "render-grid": (cmd_render_grid, "PNG grid of sources moved along principal motions"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="BLAS threads; 1 gives bit-reproducible runs")
    common.add_argument("--out", help="output path")
    common.add_argument("--overwrite", action="store_true", help="replace existing outputs")
    common.add_argument("--data", help="dataset root: <root>/<class>/<sample>.png|.pgm")
    common.add_argument("--checkpoint", help="checkpoint file")
    common.add_argument("--log", help="per-epoch metrics log")

    parser = _Parser(prog="veinmt", description="Motion-transfer augmentation for finger-vein recognition.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    subs = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}
    subs["analyze-motion"].add_argument("--export", help="also write the basis as plain text")
    subs["augment"].add_argument("--input", nargs="+", help="image files instead of --data")
    subs["augment"].add_argument("--variants", type=int, default=4, help="augmented images per input")
    subs["augment"].add_argument("--scale", type=float, help="fixed motion scale (0 gives the identity)")
    subs["train-fvr"].add_argument("--scores", help="write held-out scores here")
    subs["train-fvr"].add_argument("--no-mtaug", action="store_true", help="conventional augmentation only")
    subs["eval-eer"].add_argument("--scores", help="score dump to evaluate ('genuine|impostor <score>' lines)")
    subs["render-grid"].add_argument("--input", nargs="+", help="image files instead of --data")
    subs["render-grid"].add_argument("--rows", type=int, default=4)
    subs["render-grid"].add_argument("--directions", type=int, default=3)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("MT_LOG", "info").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    if level not in LOG_LEVELS:
        log.warning("MT_LOG=%s not recognised; using info", level)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip())
    rc = cfgmod.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be nonnegative")
        rc.seed = args.seed
    threads = args.threads if args.threads is not None else rc.threads
    if threads is not None and threads < 1:
        raise UsageError("--threads must be >= 1")
    if getattr(args, "variants", 1) < 1:
        raise UsageError("--variants must be >= 1")
    limiter = contextlib.nullcontext()
    if threads is not None:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=threads)
    with limiter:
        return COMMANDS[args.command][0](args, rc)


def main(argv=None) -> int:
    from .mttrain import TrainingDiverged

    _setup_logging()
    try:
        return run(argv)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, FileNotFoundError, FileExistsError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
