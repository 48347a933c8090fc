"""Command-line front end: train, eval, predict, profile, gradcheck, synth.

Exit codes: 0 on success, 1 for validation/configuration problems
(including bad flags and malformed inputs), 2 for runtime/numeric
failures such as divergent training or a failed gradient audit.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .autodiff import Tensor, sigmoid_np
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_run_config
from .errors import ConfigError, CrackSegError, NumericError
from .fusion import predict_mask
from .gradcheck import MODULES, run_gradchecks
from .metrics import miou, ods, ois, prf1, threshold_grid
from .model import build_model, model_forward
from .pngio import load_image, save_png
from .profiler import format_table, profile_model
from .synth import load_dataset, stack_samples, synth_dataset, write_dataset
from .train import fit


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; bad flags are a validation
    # problem here, so route them through the normal error path instead
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crackseg",
                description="Lightweight crack segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model and write a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=".")

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)

    r = sub.add_parser("predict", help="segment one image")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--threshold", type=float, default=0.5)

    f = sub.add_parser("profile", help="analytical params/FLOPs table")
    f.add_argument("--config", required=True)
    f.add_argument("--variant", choices=["original", "ds", "lr", "lrds"],
                   default=None)
    f.add_argument("--input", default=None, metavar="HxW")

    g = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    g.add_argument("--module", choices=["all"] + list(MODULES),
                   default="all")

    s = sub.add_parser("synth", help="generate a synthetic crack dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    return p


def _load_splits(cfg):
    if cfg.data.dir:
        return load_dataset(cfg.data.dir)
    return synth_dataset(cfg.data.synth_n, cfg.data.size, cfg.data.seed)


def _check_sizes(model_cfg, images):
    if images.shape[2:] != tuple(model_cfg.input_size):
        raise ConfigError(
            f"data is {images.shape[2]}x{images.shape[3]} but the model "
            f"is configured for "
            f"{model_cfg.input_size[0]}x{model_cfg.input_size[1]}; "
            f"align data.size with model.input_size")


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    seed = cfg.train.seed if args.seed is None else args.seed
    tcfg = replace(cfg.train, seed=seed)
    splits = _load_splits(cfg)
    train_set = stack_samples(splits["train"]) if splits["train"] else None
    val_set = stack_samples(splits["val"]) if splits["val"] else None
    if train_set is None or val_set is None:
        raise ConfigError("dataset must provide non-empty train and val "
                          "splits")
    _check_sizes(cfg.model, train_set[0])
    params, _ = build_model(cfg.model, seed=seed)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.txt")
    with open(log_path, "w") as fh:
        def log_fn(rec):
            line = (f"epoch {rec['epoch']:3d}  loss {rec['loss']:.4f}  "
                    f"val_f1 {rec['val_f1']:.4f}  "
                    f"val_miou {rec['val_miou']:.4f}  lr {rec['lr']:.2e}")
            fh.write(line + "\n")
            print(line)

        result = fit(params, model_forward, train_set, val_set, tcfg,
                     log_fn=log_fn)
    ckpt_path = os.path.join(args.out, "model.ckpt")
    save_checkpoint(ckpt_path, params, cfg.model, seed=seed)
    print(f"best val_f1 {result['best_f1']:.4f} at epoch "
          f"{result['best_epoch']} ({result['steps']} steps)")
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {log_path}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    params, model_cfg, _ = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data)["test"]
    if not samples:
        raise ConfigError(f"{args.data}: test split is empty")
    images, masks = stack_samples(samples)
    _check_sizes(model_cfg, images)
    probs, ps, rs, f1s, ious = [], [], [], [], []
    for i in range(len(images)):
        logits = model_forward(Tensor(images[i:i + 1]), params,
                               training=False)
        prob = sigmoid_np(logits.data[0, 0])
        probs.append(prob)
        pred = (prob >= cfg.eval.threshold).astype(np.uint8)
        p, r, f1 = prf1(pred, masks[i])
        ps.append(p)
        rs.append(r)
        f1s.append(f1)
        ious.append(miou(pred, masks[i]))
    grid = threshold_grid(cfg.eval.grid)
    labels = [masks[i] for i in range(len(images))]
    print(f"images     {len(images)}")
    print(f"threshold  {cfg.eval.threshold}")
    print(f"precision  {np.mean(ps):.4f}")
    print(f"recall     {np.mean(rs):.4f}")
    print(f"f1         {np.mean(f1s):.4f}")
    print(f"miou       {np.mean(ious):.4f}")
    print(f"ods        {ods(probs, labels, grid):.4f}")
    print(f"ois        {ois(probs, labels, grid):.4f}")
    return 0


def _cmd_predict(args) -> int:
    params, _, _ = load_checkpoint(args.checkpoint)
    image = load_image(args.image)
    logits = model_forward(Tensor(image[None]), params, training=False)
    mask = predict_mask(logits, args.threshold)
    save_png(args.out, mask[0, 0].astype(np.float64))
    print(f"wrote {args.out} ({int(mask.sum())} crack pixels)")
    return 0


def _cmd_profile(args) -> int:
    model_cfg = load_run_config(args.config).model
    if args.variant is not None:
        model_cfg = replace(model_cfg, variant=args.variant)
    if args.input is not None:
        try:
            h, w = (int(v) for v in args.input.lower().split("x"))
        except ValueError:
            raise ConfigError(f"--input expects HxW, got {args.input!r}") \
                from None
        model_cfg = replace(model_cfg, input_size=(h, w))
    report = profile_model(model_cfg)
    size = model_cfg.input_size
    print(format_table(report, title=f"{model_cfg.variant} @ "
                                     f"{size[0]}x{size[1]}"))
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradchecks(args.module)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.module:>6}/{r.name:<26} max rel err {r.err:.3e}  "
              f"{status}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed "
          f"(tolerance {results[0].tol:g})")
    if failed:
        raise NumericError(f"{len(failed)} gradient checks failed")
    return 0


def _cmd_synth(args) -> int:
    splits = synth_dataset(args.n, args.size, args.seed)
    write_dataset(args.out, splits)
    counts = {k: len(v) for k, v in splits.items()}
    print(f"wrote {args.n} samples to {args.out} "
          f"(train {counts['train']}, val {counts['val']}, "
          f"test {counts['test']})")
    return 0


_COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "predict": _cmd_predict,
             "profile": _cmd_profile, "gradcheck": _cmd_gradcheck,
             "synth": _cmd_synth}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CrackSegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())
