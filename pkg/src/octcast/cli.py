"""Command-line entry point: synth, labels, train, eval, predict, anticipate.

Exit codes: 0 ok, 2 usage/config/schema error, 3 IO error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import errors
from .config import load_config, override
from .geometry import label_record
from .heads import AnticipationHead, marginalize
from .io import read_dataset
from .model import OCTModel
from .pipeline import evaluate, forecast, train
from .pipeline.training import NonFiniteLossError
from .synthdata import build_dataset
from .tokens import collate

log = logging.getLogger("octcast")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
USAGE_ERRORS = (
    errors.ConfigError,
    errors.SchemaError,
    errors.AllTokensAblated,
    errors.UnmappedAction,
    errors.ShapeMismatch,
)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _grid(text: str) -> tuple[int, int]:
    parts = text.lower().replace(",", "x").split("x")
    try:
        h, w = (int(p) for p in parts) if len(parts) == 2 else (int(parts[0]),) * 2
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 32 or 32x32, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("grid sides must be positive")
    return h, w


def _load_model(path) -> OCTModel:
    return OCTModel.load(path)


def _check_compatible(samples, model: OCTModel):
    cfg = model.cfg
    for s in samples:
        if s.F != cfg.F or s.features["global"].shape[-1] != cfg.d_feat:
            raise errors.SchemaError(
                f"{s.id}: data has F={s.F}, d_feat={s.features['global'].shape[-1]}; "
                f"weights expect F={cfg.F}, d_feat={cfg.d_feat}"
            )


# --- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    synth = cfg["synth"]
    n = build_dataset(args.n, args.seed, synth, args.out)
    print(n)
    if args.fidelity:
        samples = read_dataset(args.out)
        errs = [
            float(np.abs(s.gt_trajectory.points - s.oracle_trajectory.points)[s.gt_trajectory.visible].mean())
            for s in samples
            if s.oracle_trajectory is not None and s.gt_trajectory.visible.any()
        ]
        print(_dumps({"n": len(errs), "mean_abs_error": float(np.mean(errs)) if errs else None}))
    return EXIT_OK


def cmd_labels(args) -> int:
    cfg = override(
        load_config(args.config)["labels"],
        ransac_threshold=args.ransac_threshold,
        dense_fps=args.dense_fps,
        label_fps=args.label_fps,
        ransac_seed=args.seed,
    )
    out_lines = []
    with open(args.detections) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise errors.SchemaError("record must be a JSON object")
                labels, warnings = label_record(record, cfg)
            except (ValueError, errors.SchemaError) as exc:
                raise errors.SchemaError(f"{args.detections}:{lineno}: {exc}") from exc
            for w in warnings:
                print(f"warning: line {lineno}: {w}", file=sys.stderr)
            out_lines.append(_dumps(labels))
    if not out_lines:
        raise errors.SchemaError(f"{args.detections}: no records")
    Path(args.out).write_text("\n".join(out_lines) + "\n")
    print(len(out_lines))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    samples = read_dataset(args.data)
    # horizon and feature width are properties of the data
    model_cfg = override(cfg["model"], F=samples[0].F, d_feat=int(samples[0].features["global"].shape[-1]))
    train_cfg = override(
        cfg["train"],
        seed=args.seed,
        epochs=args.epochs,
        lr=args.lr,
        batch=args.batch,
        ablate=sorted(set(args.ablate)) if args.ablate else None,
    )
    log_path = args.log or f"{args.out_weights}.log.jsonl"
    try:
        model, history = train(samples, train_cfg, model_cfg, log_path=log_path)
    except NonFiniteLossError as exc:
        exc.last_good.save(args.out_weights, meta={"seed": train_cfg.seed, "aborted": True})
        print(f"error: {exc}; last good weights kept in {args.out_weights}", file=sys.stderr)
        return EXIT_NUMERIC
    model.save(args.out_weights, meta={"seed": train_cfg.seed, "epochs": train_cfg.epochs})
    print(_dumps(history[-1]))
    return EXIT_OK


def cmd_eval(args) -> int:
    ev = override(load_config(args.config)["eval"], k=args.k, grid=args.grid, sigma=args.sigma, seed=args.seed)
    samples = read_dataset(args.data)
    model = _load_model(args.weights)
    _check_compatible(samples, model)
    report = evaluate(samples, model, ev, baselines=args.baselines, zero_noise=args.zero_noise)
    text = _dumps(report)
    if args.report:
        Path(args.report).write_text(text + "\n")
    summary = {k: v for k, v in report.items() if k != "per_sample"}
    print(_dumps(summary))
    return EXIT_OK


def cmd_predict(args) -> int:
    from .plot import forecast_svg

    ev = override(load_config(args.config)["eval"], k=args.k, grid=args.grid, sigma=args.sigma, seed=args.seed)
    samples = {s.id: s for s in read_dataset(args.data)}
    if args.id not in samples:
        raise errors.SchemaError(f"unknown sample id {args.id!r}")
    sample = samples[args.id]
    model = _load_model(args.weights)
    _check_compatible([sample], model)
    res = forecast(sample, model, k=ev.k, seed=ev.seed, sigma=ev.sigma, grid=ev.grid, zero_noise=args.zero_noise)
    text = _dumps({"id": sample.id, **res.to_dict()})
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if args.plot:
        Path(args.plot).write_text(forecast_svg(sample, res))
    return EXIT_OK


def _action_labels(samples, path):
    if path is None:
        labels = {s.id: s.action for s in samples}
    else:
        labels = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    labels[str(rec["id"])] = (int(rec["verb"]), int(rec["noun"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise errors.SchemaError(f"{path}:{lineno}: malformed label record ({exc!r})") from exc
    missing = [s.id for s in samples if labels.get(s.id) is None]
    if missing:
        raise errors.SchemaError(f"{len(missing)} samples lack action labels (first: {missing[0]})")
    return [labels[s.id] for s in samples]


def _topk(logits: np.ndarray, target: np.ndarray, k: int) -> float:
    k = min(k, logits.shape[-1])
    top = np.argsort(-logits, axis=-1, kind="stable")[:, :k]
    return float((top == target[:, None]).any(axis=1).mean())


def cmd_anticipate(args) -> int:
    samples = read_dataset(args.data)
    actions = _action_labels(samples, args.labels)
    model = _load_model(args.weights)
    _check_compatible(samples, model)
    if not 0 < args.holdout < 1:
        raise errors.ConfigError("--holdout must be in (0, 1)")
    for p in model.parameters():
        p.requires_grad_(False)

    vocab = sorted(set(actions))
    index = {a: i for i, a in enumerate(vocab)}
    verb_map = [a[0] for a in vocab]
    noun_map = [a[1] for a in vocab]
    y = torch.as_tensor([index[a] for a in actions])

    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(samples))
    n_test = max(1, int(round(args.holdout * len(samples))))
    test_idx, train_idx = order[:n_test], order[n_test:]
    if len(train_idx) == 0:
        raise errors.ConfigError("holdout leaves no training samples")

    with torch.no_grad():
        model.eval()
        z = model.encode(collate(samples)).Z_gT
    torch.manual_seed(args.seed)
    head = AnticipationHead(model.cfg.D, len(vocab))
    opt = torch.optim.Adam(head.parameters(), lr=args.lr)
    xt, yt = z[train_idx], y[train_idx]
    for _ in range(args.epochs):
        opt.zero_grad()
        loss = torch.nn.functional.cross_entropy(head(xt), yt)
        loss.backward()
        opt.step()
    if not torch.isfinite(loss):
        raise errors.NonFiniteLoss("anticipation head loss is not finite")

    with torch.no_grad():
        logits = head(z[test_idx]).double().numpy()
    verb_p, noun_p = marginalize(logits, verb_map, noun_map)
    target = y[test_idx].numpy()
    verb_t = np.array([actions[i][0] for i in test_idx])
    noun_t = np.array([actions[i][1] for i in test_idx])
    report = {
        "n_train": int(len(train_idx)),
        "n_test": int(len(test_idx)),
        "n_actions": len(vocab),
        "final_loss": float(loss.item()),
    }
    for name, scores, t in (("action", logits, target), ("verb", verb_p, verb_t), ("noun", noun_p, noun_t)):
        # verb/noun ids index the marginal columns directly
        report[f"{name}_top1"] = _topk(scores, t, 1)
        report[f"{name}_top5"] = _topk(scores, t, 5)
    text = _dumps(report)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="octcast", description="Hand-trajectory and interaction-hotspot forecasting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--config", help="sectioned JSON config file")
        sp.add_argument("--seed", type=int, default=seed_default)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    common(s)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fidelity", action="store_true", help="also report pipeline-label error against the generator")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("labels", help="generate labels from detections and correspondences")
    common(s, seed_default=None)
    s.add_argument("--detections", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ransac-threshold", type=float)
    s.add_argument("--dense-fps", type=int)
    s.add_argument("--label-fps", type=int)
    s.set_defaults(func=cmd_labels)

    s = sub.add_parser("train", help="train a model")
    common(s, seed_default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--out-weights", required=True)
    s.add_argument("--ablate", action="append", choices=("hand", "object", "global"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--log", help="training log path (default: <weights>.log.jsonl)")
    s.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate on a split"), ("predict", cmd_predict, "forecast one sample")):
        s = sub.add_parser(name, help=helptext)
        common(s, seed_default=None)
        s.add_argument("--data", required=True)
        s.add_argument("--weights", required=True)
        s.add_argument("--k", type=int)
        s.add_argument("--grid", type=_grid)
        s.add_argument("--sigma", type=float)
        s.add_argument("--zero-noise", action="store_true", help="use zero latent draws")
        s.set_defaults(func=func)
    sub.choices["eval"].add_argument("--report")
    sub.choices["eval"].add_argument("--baselines", action="store_true")
    sub.choices["predict"].add_argument("--id", required=True)
    sub.choices["predict"].add_argument("--plot", help="write an SVG figure")
    sub.choices["predict"].add_argument("--out", help="forecast JSON path (default: stdout)")

    s = sub.add_parser("anticipate", help="train an action-anticipation head on a frozen encoder")
    common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--labels", help="JSON-lines {id, verb, noun}; default: labels stored in the dataset")
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--lr", type=float, default=1e-2)
    s.add_argument("--holdout", type=float, default=0.25)
    s.add_argument("--report")
    s.set_defaults(func=cmd_anticipate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("OCTCAST_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"error: OCTCAST_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except errors.NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
