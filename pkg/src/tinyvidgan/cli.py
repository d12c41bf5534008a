"""Command-line entry point exposing every pipeline stage.

One binary, subcommand style. Training hyperparameters merge from three
levels with fixed precedence: command-line flags beat config-file
values, which beat defaults. Exit codes: 0 success, 1 usage error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import checkpoint_from_networks, load_checkpoint, save_checkpoint
from .engine import SplitMix64, Tensor, no_grad
from .evalsvc import Experiment, PreferenceLog
from .evalsvc import aggregate as aggregate_records
from .evalsvc import serve_forever
from .export import export_gif
from .gmm import GmmModel, fit_gmm, sample_baseline
from .nets import (
    Discriminator,
    FrameEncoder,
    NetConfig,
    OneStreamGenerator,
    TwoStreamGenerator,
    TwoStreamOutput,
)
from .replearn import (
    FinetuneConfig,
    data_fraction_sweep,
    finetune,
    load_labeled_split,
    save_unit_report,
    visualize_unit,
)
from .training import TrainConfig, run_gan_training, train_autoencoder
from .videoio import Clip, ingest_manifest, read_clip, write_clip


class UsageError(Exception):
    """Bad invocation; maps to exit code 1."""


_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_NET_KEYS = {f.name for f in dataclasses.fields(NetConfig)}


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; # comments; int/float/bool coercion."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip().strip("'\"")
        if val.lower() in ("true", "false"):
            parsed = val.lower() == "true"
        else:
            try:
                parsed = int(val)
            except ValueError:
                try:
                    parsed = float(val)
                except ValueError:
                    parsed = val
        values[key] = parsed
    return values


def build_run_config(args) -> tuple:
    """Merge flags > config file > defaults into Train/Net configs."""
    file_vals = parse_config_file(args.config) if args.config else {}
    unknown = set(file_vals) - _TRAIN_KEYS - _NET_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    flag_map = {
        "batch_size": args.batch_size, "lr": args.lr, "beta1": args.beta1,
        "lambda_mask": args.lambda_mask, "lambda_rec": args.lambda_rec,
        "max_iterations": args.iters, "seed": args.seed,
        "checkpoint_every": args.checkpoint_every, "rec_l1": args.rec_l1,
        "latent_dim": args.latent_dim, "frames": args.frames,
        "spatial": args.spatial, "base_channels": args.base_channels,
        "scale_factor": args.scale,
    }
    merged = dict(file_vals)
    for key, val in flag_map.items():
        if val is not None:
            merged[key] = val
    if merged.get("seed") is None:
        raise UsageError("--seed is required for training commands")
    train_kwargs = {k: v for k, v in merged.items() if k in _TRAIN_KEYS}
    net_kwargs = {k: v for k, v in merged.items() if k in _NET_KEYS}
    try:
        return TrainConfig(**train_kwargs), NetConfig(**net_kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _resolve(workdir: str, path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(workdir) / p


def _load_clip_dir(path) -> np.ndarray:
    path = Path(path)
    files = sorted(path.glob("*.tvclip"))
    if not files:
        raise FileNotFoundError(f"no .tvclip files in {path}")
    clips = []
    for f in files:
        clip = read_clip(f)
        clips.append(clip.to_float().data if clip.dtype == np.uint8
                     else clip.data)
    return np.stack(clips)


def _load_networks_from(ckpt, builders: dict) -> dict:
    """Instantiate and restore the named networks from a checkpoint."""
    nets = {}
    for name, build in builders.items():
        prefix = name + "/"
        arrays = {k[len(prefix):]: v for k, v in ckpt.arrays.items()
                  if k.startswith(prefix)}
        if not arrays:
            raise ValueError(f"checkpoint holds no {name!r} arrays")
        net = build(ckpt.config)
        net.load_state(arrays)
        nets[name] = net
    return nets


def _generator_builder(arch: str):
    if arch == "one-stream":
        return OneStreamGenerator
    return TwoStreamGenerator


def _open_log(args):
    if args.log:
        return open(_resolve(args.workdir, args.log), "w")
    return sys.stdout


def cmd_ingest(args) -> int:
    tags = args.tags.split(",") if args.tags else None
    written = ingest_manifest(
        _resolve(args.workdir, args.manifest), _resolve(args.workdir, args.out),
        clip_len=args.clip_len, size=args.size, tags=tags,
        run_stabilize=not args.no_stabilize)
    print(f"wrote {len(written)} clips")
    return 0


def _run_training(args, conditional: bool) -> int:
    tcfg, ncfg = build_run_config(args)
    clips = _load_clip_dir(_resolve(args.workdir, args.data))
    ckpt_dir = (_resolve(args.workdir, args.checkpoint_dir)
                if args.checkpoint_dir else None)
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    stream = _open_log(args)
    try:
        run_gan_training(clips, tcfg, ncfg, arch=args.arch,
                         conditional=conditional, log_stream=stream,
                         checkpoint_dir=ckpt_dir)
    finally:
        if stream is not sys.stdout:
            stream.close()
    return 0


def cmd_train_gan(args) -> int:
    return _run_training(args, conditional=False)


def cmd_train_future(args) -> int:
    return _run_training(args, conditional=True)


def cmd_train_baseline(args) -> int:
    tcfg, ncfg = build_run_config(args)
    clips = _load_clip_dir(_resolve(args.workdir, args.data))
    stream = _open_log(args)
    try:
        result = train_autoencoder(clips, tcfg, ncfg, log_stream=stream)
    finally:
        if stream is not sys.stdout:
            stream.close()
    codes = []
    with no_grad():
        for lo in range(0, len(clips), 32):
            z = result.encoder.forward(Tensor(clips[lo:lo + 32]), "eval")
            codes.append(z.data)
    gmm = fit_gmm(np.concatenate(codes), args.gmm_k, seed=tcfg.seed)
    ckpt = checkpoint_from_networks(
        ncfg, {"encoder": result.encoder, "decoder": result.decoder},
        seed=tcfg.seed, iteration=tcfg.max_iterations)
    ckpt.meta["kind"] = "baseline"
    ckpt.arrays["gmm/weights"] = gmm.weights
    ckpt.arrays["gmm/means"] = gmm.means
    ckpt.arrays["gmm/variances"] = gmm.variances
    out = _resolve(args.workdir, args.out)
    save_checkpoint(out, ckpt)
    print(f"saved baseline checkpoint to {out}")
    return 0


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(_resolve(args.workdir, args.checkpoint))
    out_dir = _resolve(args.workdir, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    videos = []
    if "gmm/weights" in ckpt.arrays:
        nets = _load_networks_from(ckpt, {"decoder": TwoStreamGenerator})
        gmm = GmmModel(np.asarray(ckpt.arrays["gmm/weights"], np.float64),
                       np.asarray(ckpt.arrays["gmm/means"], np.float64),
                       np.asarray(ckpt.arrays["gmm/variances"], np.float64))
        for i in range(args.count):
            videos.append(sample_baseline(gmm, nets["decoder"],
                                          seed=args.seed + i))
    else:
        arch = ckpt.meta.get("arch", "two-stream")
        nets = _load_networks_from(ckpt,
                                   {"generator": _generator_builder(arch)})
        gen = nets["generator"]
        z = SplitMix64(args.seed).normal(
            (args.count, ckpt.config.latent_dim)).astype(np.float32)
        with no_grad():
            out = gen.forward(Tensor(z), "eval")
            video = out.video if isinstance(out, TwoStreamOutput) else out
        videos = list(video.data)
    files = []
    for i, video in enumerate(videos):
        path = out_dir / f"clip-{i:04d}.tvclip"
        write_clip(path, Clip(np.clip(video, -1.0, 1.0).astype(np.float32)))
        files.append(path.name)
    manifest = {"seed": args.seed, "count": args.count, "files": files}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(files)} clips to {out_dir}")
    return 0


def cmd_predict_future(args) -> int:
    ckpt = load_checkpoint(_resolve(args.workdir, args.checkpoint))
    if not ckpt.meta.get("conditional"):
        raise ValueError("checkpoint was not trained for future prediction")
    arch = ckpt.meta.get("arch", "two-stream")
    nets = _load_networks_from(ckpt, {
        "generator": _generator_builder(arch), "encoder": FrameEncoder})
    clip = read_clip(_resolve(args.workdir, args.input))
    data = clip.to_float().data if clip.dtype == np.uint8 else clip.data
    x0 = data[:, 0]
    with no_grad():
        z = nets["encoder"].forward(Tensor(x0[None]), "eval")
        out = nets["generator"].forward(z, "eval")
        video = out.video if isinstance(out, TwoStreamOutput) else out
    path = _resolve(args.workdir, args.out)
    write_clip(path, Clip(np.clip(video.data[0], -1.0, 1.0).astype(np.float32)))
    print(f"wrote {path}")
    return 0


def cmd_finetune(args) -> int:
    train, test, names = load_labeled_split(_resolve(args.workdir, args.data))
    k = len(names)
    pretrained = (_resolve(args.workdir, args.pretrained)
                  if args.pretrained else None)
    res = finetune(pretrained, train, test, k, dropout_rate=args.dropout,
                   config=FinetuneConfig(steps=args.steps,
                                         batch_size=args.batch_size or 16,
                                         lr=args.lr or 1e-4, seed=args.seed))
    print(json.dumps({"classes": names, "test_accuracy": res.accuracy}))
    if args.out:
        clf = res.classifier
        ckpt = checkpoint_from_networks(clf.cfg, {"classifier": clf},
                                        seed=args.seed)
        ckpt.meta["classes"] = names
        save_checkpoint(_resolve(args.workdir, args.out), ckpt)
    return 0


def cmd_sweep(args) -> int:
    train, test, names = load_labeled_split(_resolve(args.workdir, args.data))
    fractions = tuple(float(f) for f in args.fractions.split(","))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    pretrained = _resolve(args.workdir, args.pretrained)
    res = data_fraction_sweep(
        pretrained, train, test, len(names), fractions=fractions,
        seeds=seeds, config=FinetuneConfig(steps=args.steps, seed=args.seed))
    res.to_csv(_resolve(args.workdir, args.out))
    summary = {repr(f): {"pretrained": res.mean_accuracy(f, "pretrained"),
                         "random": res.mean_accuracy(f, "random"),
                         "relative_gain": res.relative_gain(f)}
               for f in fractions}
    print(json.dumps(summary, indent=2))
    return 0


def cmd_visualize_units(args) -> int:
    ckpt = load_checkpoint(_resolve(args.workdir, args.checkpoint))
    if any(k.startswith("discriminator/") for k in ckpt.arrays):
        nets = _load_networks_from(ckpt, {"discriminator": Discriminator})
        net = nets["discriminator"]
    else:
        k = len(ckpt.meta.get("classes", [])) or 2
        from .replearn import ClipClassifier
        nets = _load_networks_from(
            ckpt, {"classifier": lambda cfg: ClipClassifier(cfg, k)})
        net = nets["classifier"]
    clips = _load_clip_dir(_resolve(args.workdir, args.data))
    report = visualize_unit(net, args.layer, args.unit, clips, k=args.top)
    out = save_unit_report(report, clips, _resolve(args.workdir, args.out))
    print(f"wrote {out}")
    return 0


def cmd_export_gif(args) -> int:
    src = _resolve(args.workdir, args.input)
    out_dir = _resolve(args.workdir, args.out)
    files = sorted(src.glob("*.tvclip")) if src.is_dir() else [src]
    if not files:
        raise FileNotFoundError(f"no clips at {src}")
    for f in files:
        export_gif(read_clip(f, normalize=True), out_dir / (f.stem + ".gif"),
                   fps=args.fps)
    print(f"wrote {len(files)} gifs to {out_dir}")
    return 0


def cmd_serve_eval(args) -> int:
    experiment = Experiment.from_json(_resolve(args.workdir, args.experiment))
    serve_forever(experiment, _resolve(args.workdir, args.log_path),
                  host=args.host, port=args.port,
                  media_dir=(_resolve(args.workdir, args.media_dir)
                             if args.media_dir else None),
                  ui_dir=(_resolve(args.workdir, args.ui_dir)
                          if args.ui_dir else None),
                  seed=args.seed)
    return 0


def cmd_aggregate(args) -> int:
    records = PreferenceLog(_resolve(args.workdir, args.log_path)).load()
    exclude = args.exclude.split(",") if args.exclude else None
    table = aggregate_records(records, exclude_raters=exclude)
    print(json.dumps(table.to_dict(), indent=2))
    return 0


def _add_workdir(sub) -> None:
    sub.add_argument("--workdir", default=".",
                     help="base directory for relative paths")


def _add_train_flags(sub) -> None:
    _add_workdir(sub)
    sub.add_argument("--data", required=True, help="directory of .tvclip files")
    sub.add_argument("--config", help="key = value config file")
    sub.add_argument("--seed", type=int, help="RNG seed (required)")
    sub.add_argument("--iters", type=int, help="training iterations")
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--lr", type=float)
    sub.add_argument("--beta1", type=float)
    sub.add_argument("--lambda-mask", type=float, dest="lambda_mask")
    sub.add_argument("--lambda-rec", type=float, dest="lambda_rec")
    sub.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    sub.add_argument("--rec-l1", action="store_const", const=True,
                     default=None, dest="rec_l1")
    sub.add_argument("--latent-dim", type=int, dest="latent_dim")
    sub.add_argument("--frames", type=int)
    sub.add_argument("--spatial", type=int)
    sub.add_argument("--base-channels", type=int, dest="base_channels")
    sub.add_argument("--scale", type=float)
    sub.add_argument("--log", help="metrics JSONL path (default stdout)")
    sub.add_argument("--checkpoint-dir", dest="checkpoint_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinyvidgan",
        description="Generative video pipeline: ingest, train, evaluate.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="stabilize frame dirs into clips")
    _add_workdir(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clip-len", type=int, default=32, dest="clip_len")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--tags", help="comma-separated tag filter")
    p.add_argument("--no-stabilize", action="store_true", dest="no_stabilize")
    p.set_defaults(func=cmd_ingest)

    p = subs.add_parser("train-gan", help="adversarial training")
    p.add_argument("--arch", choices=("one-stream", "two-stream"),
                   default="two-stream")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_gan)

    p = subs.add_parser("train-future", help="first-frame-conditioned training")
    p.add_argument("--arch", choices=("one-stream", "two-stream"),
                   default="two-stream")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_future)

    p = subs.add_parser("train-baseline", help="autoencoder + mixture baseline")
    _add_train_flags(p)
    p.add_argument("--gmm-k", type=int, default=8, dest="gmm_k")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.set_defaults(func=cmd_train_baseline)

    p = subs.add_parser("generate", help="sample clips from a checkpoint")
    _add_workdir(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = subs.add_parser("predict-future", help="animate a clip's first frame")
    _add_workdir(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="source clip file")
    p.add_argument("--out", required=True, help="output clip path")
    p.set_defaults(func=cmd_predict_future)

    p = subs.add_parser("finetune", help="train a classifier from a critic")
    _add_workdir(p)
    p.add_argument("--data", required=True,
                   help="root with train/<class> and test/<class> clip dirs")
    p.add_argument("--pretrained", help="critic checkpoint (omit: random init)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--out", help="save classifier checkpoint here")
    p.set_defaults(func=cmd_finetune)

    p = subs.add_parser("sweep", help="accuracy vs labeled-data fraction")
    _add_workdir(p)
    p.add_argument("--data", required=True)
    p.add_argument("--pretrained", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--fractions", default="0.125,0.25,0.5,1.0")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("visualize-units", help="what a hidden unit responds to")
    _add_workdir(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--unit", type=int, required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize_units)

    p = subs.add_parser("export-gif", help="render clips as looping GIFs")
    _add_workdir(p)
    p.add_argument("--input", required=True, help="clip file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=int, default=25)
    p.set_defaults(func=cmd_export_gif)

    p = subs.add_parser("serve-eval", help="run the preference study server")
    _add_workdir(p)
    p.add_argument("--experiment", required=True, help="experiment JSON")
    p.add_argument("--log-path", required=True, dest="log_path")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--media-dir", dest="media_dir")
    p.add_argument("--ui-dir", dest="ui_dir")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve_eval)

    p = subs.add_parser("aggregate", help="preference table from a choice log")
    _add_workdir(p)
    p.add_argument("--log-path", required=True, dest="log_path")
    p.add_argument("--exclude", help="comma-separated rater ids to drop")
    p.set_defaults(func=cmd_aggregate)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
