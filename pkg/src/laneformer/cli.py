"""Command-line entry point: ``laneformer <subcommand> ...``."""
import argparse
import json
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, fields

import numpy as np

from . import __version__
from . import model as lm
from . import selfcheck, training
from .attention import normalize_for_heatmap
from .errors import LaneformerError
from .lanes import emit_culane_lines, parse_culane_lines
from .metrics import EvalReport, aggregate, match_frame, scaled_line_width
from .synthetic import SceneSpec, gen_dataset, load_spec, write_pgm

MANIFEST_NAME = "run_manifest.json"
SECTIONS = {"model": lm.ModelConfig, "train": training.TrainConfig, "data": SceneSpec}


class CliError(LaneformerError):
    pass


# ------------------------------------------------------------------- configs


def parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except ValueError:
        pass
    if "," in text:
        return [parse_value(part) for part in text.split(",")]
    return text


def parse_config_text(text, source="config"):
    """``key = value`` lines (``#`` starts a comment) -> {key: value}."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise CliError(f"{source}:{lineno}: empty key")
        out[key] = parse_value(value)
    return out


def route_config(flat):
    """Send each key to the model, train or data section; ``section.key`` forces the section."""
    out = {name: {} for name in SECTIONS}
    names = {name: {f.name for f in fields(cls)} - {"seed"} for name, cls in SECTIONS.items()}
    for key, value in flat.items():
        if "." in key:
            section, field_name = key.split(".", 1)
            if section not in SECTIONS or field_name not in names[section]:
                raise CliError(f"unknown config key {key!r}")
            out[section][field_name] = value
            continue
        hits = [s for s in SECTIONS if key in names[s]]
        if not hits:
            raise CliError(f"unknown config key {key!r}" + (" (use --seed)" if key == "seed" else ""))
        for section in hits:
            out[section][key] = value
    return out


def resolve_seed(flag):
    if flag is not None:
        return flag
    env = os.environ.get("LANEFORMER_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise CliError(f"LANEFORMER_SEED must be an integer, got {env!r}") from None


def load_config(args):
    flat = {}
    if args.config:
        if os.path.exists(args.config):
            with open(args.config) as fh:
                flat.update(parse_config_text(fh.read(), args.config))
        elif args.config in selfcheck.PRESETS:
            flat.update({f"model.{k}": v for k, v in selfcheck.PRESETS[args.config].items()})
        else:
            raise CliError(f"config file not found: {args.config}")
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        flat[key.strip()] = parse_value(value)
    for key in ("epochs", "batch_size"):
        if getattr(args, key, None) is not None:
            flat[f"train.{key}"] = getattr(args, key)
    sections = route_config(flat)
    seed = resolve_seed(args.seed)
    try:
        model_cfg = lm.ModelConfig(**sections["model"])
        train_cfg = training.TrainConfig(**sections["train"], seed=seed)
        data_spec = SceneSpec(**sections["data"], seed=seed)
    except TypeError as exc:
        raise CliError(f"bad config: {exc}") from None
    return model_cfg, train_cfg, data_spec, seed


# ------------------------------------------------------------------- outputs


@contextmanager
def staged_output(out_dir):
    """Yield a scratch directory; on success its contents move into ``out_dir``, on failure it is removed."""
    if out_dir is None:
        yield None
        return
    parent = os.path.dirname(os.path.abspath(out_dir))
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".laneformer-partial-", dir=parent)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    os.makedirs(out_dir, exist_ok=True)
    for name in sorted(os.listdir(tmp)):
        dst = os.path.join(out_dir, name)
        if os.path.isdir(dst) and not os.path.islink(dst):
            shutil.rmtree(dst)
        os.replace(os.path.join(tmp, name), dst)
    os.rmdir(tmp)


def write_manifest(stage, args, argv, configs, seed):
    artifacts = []
    for root, _, files in os.walk(stage):
        for name in files:
            artifacts.append(os.path.relpath(os.path.join(root, name), stage))
    record = {"subcommand": args.command, "argv": list(argv), "seed": seed, "version": __version__,
              "config": configs, "artifacts": sorted(artifacts)}
    with open(os.path.join(stage, MANIFEST_NAME), "w") as fh:
        fh.write(json.dumps(record, sort_keys=True, indent=1) + "\n")


def _configs(model_cfg=None, train_cfg=None, data_spec=None):
    out = {}
    if model_cfg is not None:
        out["model"] = model_cfg.to_dict()
    if train_cfg is not None:
        out["train"] = train_cfg.to_dict()
    if data_spec is not None:
        out["data"] = asdict(data_spec)
    return json.loads(json.dumps(out))


# --------------------------------------------------------------- subcommands


def cmd_gen_data(args, argv):
    _, _, spec, seed = load_config(args)
    if args.n < 1:
        raise CliError("--n must be >= 1")
    with staged_output(args.out) as stage:
        gen_dataset(spec, args.n, stage, jobs=args.jobs)
        write_manifest(stage, args, argv, _configs(data_spec=spec), seed)
    print(f"wrote {args.n} scenes to {args.out}")
    return 0


def _require(path, what):
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")


def _model_config_for_data(model_cfg, data_dir):
    spec = load_spec(data_dir)
    if tuple(spec.canvas) != tuple(model_cfg.image_size):
        model_cfg = lm.ModelConfig.from_dict({**model_cfg.to_dict(), "image_size": spec.canvas})
    return model_cfg


def cmd_train(args, argv):
    model_cfg, train_cfg, _, seed = load_config(args)
    _require(args.data, "dataset")
    model_cfg = _model_config_for_data(model_cfg, args.data)
    train_set = training.load_dataset(args.data, "train")
    val_set = training.load_dataset(args.data, "val")
    with staged_output(args.out) as stage:
        with open(os.path.join(stage, "metrics.jsonl"), "w") as log:
            def progress(rec):
                if rec["kind"] == "epoch" and not args.quiet:
                    print(f"epoch {rec['epoch']}: val F1 {rec['val_f1']:.4f}", flush=True)

            try:
                training.train(model_cfg, train_cfg, train_set, val_set, out_dir=stage, log=log, progress=progress)
            except training.TrainingDiverged as exc:
                # the stage is discarded; keep the diagnostic dump next to where the run would have gone
                if exc.snapshot:
                    os.makedirs(args.out, exist_ok=True)
                    kept = os.path.join(args.out, "diverged.ckpt")
                    shutil.move(exc.snapshot, kept)
                    raise training.TrainingDiverged(f"{str(exc).split('; snapshot')[0]}; snapshot kept at {kept}",
                                                    kept) from exc
                raise
        write_manifest(stage, args, argv, _configs(model_cfg, train_cfg), seed)
    print(f"checkpoint written to {os.path.join(args.out, 'model.ckpt')}")
    return 0


def _load_model(path):
    _require(path, "checkpoint")
    params, cfg, _ = lm.load_checkpoint(path)
    return params, cfg


def _frame_report(pair):
    preds, sample, image_size, line_width = pair
    return sample.category, match_frame(preds, sample.lanes, image_size=image_size, line_width=line_width)


def evaluate_frames(preds, samples, image_size, jobs=1):
    """Per-category report; frames can be matched in a worker pool and counts merged."""
    line_width = scaled_line_width(image_size)
    work = [(p, s, image_size, line_width) for p, s in zip(preds, samples)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_frame_report, work, chunksize=8))
    else:
        results = [_frame_report(w) for w in work]
    per_cat = {}
    for cat, (tp, fp, fn) in results:
        per_cat.setdefault(cat, EvalReport()).add(tp, fp, fn)
    return aggregate(per_cat)


def _split(args):
    return None if args.split == "all" else args.split


def cmd_eval(args, argv):
    _require(args.data, "dataset")
    samples = training.load_dataset(args.data, _split(args))
    spec = load_spec(args.data)
    if (args.checkpoint is None) == (args.predictions is None):
        raise CliError("eval needs exactly one of --checkpoint or --predictions")
    configs = {}
    if args.checkpoint:
        params, cfg = _load_model(args.checkpoint)
        preds = training.predict(params, cfg, samples, rng_seed=resolve_seed(args.seed))
        configs = _configs(cfg)
    else:
        _require(args.predictions, "predictions directory")
        preds = []
        for s in samples:
            path = os.path.join(args.predictions, f"{s.frame}.lines.txt")
            _require(path, "prediction file")
            with open(path) as fh:
                preds.append(parse_culane_lines(fh.read(), spec.canvas))
    report = evaluate_frames(preds, samples, spec.canvas, args.jobs)
    table = report.table()
    sys.stdout.write(table)
    with staged_output(args.out) as stage:
        if stage:
            with open(os.path.join(stage, "report.jsonl"), "w") as fh:
                fh.write(report.to_jsonl())
            with open(os.path.join(stage, "report.txt"), "w") as fh:
                fh.write(table)
            write_manifest(stage, args, argv, configs, resolve_seed(args.seed))
    return 0


def cmd_infer(args, argv):
    _require(args.data, "dataset")
    params, cfg = _load_model(args.checkpoint)
    samples = training.load_dataset(args.data, _split(args))
    spec = load_spec(args.data)
    seed = resolve_seed(args.seed)
    preds = training.predict(params, cfg, samples, rng_seed=seed)
    with staged_output(args.out) as stage:
        for s, lanes in zip(samples, preds):
            with open(os.path.join(stage, f"{s.frame}.lines.txt"), "w") as fh:
                fh.write(emit_culane_lines(lanes, spec.canvas))
        write_manifest(stage, args, argv, _configs(cfg), seed)
    print(f"wrote predictions for {len(samples)} frames to {args.out}")
    return 0


def _attention_mats(name, weights):
    """Split a retained (1, [heads,] T, S) weight array into named 2-D matrices."""
    w = np.asarray(weights)[0]
    safe = name.replace(".", "_")
    if w.ndim == 2:
        return [(safe, w)]
    return [(f"{safe}_h{k}", w[k]) for k in range(w.shape[0])]


def cmd_dump_attention(args, argv):
    _require(args.data, "dataset")
    params, cfg = _load_model(args.checkpoint)
    samples = training.load_dataset(args.data, None)
    if args.frame is None:
        sample = samples[0]
    else:
        match = [s for s in samples if s.frame == args.frame]
        if not match:
            raise CliError(f"frame {args.frame!r} is not in {args.data}")
        sample = match[0]
    seed = resolve_seed(args.seed)
    from .detections import select_and_pad
    from .numerics import no_grad

    boxes = select_and_pad(sample.boxes, cfg.n_boxes, cfg.box_score_threshold, seed)
    with no_grad():
        out = lm.forward(params, cfg, sample.image[None], [boxes] if cfg.detection_attention else None,
                         keep_attention=True)
    with staged_output(args.out) as stage:
        for name in sorted(out.attention):
            for fname, mat in _attention_mats(name, out.attention[name]):
                np.savetxt(os.path.join(stage, f"{fname}.csv"), mat, delimiter=",", fmt="%.17g")
                write_pgm(os.path.join(stage, f"{fname}.pgm"), normalize_for_heatmap(mat) / 255.0)
        write_manifest(stage, args, argv, _configs(cfg), seed)
    print(f"wrote {len(out.attention)} attention maps for frame {sample.frame} to {args.out}")
    return 0


def cmd_gradcheck(args, argv):
    if args.config is None:
        args.config = "toy"
    model_cfg, _, _, seed = load_config(args)
    results = selfcheck.gradient_suite(model_cfg, seed=seed, max_coords=args.max_coords)
    worst = 0.0
    for r in results:
        worst = max(worst, r.max_rel_error)
        print(f"{'PASS' if r.passed else 'FAIL'} {r.block:<24} params={r.n_params:<6} max_rel_error={r.max_rel_error:.3e}")
    print(f"max relative error: {worst:.3e}")
    ok = all(r.passed for r in results)
    with staged_output(args.out) as stage:
        if stage:
            with open(os.path.join(stage, "gradcheck.jsonl"), "w") as fh:
                for r in results:
                    fh.write(json.dumps({"block": r.block, "max_rel_error": r.max_rel_error,
                                         "n_params": r.n_params, "passed": r.passed}, sort_keys=True) + "\n")
            write_manifest(stage, args, argv, _configs(model_cfg), seed)
    return 0 if ok else 1


def cmd_ablate(args, argv):
    model_cfg, train_cfg, _, seed = load_config(args)
    _require(args.data, "dataset")
    model_cfg = _model_config_for_data(model_cfg, args.data)
    train_set = training.load_dataset(args.data, "train")
    val_set = training.load_dataset(args.data, "val")
    with staged_output(args.out) as stage:
        with open(os.path.join(stage, "metrics.jsonl"), "w") as log:
            results = training.ablation_suite(model_cfg, train_cfg, train_set, val_set, log=log)
        table = training.ablation_table(results)
        with open(os.path.join(stage, "ablation.txt"), "w") as fh:
            fh.write(table)
        with open(os.path.join(stage, "ablation.jsonl"), "w") as fh:
            for r in results:
                fh.write(json.dumps({"name": r.name, "switches": r.switches, "n_params": r.n_params,
                                     **r.report.summary()}, sort_keys=True) + "\n")
        write_manifest(stage, args, argv, _configs(model_cfg, train_cfg), seed)
    sys.stdout.write(table)
    return 0


# -------------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (fallback: $LANEFORMER_SEED, then 0)")
    common.add_argument("--config", help="key=value config file, or a preset name (toy)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for gen-data and eval")

    parser = argparse.ArgumentParser(prog="laneformer", description="Desk-scale lane detection transformer.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name, func, helptext in (("train", cmd_train, "train a model"),
                                 ("ablate", cmd_ablate, "train and compare the ablation configurations")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--quiet", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint or prediction files")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "all"))
    p.add_argument("--checkpoint")
    p.add_argument("--predictions")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="write CULane-format predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "all"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("dump-attention", parents=[common], help="write attention maps as CSV and PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--frame")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every block")
    p.add_argument("--max-coords", dest="max_coords", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args, argv)
    except (LaneformerError, ValueError, OSError) as exc:
        print(f"laneformer {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
