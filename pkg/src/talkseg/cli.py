"""Command-line entry point: ``talkseg <verb> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 3 training
divergence, 4 I/O failure.
"""

import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import io as tio
from . import metrics
from . import pipeline
from .config import RunConfig
from .exceptions import InvalidInputError, TalkSegError
from .io import CorpusIOError
from .masks import parse_edit_specs
from .sgi import SegmentationGuidedInjector
from .sync import SyncExpert
from .tsg import TalkingSegmentationGenerator

logger = logging.getLogger("talkseg")


def _config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig().apply_env(os.environ)
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidInputError(f"--set expects key=value, got {item!r}")
        cfg[key.strip()] = value.strip()
    return cfg


def _log(record):
    print(json.dumps(record, sort_keys=True), flush=True)


def _clip(path):
    return tio.load_clip(Path(path))


def cmd_prepare_data(args, cfg):
    manifest = pipeline.prepare_corpus(cfg, args.out, workers=args.workers)
    print(f"wrote {len(manifest['clips'])} clips to {args.out}")


def cmd_train_syncnet(args, cfg):
    train, test = tio.load_corpus(args.corpus, "train"), tio.load_corpus(args.corpus, "test")
    est = pipeline.make_sync_expert(cfg).fit(train, test, _log)
    est.save(args.out, cfg.digest())
    print(f"held-out accuracy {est.accuracy_:.4f}")


def cmd_train_tsg(args, cfg):
    train = tio.load_corpus(args.corpus, "train")
    expert = SyncExpert.load(args.expert) if args.expert else None
    est = pipeline.make_tsg(cfg).fit(train, expert, _log)
    est.save(args.out, cfg.digest())


def cmd_train_sgi(args, cfg):
    train, test = tio.load_corpus(args.corpus, "train"), tio.load_corpus(args.corpus, "test")
    est = pipeline.make_sgi(cfg).fit(train, test, _log)
    est.save(args.out, cfg.digest())
    print(f"held-out reconstruction PSNR {est.psnr_:.2f} dB")


def cmd_infer(args, cfg):
    sgi = SegmentationGuidedInjector.load(args.sgi)
    reference = tio.read_image(args.reference)
    if args.masks:
        masks = tio.read_masks(args.masks)
    else:
        if not (args.clip and args.tsg):
            raise InvalidInputError("infer needs --masks, or --clip together with --tsg")
        masks = TalkingSegmentationGenerator.load(args.tsg).predict(_clip(args.clip))
    ref_mask = tio.read_mask(args.reference_mask) if args.reference_mask else masks[0]
    codes = sgi.transform(reference, ref_mask)
    frames = sgi.generate(masks, np.broadcast_to(codes, (len(masks),) + codes.shape[1:]))
    tio.write_frames(Path(args.out) / "frames", frames)
    tio.write_masks(Path(args.out) / "masks", masks)
    print(f"wrote {len(frames)} frames to {args.out}")


def _references(specs):
    """Resolve swap payloads of the form ``<clip_dir>#<frame>`` or ``<image>:<mask>``."""
    refs = {}
    for spec in specs:
        p = spec.payload
        if spec.kind == "blink" or p in (None, "-") or p in refs:
            continue
        if "#" in p:
            clip_dir, _, idx = p.rpartition("#")
            clip = _clip(clip_dir)
            refs[p] = (clip.images[int(idx)], clip.labels[int(idx)])
        elif ":" in p:
            img, _, mask = p.partition(":")
            refs[p] = (tio.read_image(img), tio.read_mask(mask))
        else:
            raise InvalidInputError(f"swap payload {p!r} must be '<clip_dir>#<frame>' or '<image>:<mask>'")
    return refs


def cmd_edit(args, cfg):
    specs = parse_edit_specs(Path(args.spec).read_text())
    refs = _references(specs)
    background = tio.read_image(args.background) if args.background else None
    tsg = TalkingSegmentationGenerator.load(args.tsg)
    sgi = SegmentationGuidedInjector.load(args.sgi)
    masks, frames = pipeline.edit_session(tsg, sgi, _clip(args.clip), specs, background,
                                          args.reference_frame, refs)
    tio.write_frames(Path(args.out) / "frames", frames)
    tio.write_masks(Path(args.out) / "masks", masks)
    print(f"wrote {len(frames)} edited frames to {args.out}")


def cmd_eval(args, cfg):
    pred_dir, gt = Path(args.pred), _clip(args.gt)
    records = []
    pred_masks = tio.read_masks(pred_dir / "masks") if (pred_dir / "masks").is_dir() else None
    if (pred_dir / "frames").is_dir():
        frames = tio.read_frames(pred_dir / "frames")
        n = min(len(frames), gt.num_frames)
        records += [
            {"metric": "psnr", "scope": "frame", "value": float(np.mean([metrics.psnr(a, b) for a, b in zip(frames[:n], gt.images)]))},
            {"metric": "ssim", "scope": "frame", "value": float(np.mean([metrics.ssim(a, b) for a, b in zip(frames[:n], gt.images)]))},
        ]
        stats = metrics.temporal_consistency(frames, pred_masks)
        records += [{"metric": f"temporal_{k}", "scope": "video", "value": v} for k, v in stats.items()]
    if pred_masks is not None:
        n = min(len(pred_masks), gt.num_frames)
        p, g = pred_masks[:n], gt.labels[:n]
        records += [
            {"metric": "mouth_miou", "scope": "mouth", "value": metrics.mouth_miou(p, g)},
            {"metric": "upper_half_agreement", "scope": "face", "value": metrics.upper_half_agreement(p, g)},
            {"metric": "f_lmd", "scope": "face", "value": pipeline.frame_mean(
                metrics.landmark_distance, p, g, scope="face", penalty=cfg["eval.lmd_penalty"])},
            {"metric": "m_lmd", "scope": "mouth", "value": pipeline.frame_mean(
                metrics.landmark_distance, p, g, scope="mouth", penalty=cfg["eval.lmd_penalty"])},
        ]
        if args.expert:
            expert = SyncExpert.load(args.expert)
            records.append({"metric": "sync_confidence", "scope": "mouth",
                            "value": metrics.sync_confidence(p, gt.mel, expert)})
    if not records:
        raise InvalidInputError(f"{pred_dir} has neither frames/ nor masks/")
    Path(args.report).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    print(f"wrote {len(records)} metric records to {args.report}")


def cmd_pipeline(args, cfg):
    if args.no_syncnet:
        cfg = cfg.replace(tsg__use_syncnet=False)
    report = pipeline.run_pipeline(cfg, args.corpus, args.work, ablations=not args.no_ablations, log=_log)
    print(json.dumps(report["metrics"], indent=2, sort_keys=True))


def build_parser():
    parser = argparse.ArgumentParser(prog="talkseg", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value config file (env TALKSEG_<KEY> overrides)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("prepare-data", help="render the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train-syncnet", help="train the lip-sync expert")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_syncnet)

    p = sub.add_parser("train-tsg", help="train the talking segmentation generator")
    p.add_argument("--corpus", required=True)
    p.add_argument("--expert", help="sync expert checkpoint (phase 2)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_tsg)

    p = sub.add_parser("train-sgi", help="train the style encoder and generator")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_sgi)

    p = sub.add_parser("infer", help="render frames from masks and a reference image")
    p.add_argument("--sgi", required=True)
    p.add_argument("--reference", required=True, help="reference RGB image")
    p.add_argument("--reference-mask", help="mask of the reference image (default: first mask)")
    p.add_argument("--masks", help="directory of mask PNGs")
    p.add_argument("--clip", help="clip directory (masks/ + audio.wav) to drive with --tsg")
    p.add_argument("--tsg")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("edit", help="generate a clip with local edits")
    p.add_argument("--spec", required=True, help="edit records: 'kind REGION payload [frames=a-b]'")
    p.add_argument("--clip", required=True)
    p.add_argument("--tsg", required=True)
    p.add_argument("--sgi", required=True)
    p.add_argument("--background", help="background image for compositing")
    p.add_argument("--reference-frame", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="score predictions against a ground-truth clip")
    p.add_argument("--pred", required=True, help="directory with frames/ and/or masks/")
    p.add_argument("--gt", required=True, help="ground-truth clip directory")
    p.add_argument("--expert", help="sync expert checkpoint")
    p.add_argument("--report", required=True, help="JSON-lines output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--corpus", required=True)
    p.add_argument("--work", required=True)
    p.add_argument("--no-syncnet", action="store_true", help="train TSG without the sync loss")
    p.add_argument("--no-ablations", action="store_true")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except TalkSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CorpusIOError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
