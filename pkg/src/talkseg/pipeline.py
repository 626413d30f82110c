"""End-to-end orchestration: corpus → sync expert → TSG → SGI → inference → evaluation.

Each training stage writes a checkpoint stamped with the config hash; a rerun
with the same config loads it instead of retraining.
"""

import hashlib
import logging
from pathlib import Path
import time

import numpy as np

from . import io as tio
from . import metrics
from .config import RunConfig
from .exceptions import CheckpointMismatchError, InvalidInputError, StageError, TalkSegError
from .masks import apply_edit
from .sgi import SegmentationGuidedInjector, swap_background, swap_region_codes
from .sync import SyncExpert
from .synthetic import generate_corpus, make_clip_specs
from .tsg import TalkingSegmentationGenerator

logger = logging.getLogger(__name__)

SHIFT_FRAMES = 10
DISENTANGLE_FRAMES = 50


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def corpus_specs(config):
    seed, res = config["seed"], config["resolution"]
    n = config["corpus.identities"]
    return (make_clip_specs(n, config["corpus.frames"], seed, res, "train")
            + make_clip_specs(n, config["corpus.test_frames"], seed, res, "test", tag="t"))


def prepare_corpus(config, out_dir, workers=1):
    return generate_corpus(corpus_specs(config), out_dir, seed=config["seed"], workers=workers)


def make_sync_expert(config):
    s = config.section("syncnet")
    return SyncExpert(config["num_classes"], config["resolution"], s["width"], s["steps"],
                      s["batch_size"], s["lr"], s["eval_every"], s["eval_samples"], config["seed"])


def make_tsg(config):
    t = config.section("tsg")
    return TalkingSegmentationGenerator(
        config["num_classes"], config["resolution"], t["depth"], t["base_width"], t["d_local"],
        t["d_ctx"], t["provider"], t["loss"], t["phase1_steps"], t["phase2_steps"],
        t["batch_windows"], t["lr"], t["beta1"], t["beta2"], t["lambda_sync"], t["use_syncnet"],
        t["autoregressive"], config["seed"])


def make_sgi(config):
    g = config.section("sgi")
    return SegmentationGuidedInjector(
        config["num_classes"], config["resolution"], g["style_dim"], g["steps"], g["batch_size"],
        g["lr"], g["beta1"], g["beta2"], g["prior_learning"], g["prior_range"], g["w_pixel"],
        g["w_perceptual"], g["w_id"], g["w_parsing"], g["w_adversarial"], g["r1_gamma"],
        g["r1_every"], g["id_steps"], g["eval_every"], g["lr_schedule"], config["seed"])


def _cached_or_fit(path, cls, config_hash, fit, log):
    """Load ``path`` when it was written under ``config_hash``; otherwise train and save."""
    path = Path(path)
    if path.exists():
        try:
            est = cls.load(path, config_hash)
            if log:
                log({"module": path.stem, "event": "resumed", "checkpoint": str(path)})
            return est
        except CheckpointMismatchError:
            logger.info("stale checkpoint %s, retraining", path)
    est = fit()
    est.save(path, config_hash)
    return est


# -- inference and evaluation ------------------------------------------------
def infer_clip(tsg, sgi, clip, reference_frame=0):
    """Self-driven masks for ``clip`` and frames rendered from its reference frame."""
    masks = tsg.predict(clip, reference_frame)
    codes = sgi.transform(clip.images[reference_frame], clip.labels[reference_frame])
    frames = sgi.generate(masks, np.broadcast_to(codes, (len(masks),) + codes.shape[1:]))
    return masks, frames


def frame_mean(fn, preds, gts, **kw):
    vals = []
    for p, g in zip(preds, gts):
        try:
            vals.append(fn(p, g, **kw))
        except metrics.UndefinedMetricError:
            continue
    return float(np.mean(vals)) if vals else float("nan")


def mask_metrics(clips, pred_masks, expert, penalty=16.0):
    """Mask-level scores over held-out clips, pooled in clip order."""
    p_all = np.concatenate(pred_masks)
    g_all = np.concatenate([c.labels for c in clips])
    return {
        "mouth_miou": metrics.mouth_miou(p_all, g_all),
        "upper_half_agreement": metrics.upper_half_agreement(p_all, g_all),
        "sync_confidence": float(np.mean([metrics.sync_confidence(m, c.mel, expert)
                                          for m, c in zip(pred_masks, clips)])),
        "f_lmd": frame_mean(metrics.landmark_distance, p_all, g_all, scope="face", penalty=penalty),
        "m_lmd": frame_mean(metrics.landmark_distance, p_all, g_all, scope="mouth", penalty=penalty),
    }


def evaluate(clips, pred_masks, pred_frames, expert, sgi=None, penalty=16.0):
    """Every metric of the report for one set of predictions."""
    out = mask_metrics(clips, pred_masks, expert, penalty)
    out["sync_confidence_gt"] = float(np.mean([metrics.sync_confidence(c.labels, c.mel, expert) for c in clips]))
    out["sync_confidence_shifted"] = float(np.mean(
        [metrics.sync_confidence(c.labels[SHIFT_FRAMES:], c.mel, expert) for c in clips]))
    if pred_frames is not None:
        real = np.concatenate([c.images for c in clips])
        fake = np.concatenate(pred_frames)
        out["psnr"] = float(np.mean([metrics.psnr(a, b) for a, b in zip(fake, real)]))
        out["ssim"] = float(np.mean([metrics.ssim(a, b) for a, b in zip(fake, real)]))
        out["lpips"] = float(np.mean([metrics.lpips_distance(fake[i:i + 32], real[i:i + 32])
                                      for i in range(0, len(fake), 32)]))
        out["fid"] = metrics.fid(real, fake)
        out["fvd"] = metrics.fvd(_segments([c.images for c in clips]), _segments(pred_frames))
        temporal = [metrics.temporal_consistency(f, m) for f, m in zip(pred_frames, pred_masks)]
        for key in temporal[0]:
            out[f"temporal_{key}"] = float(np.mean([t[key] for t in temporal]))
    if sgi is not None:
        out["sgi_recon_psnr"] = sgi.score(clips)
    return out


def _segments(videos, length=16):
    return [v[i:i + length] for v in videos for i in range(0, len(v) - length + 1, length)]


def disentanglement(sgi, clips, frames=DISENTANGLE_FRAMES):
    """Per-region mean cosine similarity of codes within vs. across identities.

    Codes are flattened per region; the within-identity mean is over frame
    pairs of one clip, the across-identity mean over pairs from different clips.
    """
    codes = [sgi.transform(c.images[:frames], c.labels[:frames]) for c in clips]
    num_regions = codes[0].shape[1]
    intra, inter = [], []
    for j in range(num_regions):
        vecs = [c[:, j].reshape(len(c), -1) for c in codes]
        vecs = [v / np.linalg.norm(v, axis=1, keepdims=True).clip(1e-12) for v in vecs]
        same = [(v @ v.T)[np.triu_indices(len(v), 1)].mean() for v in vecs]
        cross = [(vecs[a] @ vecs[b].T).mean() for a in range(len(vecs)) for b in range(a + 1, len(vecs))]
        intra.append(float(np.mean(same)))
        inter.append(float(np.mean(cross)))
    wins = int(sum(a > b for a, b in zip(intra, inter)))
    return {"intra": intra, "inter": inter, "regions_intra_gt_inter": wins}


# -- pipeline -------------------------------------------------------------
def _stage(name, config_hash, fn, timings):
    start = time.perf_counter()
    try:
        return fn()
    except TalkSegError as exc:
        raise StageError(name, config_hash, exc) from exc
    except (OSError, RuntimeError, ValueError) as exc:
        raise StageError(name, config_hash, exc) from exc
    finally:
        timings[name] = round(time.perf_counter() - start, 3)


def run_pipeline(config, corpus_dir, work_dir, ablations=True, log=None):
    """Run every stage and write ``report.json`` under ``work_dir``; returns the report.

    ``corpus_dir`` is generated first when it holds no manifest. Wall-clock
    timings are kept under ``timings``, apart from the deterministic fields.
    """
    config = config if isinstance(config, RunConfig) else RunConfig(config)
    corpus_dir, work_dir = Path(corpus_dir), Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    h = config.digest()
    (work_dir / "config.txt").write_text(config.to_text())
    timings = {}
    log_path = work_dir / "train_log.jsonl"

    def log_record(record):
        tio.append_jsonl(log_path, record)
        if log:
            log(record)

    if not (corpus_dir / "manifest.json").exists():
        _stage("prepare-data", h, lambda: prepare_corpus(config, corpus_dir), timings)
    manifest = tio.read_json(corpus_dir / "manifest.json")
    train = _stage("load-corpus", h, lambda: tio.load_corpus(corpus_dir, "train"), timings)
    test = tio.load_corpus(corpus_dir, "test")
    if not train or not test:
        raise StageError("load-corpus", h, InvalidInputError("corpus needs train and test clips"))

    expert = _stage("train-syncnet", h, lambda: _cached_or_fit(
        work_dir / "syncnet.ckpt", SyncExpert, h,
        lambda: make_sync_expert(config).fit(train, test, log_record), log_record), timings)
    tsg = _stage("train-tsg", h, lambda: _cached_or_fit(
        work_dir / "tsg.ckpt", TalkingSegmentationGenerator, h,
        lambda: make_tsg(config).fit(train, expert, log_record), log_record), timings)
    sgi = _stage("train-sgi", h, lambda: _cached_or_fit(
        work_dir / "sgi.ckpt", SegmentationGuidedInjector, h,
        lambda: make_sgi(config).fit(train, test, log_record), log_record), timings)

    def infer():
        results = [infer_clip(tsg, sgi, c) for c in test]
        for c, (m, f) in zip(test, results):
            tio.write_masks(work_dir / "infer" / c.name / "masks", m)
            tio.write_frames(work_dir / "infer" / c.name / "frames", f)
        return [r[0] for r in results], [r[1] for r in results]

    pred_masks, pred_frames = _stage("infer", h, infer, timings)
    penalty = config["eval.lmd_penalty"]
    metric_values = _stage("eval", h, lambda: evaluate(test, pred_masks, pred_frames, expert, sgi, penalty),
                           timings)
    metric_values["syncnet_accuracy"] = expert.score(test)
    metric_values["disentanglement"] = _stage("disentanglement", h, lambda: disentanglement(sgi, train), timings)

    checkpoints = {name: file_digest(work_dir / f"{name}.ckpt") for name in ("syncnet", "tsg", "sgi")}
    report = {
        "config_hash": h,
        "corpus": {"seed": manifest["seed"], "manifest_sha256": file_digest(corpus_dir / "manifest.json")},
        "checkpoints": checkpoints,
        "metrics": metric_values,
    }
    if ablations:
        report["ablations"] = _stage("ablations", h, lambda: run_ablations(
            config, train, test, expert, work_dir, metric_values, log_record), timings)
    report["timings"] = timings
    tio.write_json(work_dir / "report.json", report)
    return report


ABLATIONS = {
    "no_syncnet": {"tsg.use_syncnet": False},
    "l1_labels": {"tsg.loss": "l1"},
}


def _relative(value, reference):
    """``value / reference - 1``; NaN when the reference is zero."""
    return value / reference - 1.0 if reference else float("nan")


def run_ablations(config, train, test, expert, work_dir, baseline, log=None):
    """Retrain TSG per ablation and compare its mask metrics with the baseline."""
    out = {}
    for name, overrides in ABLATIONS.items():
        cfg = config.replace(**overrides)
        ch = cfg.digest()
        tsg = _cached_or_fit(work_dir / f"tsg_{name}.ckpt", TalkingSegmentationGenerator, ch,
                             lambda cfg=cfg: make_tsg(cfg).fit(train, expert, log), log)
        scores = mask_metrics(test, [tsg.predict(c) for c in test], expert, config["eval.lmd_penalty"])
        scores["config_hash"] = ch
        scores["checkpoint"] = file_digest(work_dir / f"tsg_{name}.ckpt")
        out[name] = scores
    out["sync_gain_over_no_syncnet"] = _relative(baseline["sync_confidence"], out["no_syncnet"]["sync_confidence"])
    out["miou_drop_l1_labels"] = -_relative(out["l1_labels"]["mouth_miou"], baseline["mouth_miou"])
    return out


def deterministic_view(report):
    """The report without wall-clock fields, for run-to-run comparison."""
    return {k: v for k, v in report.items() if k != "timings"}


# -- editing --------------------------------------------------------------
def edit_session(tsg, sgi, clip, specs, background=None, reference_frame=0, references=None):
    """Generate ``clip`` with mask edits, region code swaps and an optional background.

    ``references`` maps a swap payload to an ``(image, mask)`` pair. All specs
    are checked and resolved before any frame is produced.
    """
    num_classes = sgi.num_classes
    resolved = []
    for spec in specs:
        if not 0 <= spec.region_id < num_classes:
            raise InvalidInputError(f"edit targets unknown region {spec.region_id}")
        ref_codes = None
        if spec.kind in ("region_texture_swap", "background_swap") and spec.payload not in (None, "-"):
            if references is None or spec.payload not in references:
                raise InvalidInputError(f"no reference frame for payload {spec.payload!r}")
            image, mask = references[spec.payload]
            ref_codes = sgi.transform(image, mask)[0]
        resolved.append((spec, ref_codes))
    if background is not None:
        background = np.asarray(background, dtype=np.float32)
        if background.shape != (sgi.resolution, sgi.resolution, 3):
            raise InvalidInputError(f"background must be {sgi.resolution}x{sgi.resolution}x3")

    masks = tsg.predict(clip, reference_frame)
    base = sgi.transform(clip.images[reference_frame], clip.labels[reference_frame])[0]
    frame_masks, frame_codes = [], []
    for t, mask in enumerate(masks):
        codes = base
        for spec, ref_codes in resolved:
            if not spec.active(t):
                continue
            if spec.kind == "blink":
                mask = apply_edit(mask, spec, num_classes)
            elif ref_codes is not None:
                codes = swap_region_codes(codes, ref_codes, spec.region_id)
        frame_masks.append(mask)
        frame_codes.append(codes)
    frame_masks = np.stack(frame_masks)
    frames = sgi.generate(frame_masks, np.stack(frame_codes))
    if background is not None:
        frames = np.stack([swap_background(f, m, background) for f, m in zip(frames, frame_masks)])
    return frame_masks, frames

