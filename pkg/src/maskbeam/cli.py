"""Command-line interface: enhance, train, eval, simulate, make-reference, describe."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .audio import AudioClip, read_wav, write_wav
from .config import describe, load_config
from .metrics import EvalReport, UtteranceScore, segmental_snr, si_sdr
from .pipeline import enhance, spatial_mask
from .refiner import (
    TrainConfig,
    TrainingBatch,
    ideal_amplitude_mask,
    init_params,
    logit_transform,
    train,
)
from .refiner.serialize import (
    ModelBundle,
    load_checkpoint,
    load_model,
    save_checkpoint,
    save_model,
)
from .reference import build_reference
from .simulate import SourceSpec, mix, speech_like, white_noise
from .stft import analyze, feature_stats, magnitude_db, to_features


def _add_config_args(parser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _config_from(args):
    return load_config(args.config, args.overrides)


# ---------------------------------------------------------------------------
# enhance
# ---------------------------------------------------------------------------


def cmd_enhance(args):
    cfg = _config_from(args)
    bundle = None
    if cfg.mode in ("lstm", "messl+lstm"):
        if not cfg.model_path:
            raise SystemExit(f"mode {cfg.mode} requires model_path (use --set model_path=...)")
        if not Path(cfg.model_path).exists():
            raise SystemExit(f"model file not found: {cfg.model_path}")
        bundle = load_model(cfg.model_path)
    inputs = [Path(p) for p in args.inputs]
    out = Path(args.out)
    if len(inputs) > 1 and not out.suffix == "":
        raise SystemExit("with multiple inputs, --out must be a directory")
    for path in inputs:
        clip = read_wav(path)
        enhanced, log = enhance(clip, cfg, bundle)
        target = out / f"{path.stem}.wav" if out.suffix == "" else out
        write_wav(target, enhanced)
        log_path = Path(str(target) + ".log.txt")
        log_path.write_text(log.render(), encoding="utf-8")
        print(f"enhanced {path} -> {target}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def read_manifest(path):
    """Tab-separated records: mixture path, optional clean path, optional group."""
    records = []
    base = Path(path).parent
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if not 1 <= len(parts) <= 3:
            raise ValueError(f"{path}:{lineno}: expected 1-3 tab-separated fields")
        mixture = (base / parts[0]).resolve() if not Path(parts[0]).is_absolute() else Path(parts[0])
        clean = None
        if len(parts) >= 2 and parts[1]:
            clean = (base / parts[1]).resolve() if not Path(parts[1]).is_absolute() else Path(parts[1])
        group = parts[2] if len(parts) == 3 and parts[2] else "default"
        for candidate in filter(None, (mixture, clean)):
            if not candidate.exists():
                raise FileNotFoundError(f"{path}:{lineno}: no such file {candidate}")
        records.append({"mixture": mixture, "clean": clean, "group": group})
    return records


def _training_samples(records, cfg):
    """Per-channel TrainingBatch list plus the raw dB planes for stats."""
    samples, db_planes = [], []
    for rec in records:
        if rec["clean"] is None:
            raise ValueError(f"training manifest needs clean paths, missing for {rec['mixture']}")
        noisy = read_wav(rec["mixture"])
        clean = read_wav(rec["clean"])
        spec_noisy = analyze(noisy, cfg.stft())
        spec_clean = analyze(clean, cfg.stft())
        m_spatial = spatial_mask(noisy, spec_noisy, cfg)
        logits = logit_transform(m_spatial)
        for ch in range(spec_noisy.channel_count):
            target = ideal_amplitude_mask(spec_clean.bins[ch], spec_noisy.bins[ch])
            db = magnitude_db(spec_noisy, ch)
            db_planes.append(db)
            samples.append({"db": db, "logits": logits, "target": target, "spec": spec_noisy, "ch": ch})
    return samples, db_planes


def _finalize_samples(samples, stats):
    out = []
    for s in samples:
        feats = to_features(s["spec"], s["ch"], stats)
        out.append(TrainingBatch(features=feats.values, logit_mask=s["logits"], target=s["target"]))
    return out


def cmd_train(args):
    cfg = _config_from(args)
    train_records = read_manifest(args.manifest)
    if args.val_manifest:
        val_records = read_manifest(args.val_manifest)
    else:
        n_val = max(1, int(len(train_records) * args.val_fraction))
        if len(train_records) <= n_val:
            raise SystemExit("not enough records to split a validation set")
        val_records = train_records[-n_val:]
        train_records = train_records[:-n_val]

    train_raw, db_planes = _training_samples(train_records, cfg)
    val_raw, _ = _training_samples(val_records, cfg)
    stats = feature_stats(db_planes) if cfg.feature_norm == "corpus" else None
    train_set = _finalize_samples(train_raw, stats)
    val_set = _finalize_samples(val_raw, stats)

    freq_count = train_set[0].features.shape[0]
    initial_state = initial_history = None
    if args.resume:
        bundle, initial_state, initial_history = load_checkpoint(args.resume)
        params = bundle.params
        stats = bundle.stats
        print(f"resuming from epoch {initial_history[-1]['epoch'] + 1}")
    else:
        params = init_params(
            freq_count,
            hidden=cfg.refiner_units,
            n_layers=cfg.refiner_layers,
            dropout_rate=cfg.dropout_rate,
            l2_coefficient=cfg.l2_coefficient,
            rng=np.random.default_rng(cfg.seed),
        )

    tc = TrainConfig(
        epochs=cfg.epochs, learning_rate=cfg.learning_rate, patience=cfg.patience,
        batch_size=cfg.batch_size, seed=cfg.seed,
    )
    result = train(train_set, val_set, params, tc,
                   initial_state=initial_state, initial_history=initial_history)

    bundle = ModelBundle(params=result.params, stats=stats, feature_norm=cfg.feature_norm)
    save_model(args.out, bundle)
    save_checkpoint(args.out, bundle, result.optimizer_state, result.history)
    history_path = Path(str(args.out) + ".history.csv")
    with open(history_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_bce"])
        writer.writeheader()
        writer.writerows(result.history)
    print(
        f"trained {len(result.history)} epochs, best val BCE "
        f"{result.best_val_bce:.4f} at epoch {result.best_epoch}; model -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _stems(directory):
    return {p.stem: p for p in sorted(Path(directory).glob("*.wav"))}


def cmd_eval(args):
    enhanced = _stems(args.enhanced)
    reference = _stems(args.reference)
    if not set(enhanced) & set(reference):
        raise SystemExit("no common file stems between enhanced and reference directories")
    unpaired = sorted(set(enhanced) ^ set(reference))
    if unpaired:
        raise SystemExit(f"unpaired files: {', '.join(unpaired)}")

    groups = {}
    if args.groups:
        for line in Path(args.groups).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            stem, _, group = line.partition("\t")
            groups[stem.strip()] = group.strip() or "default"

    report = EvalReport()
    for stem in sorted(enhanced):
        est = read_wav(enhanced[stem])
        ref = read_wav(reference[stem])
        n = min(est.num_samples, ref.num_samples)
        est_sig = est.samples[0, :n]
        ref_sig = ref.samples[0, :n]
        report.add(
            UtteranceScore(
                stem=stem,
                group=groups.get(stem, "default"),
                si_sdr_db=si_sdr(est_sig, ref_sig),
                seg_snr_db=segmental_snr(est_sig, ref_sig),
            )
        )
    table = report.to_table()
    print(table, end="")
    if args.out:
        Path(args.out + ".txt").write_text(table, encoding="utf-8")
        Path(args.out + ".csv").write_text(report.to_csv(), encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    cfg = _config_from(args)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = args.channels
    n = int(args.duration * args.rate)
    manifest_lines, truth_lines = [], []
    for i in range(args.count):
        specs = []
        for s in range(args.sources):
            if s == 0:
                # the talker: near-zero TDOA across the array
                delays = 2.0 + rng.uniform(-0.15, 0.15, m)
                gain = 1.0
            else:
                # interferers alternate a +/- TDOA pattern so every adjacent
                # pair sees the full delay, keeping the spread narrowband
                tau = rng.uniform(3.0, args.delay_spread) * rng.choice([-1.0, 1.0])
                delays = 8.0 + abs(tau) + tau * (np.arange(m) % 2) + rng.uniform(-0.1, 0.1, m)
                gain = args.intf_gain
            specs.append(SourceSpec(speech_like(rng, n, args.rate), delays, np.full(m, gain)))
        noise = white_noise(rng, n, args.rate, channels=m)
        snr = rng.uniform(args.snr_min, args.snr_max)
        truth = mix(specs, noise, snr)
        stem = f"mix_{i:03d}"
        write_wav(out / f"{stem}.wav", truth.mixture)
        write_wav(out / f"{stem}.target.wav", truth.source_images[0])
        for k, image in enumerate(truth.source_images[1:], start=1):
            write_wav(out / f"{stem}.interf{k}.wav", image)
        write_wav(out / f"{stem}.noise.wav", truth.noise_image)
        ref_ch = min(cfg.reference_channel, m - 1)
        write_wav(out / f"{stem}.ref.wav", truth.source_images[0].channel(ref_ch))
        manifest_lines.append(f"{stem}.wav\t{stem}.target.wav\t{args.group}")
        truth_lines.append(
            json.dumps(
                {
                    "stem": stem,
                    "snr_db": snr,
                    "delays": [list(s.delays) for s in specs],
                    "gains": [list(s.gains) for s in specs],
                }
            )
        )
    (out / "manifest.tsv").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    (out / "truth.txt").write_text("\n".join(truth_lines) + "\n", encoding="utf-8")
    print(f"wrote {args.count} mixtures to {out}")
    return 0


# ---------------------------------------------------------------------------
# make-reference
# ---------------------------------------------------------------------------


def cmd_make_reference(args):
    cfg = _config_from(args)
    array = read_wav(args.array)
    close = read_wav(args.close)
    stft_cfg = cfg.stft()
    array_spec = analyze(array, stft_cfg)
    close_spec = analyze(close, stft_cfg)
    ref_ch = min(cfg.reference_channel, array.channel_count - 1)
    clip, _ = build_reference(array_spec, close_spec, stft_cfg, ref_channel=ref_ch)
    write_wav(args.out, clip)
    print(f"reference -> {args.out}")
    return 0


def cmd_describe(args):
    print(describe(_config_from(args)), end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="maskbeam",
                                     description="multi-channel mask-driven speech enhancement")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance multichannel WAV files")
    _add_config_args(p)
    p.add_argument("inputs", nargs="+", help="input WAV file(s)")
    p.add_argument("--out", "-o", required=True, help="output WAV file or directory")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train the mask cleaner")
    _add_config_args(p)
    p.add_argument("--manifest", required=True, help="tab-separated (noisy, clean, group) records")
    p.add_argument("--val-manifest", help="separate validation manifest")
    p.add_argument("--val-fraction", type=float, default=0.2,
                   help="tail fraction used for validation when no --val-manifest")
    p.add_argument("--resume", help="checkpoint path to continue from")
    p.add_argument("--out", required=True, help="output model path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score enhanced WAVs against references")
    p.add_argument("--enhanced", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--groups", help="tab-separated stem -> group tags")
    p.add_argument("--out", help="report path prefix (.txt and .csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="generate synthetic mixtures with ground truth")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--sources", type=int, default=2)
    p.add_argument("--duration", type=float, default=0.75, help="seconds per mixture")
    p.add_argument("--rate", type=int, default=8000)
    p.add_argument("--snr-min", type=float, default=0.0)
    p.add_argument("--snr-max", type=float, default=10.0)
    p.add_argument("--delay-spread", type=float, default=6.0)
    p.add_argument("--intf-gain", type=float, default=1.0)
    p.add_argument("--group", default="simu")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-reference", help="close-mic-gated MVDR reference")
    _add_config_args(p)
    p.add_argument("--array", required=True, help="multichannel array WAV")
    p.add_argument("--close", required=True, help="close-microphone WAV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_reference)

    p = sub.add_parser("describe", help="print the effective configuration")
    _add_config_args(p)
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
