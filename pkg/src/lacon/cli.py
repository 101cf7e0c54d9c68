"""Command-line entry point: synth, label, filter, train, sample, eval.

Every stochastic command takes an explicit --seed and all randomness flows
from it, so reruns are bit-identical. A JSON config file can set any
training/sampling option plus anchor-spec overrides; flags win over config
values.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import curation, flowmodel, sampler, signals
from .encoder import ATTRIBUTES, default_anchor_specs, rbf_weights
from .flowmodel import _spec_from_json
from .images import save_png
from .signals import QualityVector, corner_tag_wat_scorer, heuristic_aes_scorer

log = logging.getLogger("lacon")

TRAIN_KEYS = {
    "seed", "batch_size", "steps", "lr", "beta1", "beta2", "adam_eps",
    "p_drop", "hidden", "d", "d_y", "side", "n_classes", "strategy",
}
CONFIG_KEYS = TRAIN_KEYS | {"target_long_side", "workers", "anchor_specs", "sampler_steps", "omega_c"}


def _load_config(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise click.ClickException(
            f"unknown config keys: {sorted(unknown)}; valid keys: {sorted(CONFIG_KEYS)}"
        )
    return cfg


def _specs_from_config(cfg):
    specs = default_anchor_specs()
    for attr, obj in cfg.get("anchor_specs", {}).items():
        if attr not in ATTRIBUTES:
            raise click.ClickException(f"unknown attribute {attr!r} in anchor_specs")
        specs[attr] = _spec_from_json({"attribute": attr, **obj})
    return specs


def _workers(flag_value, cfg):
    if flag_value is not None:
        return flag_value
    if "workers" in cfg:
        return int(cfg["workers"])
    env = os.environ.get("LACON_WORKERS")
    if env:
        return int(env)
    return os.cpu_count() or 1


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("synth")
@click.option("--n", type=int, required=True, help="Number of images.")
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--side", type=int, default=16, show_default=True)
def cmd_synth(n, seed, out_dir, side):
    """Generate a synthetic image corpus (PNGs plus a class-label index)."""
    if n < 1:
        raise click.ClickException("n must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = flowmodel.make_synthetic_corpus(n, seed, side)
    index = {}
    for i, (img, cls) in enumerate(corpus):
        sid = f"img_{i:05d}"
        save_png(img, out / f"{sid}.png")
        index[sid] = cls
    with open(out / "index.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(index, fh, sort_keys=True, indent=0)
    click.echo(f"wrote {n} images to {out}")


@main.command("label")
@click.argument("in_path", type=click.Path(exists=True))
@click.option("--out", "manifest_out", type=click.Path(), default=None,
              help="Manifest JSONL path (directory input); single-file input prints JSON.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--target-long-side", type=int, default=None)
def cmd_label(in_path, manifest_out, config_path, workers, target_long_side):
    """Label a corpus directory (or one PNG) with the five quality signals."""
    cfg = _load_config(config_path)
    tls = target_long_side or int(cfg.get("target_long_side", 512))
    aes = heuristic_aes_scorer()
    wat = corner_tag_wat_scorer()
    p = Path(in_path)
    if p.is_file():
        from .images import ImageError, load_png

        try:
            q = signals.label_sample(load_png(p), aes, wat, tls, sample_id=p.stem)
        except (ImageError, ValueError) as exc:
            raise click.ClickException(str(exc))
        click.echo(json.dumps(
            {"id": p.stem, **{f"s_{k}": getattr(q, k) for k in ATTRIBUTES}}
        ))
        return
    if manifest_out is None:
        raise click.ClickException("--out is required when labeling a directory")
    index = {}
    index_path = p / "index.json"
    if index_path.exists():
        with open(index_path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
    entries = sorted(
        (f.stem, str(f), int(index.get(f.stem, 0))) for f in p.glob("*.png")
    )
    label_cfg = {"target_long_side": tls, "aes_scorer": aes.name, "wat_scorer": wat.name}
    manifest = curation.build_manifest(
        entries, aes, wat, tls,
        workers=_workers(workers, cfg),
        provenance=curation.config_digest(label_cfg),
    )
    curation.save_manifest(manifest, manifest_out)
    with open(f"{manifest_out}.provenance.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"digest": manifest.provenance, "config": label_cfg}, fh, sort_keys=True)
    skipped = len(entries) - len(manifest)
    click.echo(f"labeled {len(manifest)} samples ({skipped} skipped) -> {manifest_out}")


def _thresholds_from(preset, flags):
    if preset is not None:
        if preset not in curation.FILTER_PRESETS:
            raise click.ClickException(
                f"unknown preset {preset!r}; available: {sorted(curation.FILTER_PRESETS)}"
            )
        return curation.FILTER_PRESETS[preset]
    return curation.FilterThresholds(**flags)


@main.command("filter")
@click.argument("manifest_in", type=click.Path(exists=True))
@click.option("--out", "manifest_out", type=click.Path(), required=True)
@click.option("--preset", type=str, default=None, help="Named threshold preset (ratio5..ratio80).")
@click.option("--aes-min", type=float, default=0.0)
@click.option("--wat-max", type=float, default=1.0)
@click.option("--cla-min", type=float, default=0.0)
@click.option("--ent-min", type=float, default=0.0)
@click.option("--luma-min", type=float, default=0.0)
@click.option("--luma-max", type=float, default=1.0)
def cmd_filter(manifest_in, manifest_out, preset, aes_min, wat_max, cla_min, ent_min, luma_min, luma_max):
    """Apply quality thresholds to a manifest."""
    t = _thresholds_from(preset, dict(
        aes_min=aes_min, wat_max=wat_max, cla_min=cla_min,
        ent_min=ent_min, luma_min=luma_min, luma_max=luma_max,
    ))
    log.info("thresholds: %s", asdict(t))
    manifest = curation.load_manifest(manifest_in)
    filtered = curation.apply_filter(manifest, t)
    curation.save_manifest(filtered, manifest_out)
    frac = len(filtered) / len(manifest) if len(manifest) else 0.0
    click.echo(f"retained {len(filtered)}/{len(manifest)} ({frac:.4f})")


@main.command("train")
@click.argument("manifest_in", type=click.Path(exists=True))
@click.option("--out", "ckpt_out", type=click.Path(), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--strategy", type=click.Choice(["gcc", "linear", "binning", "fourier"]), default=None)
@click.option("--side", type=int, default=None)
@click.option("--loss-csv", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def cmd_train(manifest_in, ckpt_out, seed, steps, batch_size, lr, strategy, side, loss_csv, config_path):
    """Train the conditional velocity model on a labeled manifest."""
    cfg_file = _load_config(config_path)
    kwargs = {k: v for k, v in cfg_file.items() if k in TRAIN_KEYS}
    if "hidden" in kwargs:
        kwargs["hidden"] = tuple(kwargs["hidden"])
    for name, val in [("seed", seed), ("steps", steps), ("batch_size", batch_size),
                      ("lr", lr), ("strategy", strategy), ("side", side)]:
        if val is not None:
            kwargs[name] = val
    cfg = flowmodel.TrainConfig(**kwargs)
    manifest = curation.load_manifest(manifest_in)
    if not manifest.records:
        raise click.ClickException("manifest is empty")
    try:
        ckpt, curve = flowmodel.train(manifest, cfg, _specs_from_config(cfg_file))
    except FloatingPointError as exc:
        raise click.ClickException(str(exc))
    flowmodel.save_checkpoint(ckpt, ckpt_out)
    if loss_csv:
        with open(loss_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            w.writerows(curve)
    final = curve[-1][1] if curve else float("nan")
    click.echo(f"trained {cfg.steps} steps (final loss {final:.6f}) -> {ckpt_out}")


def _parse_qv(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 5:
        raise click.ClickException("quality vector needs 5 comma-separated values (aes,wat,cla,ent,luma)")
    return QualityVector.from_array(vals)


@main.command("sample")
@click.argument("ckpt_in", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--mode", type=click.Choice(list(sampler.MODES)), default="LACON-S", show_default=True)
@click.option("--count", type=int, default=16, show_default=True)
@click.option("--steps", type=int, default=50, show_default=True)
@click.option("--omega-c", type=float, default=4.0, show_default=True)
@click.option("--class-label", type=int, default=0, show_default=True)
@click.option("--unconditional", is_flag=True, help="Drop the class condition.")
@click.option("--s-base", type=str, default=None,
              help="Base quality vector 'aes,wat,cla,ent,luma'; default: manifest median or neutral.")
@click.option("--manifest", "manifest_in", type=click.Path(exists=True), default=None,
              help="Manifest whose score medians define s_base.")
@click.option("--omega", "omega_flags", type=(str, float), multiple=True,
              help="Per-attribute guidance scale, e.g. --omega luma 2.0 (LACON-A).")
@click.option("--target", "target_flags", type=(str, float), multiple=True,
              help="Per-attribute target override, e.g. --target luma 0.8.")
def cmd_sample(ckpt_in, out_dir, seed, mode, count, steps, omega_c, class_label,
               unconditional, s_base, manifest_in, omega_flags, target_flags):
    """Sample images from a checkpoint and measure their quality signals."""
    ckpt = flowmodel.load_checkpoint(ckpt_in)
    net, strategy = ckpt.net_and_strategy()
    if s_base is not None:
        base = _parse_qv(s_base)
    elif manifest_in is not None:
        base = curation.median_quality(curation.load_manifest(manifest_in))
    else:
        base = QualityVector(5.0, 0.5, 1500.0, 4.0, 0.5)
    for k, _ in list(omega_flags) + list(target_flags):
        if k not in ATTRIBUTES:
            raise click.ClickException(f"unknown attribute {k!r}; valid: {ATTRIBUTES}")
    if mode != "LACON-A" and target_flags:
        # CFG / LACON-S condition on a single vector, so target overrides
        # fold directly into the base.
        base = base.replace(**dict(target_flags))
    guidance = sampler.GuidanceSpec.from_target_values(
        omega_c, dict(omega_flags), base, dict(target_flags) or None
    )
    cfg = sampler.SamplerConfig(steps=steps, seed=seed, count=count, mode=mode)
    y = None if unconditional else class_label
    batch = sampler.sample(net, strategy, y, cfg, guidance)
    side = net.cfg.side
    measured = sampler.measure_outputs(batch, side, heuristic_aes_scorer(), corner_tag_wat_scorer())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gspec = {
        "omega_c": omega_c,
        "omegas": guidance.omegas,
        "s_base": {k: getattr(base, k) for k in ATTRIBUTES},
        "s_targets": {k: getattr(guidance.s_targets[k], k) for k in ATTRIBUTES},
    }
    with open(out / "samples.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for i, (img, q) in enumerate(zip(sampler.outputs_to_images(batch, side), measured)):
            sid = f"sample_{i:05d}"
            save_png(img, out / f"{sid}.png")
            fh.write(json.dumps({
                "sample_id": sid, "seed": seed, "mode": mode, "guidance": gspec,
                "measured": {f"s_{k}": getattr(q, k) for k in ATTRIBUTES},
            }) + "\n")
    click.echo(f"wrote {count} samples to {out}")


@main.command("eval")
@click.argument("sample_files", type=click.Path(exists=True), nargs=-1, required=True)
@click.option("--out", "csv_out", type=click.Path(), required=True)
@click.option("--hist-prefix", type=click.Path(), default=None,
              help="Write per-run measured-score histogram CSVs with this path prefix.")
@click.option("--bins", type=int, default=20, show_default=True)
def cmd_eval(sample_files, csv_out, hist_prefix, bins):
    """Compare conditioned targets against mean measured signals per run."""
    rows = []
    for path in sample_files:
        with open(path, "r", encoding="utf-8") as fh:
            recs = [json.loads(line) for line in fh if line.strip()]
        if not recs:
            raise click.ClickException(f"{path}: no sample records")
        g = recs[0]["guidance"]
        mode = recs[0]["mode"]
        measured = np.array([[r["measured"][f"s_{k}"] for k in ATTRIBUTES] for r in recs])
        for i, k in enumerate(ATTRIBUTES):
            # The conditioned value is the attribute target when it is being
            # guided, otherwise the held base value.
            if mode == "LACON-A" and g["omegas"].get(k, 0.0) != 0.0:
                target = g["s_targets"][k]
            else:
                target = g["s_base"][k]
            rows.append({
                "run": str(path), "mode": mode, "attribute": k,
                "target": target, "mean_measured": float(measured[:, i].mean()),
                "n": len(recs),
            })
        if hist_prefix:
            qvs = [QualityVector.from_array(m) for m in measured]
            fake = curation.Manifest(tuple(
                curation.SampleRecord(f"s{i}", "", 0, q) for i, q in enumerate(qvs)
            ))
            hist_rows = curation.score_histograms(fake, bins)
            curation.write_histogram_csv(hist_rows, f"{hist_prefix}{Path(path).parent.name}.csv")
    with open(csv_out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["run", "mode", "attribute", "target", "mean_measured", "n"])
        w.writeheader()
        w.writerows(rows)
    click.echo(f"wrote {len(rows)} rows -> {csv_out}")


@main.command("weights")
@click.argument("attribute", type=str)
@click.argument("scores", type=float, nargs=-1, required=True)
def cmd_weights(attribute, scores):
    """Print the soft-binning weight vectors for one attribute as JSON."""
    specs = default_anchor_specs()
    if attribute not in specs:
        raise click.ClickException(
            f"unknown attribute {attribute!r}; valid names: {sorted(specs)}"
        )
    out = [list(rbf_weights(s, specs[attribute])) for s in scores]
    click.echo(json.dumps(out))


if __name__ == "__main__":
    main()
