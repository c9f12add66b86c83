"""Benchmark orchestration: config parsing, experiment commands, reports.

Every command takes one JSON run config, writes results under an output
directory, and embeds the config digest plus global seed into each artifact
so any aggregate can be recomputed and any run reproduced byte-identically.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adaptive, audio_io, metrics, training
from .attacks import AttackSpec, attack_batch, paper_attack_grid
from .models import (Checkpoint, Detector, build_detector, detector_from_checkpoint,
                     load_checkpoint, save_checkpoint)

SCHEMA_VERSION = 1
RESULT_HEADER = ["target_model", "attack_model", "attack", "param",
                 "eer", "mean_mcd", "flipped_frac", "n"]


class ConfigError(Exception):
    """The run config is malformed or references the wrong sections."""


class OutputExistsError(Exception):
    """Refusing to overwrite an existing run directory without --force."""


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def out_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        if "out_dir" not in self.raw:
            raise ConfigError("config has no out_dir and no --out was given")
        return self.path(self.raw["out_dir"])

    # -- sections ----------------------------------------------------------

    def synth_spec(self) -> audio_io.SynthSpec:
        sect = self.raw.get("dataset", {})
        if "synth" not in sect:
            raise ConfigError("dataset.synth section required")
        synth = dict(sect["synth"])
        synth.setdefault("seed", self.seed)
        return audio_io.SynthSpec(**synth)

    def manifest_records(self):
        sect = self.raw.get("dataset", {})
        if "manifest" not in sect:
            raise ConfigError("dataset.manifest path required")
        return audio_io.read_manifest(self.path(sect["manifest"]))

    def train_config(self, sect: dict | None = None) -> training.TrainConfig:
        sect = dict(sect if sect is not None else self.raw.get("model", {}).get("train", {}))
        sect.setdefault("seed", self.seed)
        return training.TrainConfig(**sect)

    def model_kind(self) -> str:
        kind = self.raw.get("model", {}).get("kind")
        if kind is None:
            raise ConfigError("model.kind required")
        return kind

    def attack_specs(self) -> list[AttackSpec]:
        if "attacks" not in self.raw:
            return paper_attack_grid()
        specs = []
        for entry in self.raw["attacks"]:
            specs.append(AttackSpec(**entry))
        if not specs:
            raise ConfigError("attack grid must be non-empty")
        return specs

    def model_entries(self) -> list[dict]:
        entries = self.raw.get("models", [])
        if not entries:
            raise ConfigError("models section (kind + checkpoint) required")
        return entries

    def adaptive_config(self) -> tuple[adaptive.AdaptiveConfig, training.TrainConfig, dict]:
        sect = dict(self.raw.get("adaptive", {}))
        roster = tuple(AttackSpec(**a) for a in sect.pop("roster", []))
        if not roster:
            from .attacks import strongest_roster

            roster = tuple(strongest_roster())
        train_sect = sect.pop("train", {})
        extras = {k: sect.pop(k) for k in ("baseline_checkpoint", "baseline_rows")
                  if k in sect}
        cfg = adaptive.AdaptiveConfig(roster=roster, **sect)
        return cfg, self.train_config(train_sect), extras

    def eval_split(self) -> str:
        return self.raw.get("eval_split", "test")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig(raw=raw, base_dir=path.parent.resolve())


def prepare_out_dir(out: Path, force: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise OutputExistsError(
                f"output directory {out} exists and is non-empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config_snapshot(cfg: RunConfig, out: Path) -> None:
    snap = {"config": cfg.raw, "config_digest": cfg.digest, "seed": cfg.seed,
            "schema_version": SCHEMA_VERSION}
    (out / "config.json").write_text(
        json.dumps(snap, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Result rows


@dataclass
class ResultRow:
    target_model: str
    attack_model: str
    attack: str
    param: float
    eer: float
    mean_mcd: float
    flipped_frac: float
    n: int


def rows_to_csv(rows, digest: str, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA_VERSION} config_digest={digest} seed={seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_HEADER)
    for r in rows:
        writer.writerow([r.target_model, r.attack_model, r.attack, _fmt(r.param),
                         _fmt(r.eer), _fmt(r.mean_mcd), _fmt(r.flipped_frac), r.n])
    return buf.getvalue()


def read_rows_csv(path) -> tuple[list[ResultRow], dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ConfigError(f"{path}: missing metadata header")
    meta = dict(kv.split("=", 1) for kv in lines[0][1:].split())
    if int(meta.get("schema", -1)) != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema version mismatch")
    reader = csv.DictReader(lines[1:])
    rows = []
    for rec in reader:
        rows.append(ResultRow(
            target_model=rec["target_model"], attack_model=rec["attack_model"],
            attack=rec["attack"], param=float(rec["param"]), eer=float(rec["eer"]),
            mean_mcd=float(rec["mean_mcd"]), flipped_frac=float(rec["flipped_frac"]),
            n=int(rec["n"])))
    return rows, meta


def row_tag(row: ResultRow) -> str:
    param = _fmt(row.param).replace(".", "p").replace("-", "m")
    return f"{row.target_model}__{row.attack_model}__{row.attack}_{param}"


# ---------------------------------------------------------------------------
# Attack evaluation


def evaluate_attack_rows(target: Detector, attacker: Detector, specs,
                         records, batch_size: int = 32,
                         scores_dir: Path | None = None) -> list[ResultRow]:
    """Attack `records` with the attacker's gradients, score on the target.

    Streams batches from disk; per-sample scores are persisted as JSONL when
    `scores_dir` is given so every aggregate stays recomputable.
    """
    rows = []
    sidecars = {id(spec): [] for spec in specs}
    labels_all = np.array([r.label for r in records], dtype=np.int64)
    adv_scores = {id(spec): [] for spec in specs}
    flips = {id(spec): [] for spec in specs}
    mcds = {id(spec): [] for spec in specs}

    for start in range(0, len(records), batch_size):
        chunk = records[start: start + batch_size]
        waves = np.stack([audio_io.load_standardized(r.path).samples for r in chunk])
        y = labels_all[start: start + len(chunk)]
        clean_scores = np.atleast_1d(target.logits(waves))
        clean_pred = clean_scores > 0
        clean_cepstra = None
        for spec in specs:
            if spec.kind == "none":
                adv = waves
            else:
                adv, _, errors = attack_batch(attacker, spec, waves,
                                              y.astype(np.float64))
                for i, err in enumerate(errors):
                    if err is not None:
                        adv[i] = waves[i]
            scores = np.atleast_1d(target.logits(adv))
            flip = (scores > 0) != clean_pred
            if np.any(flip):
                if clean_cepstra is None:
                    clean_cepstra = metrics.mcd_cepstra(waves)
                adv_cep = metrics.mcd_cepstra(adv[flip])
                sample_mcds = [metrics.mcd_from_cepstra(clean_cepstra[i], adv_cep[j])
                               for j, i in enumerate(np.nonzero(flip)[0])]
            else:
                sample_mcds = []
            adv_scores[id(spec)].append(scores)
            flips[id(spec)].append(flip)
            mcds[id(spec)].extend(sample_mcds)
            if scores_dir is not None:
                delta = adv - waves
                for i, rec in enumerate(chunk):
                    sidecars[id(spec)].append(json.dumps({
                        "index": start + i, "path": Path(rec.path).name,
                        "label": int(y[i]), "clean_score": float(clean_scores[i]),
                        "adv_score": float(scores[i]),
                        "linf": float(np.abs(delta[i]).max()),
                        "l2": float(np.linalg.norm(delta[i])),
                        "flipped": bool(flip[i])}, sort_keys=True))

    for spec in specs:
        scores = np.concatenate(adv_scores[id(spec)])
        flip = np.concatenate(flips[id(spec)])
        vals = np.asarray(mcds[id(spec)], dtype=np.float64)
        row = ResultRow(
            target_model=target.name, attack_model=attacker.name,
            attack=spec.kind, param=spec.param_value,
            eer=metrics.compute_eer(scores[labels_all == 0], scores[labels_all == 1]),
            mean_mcd=float(vals.mean()) if vals.size else float("nan"),
            flipped_frac=float(flip.mean()), n=len(records))
        rows.append(row)
        if scores_dir is not None:
            scores_dir.mkdir(parents=True, exist_ok=True)
            tag = row_tag(row)
            (scores_dir / f"{tag}.jsonl").write_text(
                "\n".join(sidecars[id(spec)]) + "\n", encoding="utf-8")
    return rows


def _load_detectors(cfg: RunConfig) -> list[Detector]:
    detectors = []
    for entry in cfg.model_entries():
        ckpt = load_checkpoint(cfg.path(entry["checkpoint"]),
                               expected_kind=entry.get("kind"))
        detectors.append(detector_from_checkpoint(ckpt))
    return detectors


# ---------------------------------------------------------------------------
# Commands


def cmd_synth_data(cfg: RunConfig, out=None, force: bool = False) -> Path:
    out = prepare_out_dir(cfg.out_dir(out), force)
    spec = cfg.synth_spec()
    records = audio_io.synthesize_dataset(spec, out)
    _write_config_snapshot(cfg, out)
    summary = {"n_records": len(records), "config_digest": cfg.digest,
               "seed": cfg.seed,
               "per_split": {s: sum(r.split == s for r in records)
                             for s in audio_io.SPLITS}}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return out / "manifest.csv"


def cmd_train(cfg: RunConfig, out=None, force: bool = False) -> Path:
    out = prepare_out_dir(cfg.out_dir(out), force)
    records = cfg.manifest_records()
    kind = cfg.model_kind()
    tcfg = cfg.train_config()
    balanced = audio_io.balance_oversample(
        audio_io.split_records(records, "train"), cfg.seed)
    corpus = balanced + [r for r in records if r.split != "train"]
    detector = build_detector(kind, seed=tcfg.seed)
    result = training.train(detector, corpus, tcfg, config_digest=cfg.digest)
    save_checkpoint(result.best, out / "checkpoint.advdf")

    test_recs = audio_io.split_records(records, "test")
    test_eval = {}
    if test_recs:
        waves, labels = audio_io.load_split_waves(test_recs)
        acc, eer, _ = training.evaluate_split(detector, detector.prepare(waves), labels)
        test_eval = {"clean_test_eer": eer, "clean_test_accuracy": acc}

    log_lines = [json.dumps({"epoch": h.epoch, "train_loss": h.train_loss,
                             "valid_accuracy": h.valid_accuracy,
                             "valid_eer": h.valid_eer,
                             "config_digest": cfg.digest, "seed": cfg.seed},
                            sort_keys=True) for h in result.history]
    (out / "train_log.jsonl").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    (out / "result.json").write_text(json.dumps({
        "kind": kind, "best_epoch": result.best_epoch, **test_eval,
        "config_digest": cfg.digest, "seed": cfg.seed}, sort_keys=True, indent=2) + "\n")
    _write_config_snapshot(cfg, out)
    return out / "checkpoint.advdf"


def _benchmark_records(cfg: RunConfig):
    records = cfg.manifest_records()
    subset = audio_io.split_records(records, cfg.eval_split())
    if not subset:
        raise audio_io.ManifestError(f"no records in split {cfg.eval_split()!r}")
    limit = cfg.raw.get("eval_limit_per_class")
    if limit:
        by_label = {0: [], 1: []}
        for r in subset:
            if len(by_label[r.label]) < limit:
                by_label[r.label].append(r)
        subset = by_label[0] + by_label[1]
    return subset


def cmd_whitebox(cfg: RunConfig, out=None, force: bool = False) -> list[ResultRow]:
    """White-box benchmark: the gradient model is the target model."""
    out = prepare_out_dir(cfg.out_dir(out), force)
    records = _benchmark_records(cfg)
    detectors = _load_detectors(cfg)
    specs = [AttackSpec("none")] + cfg.attack_specs()
    rows = []
    for det in detectors:
        rows.extend(evaluate_attack_rows(det, det, specs, records,
                                         scores_dir=out / "scores"))
    (out / "rows.csv").write_text(rows_to_csv(rows, cfg.digest, cfg.seed))
    _write_config_snapshot(cfg, out)
    return rows


def cmd_transfer(cfg: RunConfig, out=None, force: bool = False,
                 mfcc_attacker: bool = False) -> list[ResultRow]:
    """Transferability benchmark: attack model != target model.

    Detectors with an MFCC front end participate as attackers only, and only
    when `mfcc_attacker` is set (the front-end swap experiment).
    """
    out = prepare_out_dir(cfg.out_dir(out), force)
    records = _benchmark_records(cfg)
    detectors = _load_detectors(cfg)
    targets = [d for d in detectors if d.name != "specnet-mfcc"]
    attackers = [d for d in detectors if d.name != "specnet-mfcc" or mfcc_attacker]
    if len(targets) < 1 or len(attackers) < 2:
        raise ConfigError("transfer benchmark needs at least two models")
    specs = cfg.attack_specs()
    rows = []
    for target in targets:
        for attacker in attackers:
            if attacker.name == target.name:
                continue
            rows.extend(evaluate_attack_rows(target, attacker, specs, records,
                                             scores_dir=out / "scores"))
    (out / "rows.csv").write_text(rows_to_csv(rows, cfg.digest, cfg.seed))
    _write_config_snapshot(cfg, out)
    return rows


def cmd_advtrain(cfg: RunConfig, out=None, force: bool = False) -> Path:
    """Adaptive adversarial fine-tuning plus before/after benchmarks."""
    out = prepare_out_dir(cfg.out_dir(out), force)
    records = cfg.manifest_records()
    adaptive_cfg, tcfg, extras = cfg.adaptive_config()
    if "baseline_checkpoint" not in extras:
        raise ConfigError("adaptive.baseline_checkpoint required")
    ckpt = load_checkpoint(cfg.path(extras["baseline_checkpoint"]))
    detector = detector_from_checkpoint(ckpt)

    bench_records = _benchmark_records(cfg)
    specs = [AttackSpec("none")] + cfg.attack_specs()
    if "baseline_rows" in extras:
        rows_before, _ = read_rows_csv(cfg.path(extras["baseline_rows"]))
        rows_before = [r for r in rows_before if r.target_model == detector.name
                       and r.attack_model == detector.name]
    else:
        rows_before = evaluate_attack_rows(detector, detector, specs, bench_records)
    (out / "rows_before.csv").write_text(rows_to_csv(rows_before, cfg.digest, cfg.seed))

    finetuned, history = adaptive.adv_finetune(detector, records, adaptive_cfg, tcfg,
                                               config_digest=cfg.digest)
    save_checkpoint(finetuned, out / "finetuned.advdf")
    (out / "history.jsonl").write_text(
        adaptive.history_to_jsonl(history, finetuned.epoch), encoding="utf-8")

    rows_after = evaluate_attack_rows(detector, detector, specs, bench_records,
                                      scores_dir=out / "scores")
    (out / "rows_after.csv").write_text(rows_to_csv(rows_after, cfg.digest, cfg.seed))

    if "models" in cfg.raw:  # transfer re-run against the fine-tuned target
        transfer_rows = []
        for attacker in _load_detectors(cfg):
            if attacker.name == detector.name:
                continue
            transfer_rows.extend(evaluate_attack_rows(
                detector, attacker, cfg.attack_specs(), bench_records,
                scores_dir=out / "scores"))
        (out / "transfer_after.csv").write_text(
            rows_to_csv(transfer_rows, cfg.digest, cfg.seed))

    before = {(r.attack, _fmt(r.param)): r for r in rows_before}
    comparison = []
    for r in rows_after:
        b = before.get((r.attack, _fmt(r.param)))
        comparison.append({"attack": r.attack, "param": r.param,
                           "eer_before": b.eer if b else float("nan"),
                           "eer_after": r.eer})
    attacked = [c for c in comparison if c["attack"] != "none"]
    summary = {
        "selected_epoch": finetuned.epoch,
        "avg_attacked_eer_before": float(np.mean([c["eer_before"] for c in attacked])),
        "avg_attacked_eer_after": float(np.mean([c["eer_after"] for c in attacked])),
        "clean_eer_after": next((c["eer_after"] for c in comparison
                                 if c["attack"] == "none"), float("nan")),
        "comparison": comparison,
        "config_digest": cfg.digest, "seed": cfg.seed,
    }
    (out / "comparison.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write_config_snapshot(cfg, out)
    return out / "finetuned.advdf"


def cmd_report(run_dirs, out=None, force: bool = False) -> Path:
    """Merge rows from completed runs into one CSV plus Markdown tables.

    Every stored EER is recomputed from the persisted per-sample scores; a
    mismatch beyond 1e-12 aborts the report.
    """
    out = prepare_out_dir(Path(out) if out else Path("report"), force)
    all_rows = []
    metas = []
    for run in run_dirs:
        run = Path(run)
        for csv_name in ("rows.csv", "rows_after.csv"):
            rows_path = run / csv_name
            if not rows_path.is_file():
                continue
            rows, meta = read_rows_csv(rows_path)
            metas.append(meta)
            scores_dir = run / "scores"
            for row in rows:
                sidecar = scores_dir / f"{row_tag(row)}.jsonl"
                if sidecar.is_file():
                    recs = [json.loads(line) for line in
                            sidecar.read_text().splitlines() if line]
                    bona = np.array([r["adv_score"] for r in recs if r["label"] == 0])
                    fake = np.array([r["adv_score"] for r in recs if r["label"] == 1])
                    recomputed = metrics.compute_eer(bona, fake)
                    if abs(recomputed - row.eer) > 1e-12:
                        raise ConfigError(
                            f"{sidecar}: stored EER {row.eer} does not match "
                            f"recomputed {recomputed}")
            all_rows.extend(rows)

    digest = metas[0].get("config_digest", "") if metas else ""
    seed = int(metas[0].get("seed", 0)) if metas else 0
    (out / "report.csv").write_text(rows_to_csv(all_rows, digest, seed))

    # Markdown: one table per attack kind, worst (max) EER per attack bolded
    lines = ["# Benchmark report", ""]
    kinds = sorted({r.attack for r in all_rows})
    for kind in kinds:
        subset = [r for r in all_rows if r.attack == kind]
        worst = max(r.eer for r in subset)
        lines.append(f"## {kind}")
        lines.append("")
        lines.append("| target | attacker | param | EER | mean MCD | flipped | n |")
        lines.append("|---|---|---|---|---|---|---|")
        for r in subset:
            eer = f"**{_fmt(r.eer)}**" if r.eer == worst else _fmt(r.eer)
            lines.append(f"| {r.target_model} | {r.attack_model} | {_fmt(r.param)} "
                         f"| {eer} | {_fmt(r.mean_mcd)} | {_fmt(r.flipped_frac)} "
                         f"| {r.n} |")
        lines.append("")
    (out / "report.md").write_text("\n".join(lines), encoding="utf-8")
    return out / "report.csv"
