"""Command-line entry point: configured runs and artifact emission.

Every command reads one INI config (sections backends, dataset, attack,
eval, study), applies flag overrides, does its work, and leaves three
kinds of traces under --out-dir: the command's own artifacts, a canonical
re-parseable echo of the effective config, and a run manifest listing
everything produced. Exit codes: 0 success, 1 partial failure, 2
configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

from .backends import ROLES, BackendConfig, Backends, RoleConfig, backends_from_config
from .core import (
    AttackSpec,
    AttackedImage,
    ImageBuffer,
    QASample,
    RectPx,
    load_manifest,
)
from .errors import (
    CapabilityUnsupported,
    ConfigError,
    JudgingFailed,
    ManifestError,
)
from .evaluation import (
    ASR_MODES,
    NScoreJudgment,
    aggregate_metrics,
    compute_asr,
    dump_outcomes,
    evaluate_sample,
    judge_naturalness,
    load_outcomes,
)
from .mocks import (
    DigestNaturalnessJudge,
    FixtureSegmenter,
    FlipTarget,
    HotspotScorer,
    MockInpainter,
    RuleBasedPlanner,
)
from .pipeline import (
    ABLATION_SETTINGS,
    AttackResult,
    PipelineConfig,
    ablation_attack,
    export_patch,
    run_attacks,
)
from .render import TextStyle
from .report import emit_table, render_text_type_table
from .studies import heatmap_render, strength_heatmap, text_type_study

SECTION_ORDER = ("backends", "dataset", "attack", "eval", "study")
PLAIN_METHODS = ("scenetap", "center", "margin")

# segmentation fixture used when backends.mode = mock
DEFAULT_SEGMENT_FRACS = ((0.05, 0.05, 0.55, 0.40), (0.10, 0.55, 0.45, 0.40))

ATTACKS_FILE = "attacks.jsonl"
OUTCOMES_FILE = "outcomes.jsonl"
JUDGMENTS_FILE = "judgments.jsonl"


# ------------------------------------------------------------------ config

def load_config(path: Optional[str]) -> dict:
    """Parse the INI config into {section: {key: value}}; empty if no path."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with p.open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    config: dict = {}
    for section in parser.sections():
        if section not in SECTION_ORDER:
            raise ConfigError(f"unknown config section [{section}]")
        config[section] = dict(parser.items(section))
    return config


def apply_overrides(config: dict, args) -> None:
    """Flags override config scalars in place."""
    if args.workers is not None:
        config.setdefault("attack", {})["workers"] = str(args.workers)
    if args.filter_denominator is not None:
        config.setdefault("attack", {})["filter_denominator"] = (
            f"{args.filter_denominator:g}"
        )
    if args.seed is not None:
        config.setdefault("attack", {})["seed"] = str(args.seed)
    if args.asr_mode is not None:
        config.setdefault("eval", {})["asr_mode"] = args.asr_mode


def canonical_config(config: dict) -> str:
    """Stable INI text: fixed section order, sorted keys.

    canonical(parse(canonical(c))) == canonical(c), so the echo written
    with a run can be fed back in as --config unchanged.
    """
    lines = []
    for section in SECTION_ORDER:
        items = config.get(section)
        if not items:
            continue
        lines.append(f"[{section}]")
        for key in sorted(items):
            lines.append(f"{key} = {items[key]}")
        lines.append("")
    return "\n".join(lines)


def _typed(section: dict, key: str, cast, default=None):
    if key not in section:
        return default
    try:
        return cast(section[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {section[key]!r}") from exc


def _pipeline_config(config: dict) -> PipelineConfig:
    section = config.get("attack", {})
    return PipelineConfig(
        filter_denominator=_typed(section, "filter_denominator", float),
        workers=_typed(section, "workers", int),
    )


# ------------------------------------------------------------- dataset IO

def _dataset_section(config: dict) -> tuple:
    section = config.get("dataset", {})
    ref = section.get("manifest")
    if not ref:
        raise ConfigError("dataset section needs a manifest path")
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    return path, section


def _samples_or_config_error(path: Path) -> list:
    try:
        return load_manifest(path)
    except ManifestError as exc:
        raise ConfigError(f"manifest {path} is invalid: {exc}") from exc


def _image_path(sample: QASample, section: dict, manifest_path: Path) -> Path:
    p = Path(sample.image_ref)
    if p.is_absolute():
        return p
    root = Path(section["image_root"]) if section.get("image_root") \
        else manifest_path.parent
    return root / p


def _load_images(samples, section: dict, manifest_path: Path) -> dict:
    images = {}
    for sample in samples:
        p = _image_path(sample, section, manifest_path)
        if not p.exists():
            raise ConfigError(f"image for sample {sample.id!r} not found: {p}")
        images[sample.id] = ImageBuffer.from_file(p)
    return images


# --------------------------------------------------------------- backends

def _split_ids(raw: str) -> set:
    return {tok for tok in raw.replace(",", " ").split() if tok}


def _mock_backends(section: dict, samples, images: dict) -> Backends:
    planner_text = section.get("planner_text", "banana")
    flip_ids = _split_ids(section.get("flip_ids", ""))
    known = {s.id for s in samples}
    unknown = flip_ids - known
    if unknown:
        raise ConfigError(f"flip_ids not in dataset: {sorted(unknown)}")
    correct = {s.question: s.correct_answer for s in samples}
    flip = {}
    for sample in samples:
        if sample.id not in flip_ids:
            continue
        if sample.question_type == "two_choice":
            flip[sample.question] = sample.incorrect_choice()
        else:
            flip[sample.question] = planner_text
    clean = {img.digest() for img in images.values()}
    return Backends(
        planner_chat=RuleBasedPlanner(default_text=planner_text),
        judge_chat=DigestNaturalnessJudge(),
        segmenter=FixtureSegmenter(DEFAULT_SEGMENT_FRACS),
        inpainter=MockInpainter(),
        target=FlipTarget(correct, flip, clean),
    )


def _http_backends(section: dict) -> Backends:
    roles = {}
    for role in ROLES:
        url = section.get(f"{role}_url")
        if not url:
            raise ConfigError(f"backend role '{role}' has no url configured")
        roles[role] = RoleConfig(
            base_url=url,
            token_env=section.get(f"{role}_token_env"),
            model_name=section.get(f"{role}_model"),
            timeout_s=_typed(section, f"{role}_timeout_s", float, 60.0),
        )
    return backends_from_config(BackendConfig(roles))


def build_backends(config: dict, samples=(), images=None) -> Backends:
    section = config.get("backends", {})
    mode = section.get("mode", "mock")
    if mode == "mock":
        return _mock_backends(section, list(samples), images or {})
    if mode == "http":
        return _http_backends(section)
    raise ConfigError(f"unknown backends mode {mode!r} (expected mock or http)")


def _is_mock(config: dict) -> bool:
    return config.get("backends", {}).get("mode", "mock") == "mock"


# ------------------------------------------------------------- run traces

def _finish(out: Path, command: str, artifacts, config: dict) -> None:
    """Write the config echo and the run manifest for this invocation."""
    echo = canonical_config(config)
    (out / "config_echo.ini").write_text(echo, encoding="utf-8")
    manifest = {
        "command": command,
        "config": echo,
        "artifacts": sorted(set(artifacts) | {"config_echo.ini"}),
    }
    (out / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_jsonl(path: Path, records) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list:
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _read_attacks(out: Path) -> list:
    path = out / ATTACKS_FILE
    if not path.exists():
        raise ConfigError(f"no {ATTACKS_FILE} in {out}; run 'attack run' first")
    return _read_jsonl(path)


def _attacked_from_record(rec: dict, out: Path) -> AttackedImage:
    image = ImageBuffer.from_file(out / rec["image"])
    att = rec["attack"]
    spec_d = dict(att["spec"])
    anchor = spec_d.get("anchor")
    spec_d["anchor"] = tuple(anchor) if anchor is not None else None
    bbox = att.get("changed_bbox")
    return AttackedImage(
        image=image,
        spec=AttackSpec(**spec_d),
        provenance=att["provenance"],
        changed_bbox=RectPx.from_dict(bbox) if bbox else None,
    )


# ---------------------------------------------------------------- methods

def _parse_method(method: str) -> tuple:
    """('plain', name) or ('ablation', setting)."""
    if method in PLAIN_METHODS:
        return "plain", method
    if method.startswith("ablation:"):
        raw = method.split(":", 1)[1]
        try:
            setting = int(raw)
        except ValueError:
            raise ConfigError(f"ablation setting must be an integer, got {raw!r}")
        if setting not in ABLATION_SETTINGS:
            raise ConfigError(f"ablation setting must be in 1..5, got {setting}")
        return "ablation", setting
    raise ConfigError(
        f"unknown attack method {method!r} "
        "(expected scenetap, center, margin, or ablation:N)"
    )


# --------------------------------------------------------------- commands

def cmd_dataset_validate(args, config: dict, out: Path) -> int:
    path, section = _dataset_section(config)
    try:
        samples = load_manifest(path)
    except ManifestError as exc:
        print(f"invalid manifest: {exc}", file=sys.stderr)
        return 1
    missing = [
        (s.id, _image_path(s, section, path))
        for s in samples
        if not _image_path(s, section, path).exists()
    ]
    _finish(out, "dataset validate", [], config)
    if missing:
        for sid, p in missing:
            print(f"missing image for sample {sid!r}: {p}", file=sys.stderr)
        return 1
    print(f"validated {len(samples)} samples from {path}")
    return 0


def cmd_attack_run(args, config: dict, out: Path) -> int:
    attack_section = config.get("attack", {})
    method = args.method or attack_section.get("method", "scenetap")
    kind, detail = _parse_method(method)

    manifest_path, dataset_section = _dataset_section(config)
    samples = _samples_or_config_error(manifest_path)
    images = _load_images(samples, dataset_section, manifest_path)
    backends = build_backends(config, samples, images)
    cfg = _pipeline_config(config)

    if kind == "plain":
        results = run_attacks(samples, backends, method=detail, cfg=cfg,
                              images=images)
    else:
        results = []
        for sample in samples:
            try:
                attacked = ablation_attack(sample, detail, backends, cfg=cfg,
                                           image=images[sample.id])
                results.append(AttackResult(sample_id=sample.id,
                                            attacked=attacked))
            except Exception as exc:
                results.append(AttackResult(
                    sample_id=sample.id,
                    error=f"{type(exc).__name__}: {exc}",
                ))

    attacked_dir = out / "attacked"
    attacked_dir.mkdir(parents=True, exist_ok=True)
    records, artifacts, failures = [], [], 0
    for result in results:
        if result.error is not None:
            failures += 1
            records.append({
                "sample_id": result.sample_id, "method": method,
                "error": result.error,
            })
            print(f"failed {result.sample_id}: {result.error}")
            continue
        rel = f"attacked/{result.sample_id}.png"
        result.attacked.image.to_file(out / rel)
        record = {"sample_id": result.sample_id, "method": method,
                  "image": rel, "attack": result.attacked.provenance_record()}
        records.append(record)
        artifacts.append(rel)
        print(f"attacked {result.sample_id} -> {rel}")

    _write_jsonl(out / ATTACKS_FILE, records)
    artifacts.append(ATTACKS_FILE)
    _finish(out, "attack run", artifacts, config)
    print(f"{len(results) - failures}/{len(results)} samples attacked")
    return 1 if failures else 0


def cmd_eval_asr(args, config: dict, out: Path) -> int:
    mode = config.get("eval", {}).get("asr_mode", "incorrect")
    if mode not in ASR_MODES:
        raise ConfigError(f"unknown asr_mode {mode!r}")

    manifest_path, dataset_section = _dataset_section(config)
    samples = _samples_or_config_error(manifest_path)
    images = _load_images(samples, dataset_section, manifest_path)
    backends = build_backends(config, samples, images)
    judge = None if _is_mock(config) else backends.judge_chat
    by_id = {s.id: s for s in samples}

    outcomes, failures = [], 0
    for rec in _read_attacks(out):
        if "error" in rec:
            failures += 1
            print(f"skipping {rec['sample_id']}: attack failed")
            continue
        sample = by_id.get(rec["sample_id"])
        if sample is None:
            failures += 1
            print(f"skipping {rec['sample_id']}: not in dataset manifest")
            continue
        attacked = _attacked_from_record(rec, out)
        outcome = evaluate_sample(sample, attacked, backends.target,
                                  judge=judge, mode=mode)
        if outcome.method != rec["method"]:
            outcome = dataclasses.replace(outcome, method=rec["method"])
        outcomes.append(outcome)

    artifacts = []
    if outcomes:
        dump_outcomes(outcomes, out / OUTCOMES_FILE)
        artifacts.append(OUTCOMES_FILE)
        print(f"ASR strict: {compute_asr(outcomes, mode='strict'):.2f}")
        judged = [o for o in outcomes if not o.unjudged]
        if judged:
            print(f"ASR incorrect: {compute_asr(outcomes, mode='incorrect'):.2f}")
    _finish(out, "eval asr", artifacts, config)
    return 1 if failures or not outcomes else 0


def cmd_eval_nscore(args, config: dict, out: Path) -> int:
    manifest_path, dataset_section = _dataset_section(config)
    samples = _samples_or_config_error(manifest_path)
    images = _load_images(samples, dataset_section, manifest_path)
    backends = build_backends(config, samples, images)

    judgments, failures = [], 0
    for rec in _read_attacks(out):
        if "error" in rec:
            failures += 1
            continue
        attacked = _attacked_from_record(rec, out)
        try:
            judgment = judge_naturalness(attacked, backends.judge_chat)
        except JudgingFailed as exc:
            failures += 1
            print(f"judging failed for {rec['sample_id']}: {exc}")
            continue
        judgments.append({
            "sample_id": rec["sample_id"], "method": rec["method"],
            "criteria": judgment.criteria, "score": judgment.score,
        })
        print(f"judged {rec['sample_id']}: N-Score {judgment.score}")

    artifacts = []
    if judgments:
        _write_jsonl(out / JUDGMENTS_FILE, judgments)
        artifacts.append(JUDGMENTS_FILE)
        mean = sum(j["score"] for j in judgments) / len(judgments)
        print(f"mean N-Score: {mean:.2f} over {len(judgments)} images")
    _finish(out, "eval nscore", artifacts, config)
    return 1 if failures or not judgments else 0


def cmd_report_table(args, config: dict, out: Path) -> int:
    mode = config.get("eval", {}).get("asr_mode", "incorrect")
    if mode not in ASR_MODES:
        raise ConfigError(f"unknown asr_mode {mode!r}")
    outcomes_path = out / OUTCOMES_FILE
    if not outcomes_path.exists():
        raise ConfigError(f"no {OUTCOMES_FILE} in {out}; run 'eval asr' first")
    outcomes = load_outcomes(outcomes_path)

    judgments = {}
    judgments_path = out / JUDGMENTS_FILE
    if judgments_path.exists():
        for rec in _read_jsonl(judgments_path):
            judgments[(rec["sample_id"], rec["method"])] = NScoreJudgment(
                criteria=rec["criteria"]
            )

    reports = aggregate_metrics(outcomes, judgments, mode=mode)
    markdown, csv_text = emit_table(reports)
    (out / "table.md").write_text(markdown, encoding="utf-8")
    (out / "table.csv").write_text(csv_text, encoding="utf-8")
    _finish(out, "report table", ["table.md", "table.csv"], config)
    print(markdown, end="")
    return 0


def cmd_study_heatmap(args, config: dict, out: Path) -> int:
    section = config.get("study", {})
    manifest_path, dataset_section = _dataset_section(config)
    samples = _samples_or_config_error(manifest_path)
    by_id = {s.id: s for s in samples}

    sample_id = args.sample or section.get("sample_id")
    if sample_id is None:
        two_choice = [s for s in samples if s.question_type == "two_choice"]
        if not two_choice:
            raise ConfigError("heatmap needs a two_choice sample")
        sample_id = two_choice[0].id
    if sample_id not in by_id:
        raise ConfigError(f"sample {sample_id!r} not in dataset manifest")
    sample = by_id[sample_id]

    text = section.get("text")
    if not text:
        raise ConfigError("study section needs a text value for the heatmap")
    interval = _typed(section, "interval", int, 10)
    glyph_height = _typed(section, "glyph_height", int)
    style = TextStyle(glyph_height=glyph_height) if glyph_height else None

    images = _load_images([sample], dataset_section, manifest_path)
    image = images[sample.id]
    if _is_mock(config):
        hotspot_raw = section.get("hotspot")
        if hotspot_raw:
            parts = [p for p in hotspot_raw.replace(",", " ").split() if p]
            if len(parts) != 2:
                raise ConfigError(f"hotspot must be 'x,y', got {hotspot_raw!r}")
            hotspot = (int(parts[0]), int(parts[1]))
        else:
            hotspot = (image.width // 2, image.height // 2)
        sigma = _typed(section, "sigma", float, 25.0)
        scorer = HotspotScorer(image, hotspot=hotspot, sigma=sigma)
    else:
        scorer = build_backends(config).target

    workers = _typed(config.get("attack", {}), "workers", int)
    try:
        smap = strength_heatmap(sample, text, scorer, interval=interval,
                                style=style, image=image, workers=workers)
    except CapabilityUnsupported as exc:
        raise ConfigError(f"target cannot score candidates: {exc}") from exc

    overlay, csv_text = heatmap_render(smap)
    png_rel = f"heatmap_{sample.id}.png"
    csv_rel = f"heatmap_{sample.id}.csv"
    map_rel = f"heatmap_{sample.id}.json"
    overlay.to_file(out / png_rel)
    (out / csv_rel).write_text(csv_text, encoding="utf-8")
    (out / map_rel).write_text(
        json.dumps(smap.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _finish(out, "study heatmap", [png_rel, csv_rel, map_rel], config)
    print(f"strongest placement at {smap.argmax_anchor()} "
          f"over {len(smap.anchors)} anchors")
    return 0


def cmd_study_texttypes(args, config: dict, out: Path) -> int:
    manifest_path, dataset_section = _dataset_section(config)
    samples = _samples_or_config_error(manifest_path)
    images = _load_images(samples, dataset_section, manifest_path)
    backends = build_backends(config, samples, images)
    result = text_type_study(samples, backends, cfg=_pipeline_config(config),
                             images=images)

    (out / "texttypes.json").write_text(
        json.dumps({
            "asr_by_class": result.asr_by_class,
            "n": result.n,
            "failures": list(result.failures),
        }, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    table = render_text_type_table(result.asr_by_class, result.n)
    (out / "texttypes.md").write_text(table, encoding="utf-8")
    _finish(out, "study texttypes", ["texttypes.json", "texttypes.md"], config)
    print(table, end="")
    for failure in result.failures:
        print(f"failed: {failure}")
    return 1 if result.failures else 0


def cmd_patch_export(args, config: dict, out: Path) -> int:
    rec = next(
        (r for r in _read_attacks(out)
         if r["sample_id"] == args.sample and "error" not in r),
        None,
    )
    if rec is None:
        raise ConfigError(
            f"no attacked image for sample {args.sample!r} in {ATTACKS_FILE}"
        )
    attacked = _attacked_from_record(rec, out)
    png, metadata = export_patch(attacked, padding=args.padding,
                                 px_per_cm=args.px_per_cm)
    png_rel = f"patch_{args.sample}.png"
    meta_rel = f"patch_{args.sample}.json"
    (out / png_rel).write_bytes(png)
    (out / meta_rel).write_text(
        json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _finish(out, "patch export", [png_rel, meta_rel], config)
    crop = metadata["crop"]
    print(f"exported {crop['w']}x{crop['h']} patch for {args.sample}")
    return 0


HANDLERS = {
    ("dataset", "validate"): cmd_dataset_validate,
    ("attack", "run"): cmd_attack_run,
    ("eval", "asr"): cmd_eval_asr,
    ("eval", "nscore"): cmd_eval_nscore,
    ("report", "table"): cmd_report_table,
    ("study", "heatmap"): cmd_study_heatmap,
    ("study", "texttypes"): cmd_study_texttypes,
    ("patch", "export"): cmd_patch_export,
}


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration file")
    common.add_argument("--out-dir", default="out",
                        help="directory for run artifacts (default: out)")
    common.add_argument("--workers", type=int, help="thread pool size")
    common.add_argument("--asr-mode", choices=ASR_MODES,
                        help="success criterion for ASR and C-Score")
    common.add_argument("--filter-denominator", type=float,
                        help="region size filter divisor override")
    common.add_argument("--seed", type=int,
                        help="recorded run seed (mock runs are deterministic)")

    parser = argparse.ArgumentParser(
        prog="scenetap",
        description="Scene-coherent typographic attacks: run, evaluate, report.",
    )
    groups = parser.add_subparsers(dest="group", required=True, metavar="group")

    dataset = groups.add_parser("dataset", help="dataset manifest operations")
    d_sub = dataset.add_subparsers(dest="action", required=True, metavar="action")
    d_sub.add_parser("validate", parents=[common],
                     help="check manifest records and image files")

    attack = groups.add_parser("attack", help="produce attacked images")
    a_sub = attack.add_subparsers(dest="action", required=True, metavar="action")
    run_p = a_sub.add_parser("run", parents=[common],
                             help="attack every sample in the manifest")
    run_p.add_argument("--method",
                       help="scenetap | center | margin | ablation:N")

    eval_g = groups.add_parser("eval", help="measure attack outcomes")
    e_sub = eval_g.add_subparsers(dest="action", required=True, metavar="action")
    e_sub.add_parser("asr", parents=[common],
                     help="query the target and judge answers")
    e_sub.add_parser("nscore", parents=[common],
                     help="judge naturalness of attacked images")

    report = groups.add_parser("report", help="emit result tables")
    r_sub = report.add_subparsers(dest="action", required=True, metavar="action")
    r_sub.add_parser("table", parents=[common],
                     help="aggregate outcomes into Markdown and CSV tables")

    study = groups.add_parser("study", help="analysis studies")
    s_sub = study.add_subparsers(dest="action", required=True, metavar="action")
    heat_p = s_sub.add_parser("heatmap", parents=[common],
                              help="placement strength map for one sample")
    heat_p.add_argument("--sample", help="sample id (default: [study] sample_id)")
    s_sub.add_parser("texttypes", parents=[common],
                     help="ASR across the four text relevance classes")

    patch = groups.add_parser("patch", help="physical patch export")
    p_sub = patch.add_subparsers(dest="action", required=True, metavar="action")
    export_p = p_sub.add_parser("export", parents=[common],
                                help="crop an attacked region for printing")
    export_p.add_argument("--sample", required=True, help="sample id to export")
    export_p.add_argument("--padding", type=int, default=10,
                          help="context pixels around the changed region")
    export_p.add_argument("--px-per-cm", type=float, default=None,
                          help="physical print density to record")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 2

    try:
        config = load_config(args.config)
        apply_overrides(config, args)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[(args.group, args.action)](args, config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
