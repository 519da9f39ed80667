"""Command-line entry point: subcommands, structured run config, logging.

Exit codes: 0 on success, 2 on validation/usage errors (bad flags, bad
config, missing paths), 1 on runtime failures. The ``EHRRB_LOG``
environment variable sets the log level (e.g. ``DEBUG``, ``INFO``).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from . import baselines, cohort as cohort_mod, evaluate, icd, ingest, synth
from .errors import ConfigError, EmptyInput, ParseError, RiskbenchError
from .llm import (
    HttpOracle,
    MockProcessOracle,
    OracleProfile,
    build_prompt,
    condition_phrase,
    export_finetune_dataset,
    probe_instruction_swap,
    probe_risk_factor_injection,
    run_inference,
    to_prediction_set,
)
from .llm.prompts import STYLE_V1, STYLE_V2
from .model import CodeSystem, normalize_code, read_catalog
from .sentemed.embeddings import read_embedding_file
from .sentemed.encoder import EncoderConfig
from .sentemed import training as sm

log = logging.getLogger("ehrrb")

_VALIDATION_ERRORS = (ConfigError, ParseError, EmptyInput, FileNotFoundError,
                      IsADirectoryError)

_STYLE_ALIASES = {"v1": STYLE_V1, "v2": STYLE_V2,
                  STYLE_V1: STYLE_V1, STYLE_V2: STYLE_V2}


def _setup_logging() -> None:
    level_name = os.environ.get("EHRRB_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _style(name: str) -> str:
    try:
        return _STYLE_ALIASES[name]
    except KeyError:
        raise ConfigError(f"unknown prompt style {name!r}; "
                          f"expected one of {sorted(_STYLE_ALIASES)}") from None


def _definition(task: str, defs_path: str | None) -> icd.CaseDefinition:
    defs = icd.load_case_definitions(defs_path)
    if task not in defs:
        raise ConfigError(f"task {task!r} has no case definition; "
                          f"known tasks: {', '.join(sorted(defs))}")
    return defs[task]


def _read_cohort_samples(path: str, task: str = "") -> cohort_mod.Cohort:
    return cohort_mod.read_cohort(path, task=task)


def _filter_split(samples, split_path: str | None, subset: str | None):
    if split_path is None or subset is None:
        return list(samples)
    assignment = ingest.read_split(split_path)
    kept = [s for s in samples if assignment.get(s.patient_id) == subset]
    if not kept:
        raise EmptyInput(f"no cohort samples in subset {subset!r}")
    return kept


def _write_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _oracle_from_args(args):
    if getattr(args, "oracle", None):
        return HttpOracle(args.oracle, timeout=args.timeout)
    return MockProcessOracle([sys.executable, "-m",
                              "ehr_riskbench.llm.mock_oracle", args.mock])


def _profile_from_args(args) -> OracleProfile:
    return OracleProfile(context_limit=args.context_limit, k=args.k,
                         endpoint=getattr(args, "oracle", "") or "",
                         parallelism=args.parallelism)


def _add_oracle_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--oracle", metavar="URL",
                       help="HTTP oracle base URL (POST /v1/topk)")
    group.add_argument("--mock", metavar="RULES.json",
                       help="run the bundled mock oracle with this rules file")
    p.add_argument("--timeout", type=float, default=30.0)


def _add_prompt_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cohort", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--style", default="v1", help="v1 (aggregate) or v2 (temporal)")
    p.add_argument("--instruction", choices=("yesno", "highlow"),
                   default="yesno")
    p.add_argument("--context-limit", type=int, default=4096)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--parallelism", type=int, default=4)


# --- simple subcommands ------------------------------------------------------

def cmd_ingest(args) -> int:
    snomed = ingest.load_snomed_map(args.map)
    records, report = ingest.read_synthea(args.patients, args.conditions,
                                          snomed,
                                          keep_unmapped=args.keep_unmapped)
    ingest.write_canonical(records, args.out)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_synth_gen(args) -> int:
    cfg = synth.synth_config_from_toml(args.config)
    records = synth.generate_synthetic(cfg)
    ingest.write_canonical(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_split(args) -> int:
    records = ingest.read_canonical(args.records)
    ratios = tuple(float(x) for x in args.ratios.split(","))
    if len(ratios) != 3:
        raise ConfigError("--ratios needs three comma-separated numbers")
    assignment = ingest.split_patients([r.patient_id for r in records],
                                       seed=args.seed, ratios=ratios)
    ingest.write_split(assignment, args.out)
    print(json.dumps(assignment.counts(), sort_keys=True))
    return 0


def cmd_dump_defs(args) -> int:
    text = icd.builtin_definitions_text()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_build_cohort(args) -> int:
    records = ingest.read_canonical(args.records)
    definition = _definition(args.task, args.defs)
    cohort = cohort_mod.build_cohort(records, definition)
    cohort_mod.write_cohort(cohort, args.out)
    stats = cohort_mod.cohort_stats(cohort)
    if args.report:
        _write_json(stats.to_dict(), args.report)
    print(json.dumps(stats.to_dict(), sort_keys=True))
    return 0


def cmd_train_baseline(args) -> int:
    cohort = _read_cohort_samples(args.cohort, task=args.task)
    train = _filter_split(cohort.samples, args.split, "train")
    model = baselines.train_baseline(
        args.model, cohort.task, train,
        forest_cfg=baselines.ForestConfig(seed=args.seed))
    baselines.save_baseline(model, args.out)
    print(f"trained {args.model} on {len(train)} samples -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    cohort = _read_cohort_samples(args.cohort)
    samples = _filter_split(cohort.samples, args.split, args.subset)
    if args.model.endswith(".npz"):
        if not args.emb:
            raise ConfigError("--emb is required to score a sentemed model "
                              "(the model file stores only the table fingerprint)")
        table = read_embedding_file(args.emb)
        model = sm.load_model(args.model, table)
        preds = sm.predict_cohort(model, table, samples)
    else:
        model = baselines.load_baseline(args.model)
        preds = model.predict_cohort(samples)
    evaluate.write_predictions(preds, args.out)
    print(f"wrote {len(samples)} predictions to {args.out}")
    return 0


# --- sentemed subcommands ----------------------------------------------------

def _encoder_config(args, table) -> EncoderConfig:
    return EncoderConfig(
        layers=args.layers, heads=args.heads,
        d_model=args.d_model or table.dim, ff_dim=args.ff_dim,
        max_seq=args.max_seq, max_visits=args.max_visits,
        mask_rate=args.mask_rate, lr=args.lr)


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    defaults = EncoderConfig()
    p.add_argument("--layers", type=int, default=defaults.layers)
    p.add_argument("--heads", type=int, default=defaults.heads)
    p.add_argument("--d-model", type=int, default=0,
                   help="0 means: use the embedding file's dimension")
    p.add_argument("--ff-dim", type=int, default=defaults.ff_dim)
    p.add_argument("--max-seq", type=int, default=defaults.max_seq)
    p.add_argument("--max-visits", type=int, default=defaults.max_visits)
    p.add_argument("--mask-rate", type=float, default=defaults.mask_rate)
    p.add_argument("--lr", type=float, default=defaults.lr)


def cmd_pretrain(args) -> int:
    records = ingest.read_canonical(args.records)
    table = read_embedding_file(args.emb)
    cfg = _encoder_config(args, table)
    objectives = tuple(args.objectives.split(","))
    model, curves = sm.pretrain(records, table, cfg, objectives=objectives,
                                epochs=args.epochs, batch_size=args.batch_size,
                                seed=args.seed, mode=args.mode)
    sm.save_model(model, args.out)
    for name, curve in curves.items():
        log.info("%s loss: %.4f -> %.4f", name, curve[0], curve[-1])
    print(f"pretrained on {len(records)} records -> {args.out}")
    return 0


def cmd_finetune(args) -> int:
    table = read_embedding_file(args.emb)
    model = sm.load_model(args.model, table)
    cohort = _read_cohort_samples(args.cohort)
    train = _filter_split(cohort.samples, args.split, "train")
    tuned, curve = sm.finetune(model, table, train, epochs=args.epochs,
                               batch_size=args.batch_size, seed=args.seed,
                               lr=args.lr)
    sm.save_model(tuned, args.out)
    log.info("finetune loss: %.4f -> %.4f", curve[0], curve[-1])
    print(f"finetuned on {len(train)} samples -> {args.out}")
    return 0


# --- llm subcommands ---------------------------------------------------------

def cmd_build_prompts(args) -> int:
    cohort = _read_cohort_samples(args.cohort, task=args.task)
    catalog = read_catalog(args.catalog)
    condition = condition_phrase(cohort.task)
    style = _style(args.style)
    profile = _profile_from_args(args)
    written = skipped = 0
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for sample in cohort.samples:
            try:
                prompt = build_prompt(sample, catalog, condition, style,
                                      profile, instruction=args.instruction)
            except RiskbenchError as exc:
                if args.strict:
                    exc.args = (f"sample {sample.patient_id}: {exc}",)
                    raise
                log.warning("skipping %s: %s", sample.patient_id, exc)
                skipped += 1
                continue
            fh.write(json.dumps({
                "patient_id": prompt.patient_id, "label": prompt.label,
                "style": prompt.style, "token_estimate": prompt.token_estimate,
                "text": prompt.text}) + "\n")
            written += 1
    print(f"wrote {written} prompts to {args.out} ({skipped} skipped)")
    return 0


def cmd_export_finetune(args) -> int:
    cohort = _read_cohort_samples(args.cohort, task=args.task)
    catalog = read_catalog(args.catalog)
    report = export_finetune_dataset(cohort, catalog, _style(args.style),
                                     args.out,
                                     profile=_profile_from_args(args),
                                     strict=args.strict)
    for pid, reason in report.skipped:
        log.warning("skipped %s: %s", pid, reason)
    print(f"wrote {report.n_written} examples to {args.out} "
          f"({len(report.skipped)} skipped)")
    return 0


def cmd_llm_infer(args) -> int:
    cohort = _read_cohort_samples(args.cohort, task=args.task)
    catalog = read_catalog(args.catalog)
    profile = _profile_from_args(args)
    oracle = _oracle_from_args(args)
    try:
        results = run_inference(cohort.samples, catalog,
                                condition_phrase(cohort.task),
                                _style(args.style), oracle, profile,
                                instruction=args.instruction)
    finally:
        if hasattr(oracle, "close"):
            oracle.close()
    preds = to_prediction_set(results, model=args.model_name)
    evaluate.write_predictions(preds, args.out)
    if args.results:
        with open(args.results, "w", encoding="utf-8", newline="\n") as fh:
            for r in results:
                fh.write(json.dumps(dataclasses.asdict(r)) + "\n")
    n_err = sum(r.error is not None for r in results)
    n_ind = sum(r.indeterminate for r in results)
    print(f"wrote {len(results)} predictions to {args.out} "
          f"({n_ind} indeterminate, {n_err} errored)")
    return 0


def cmd_probe_swap(args) -> int:
    cohort = _read_cohort_samples(args.cohort, task=args.task)
    catalog = read_catalog(args.catalog)
    oracle = _oracle_from_args(args)
    try:
        report = probe_instruction_swap(cohort.samples, catalog,
                                        condition_phrase(cohort.task),
                                        _style(args.style), oracle,
                                        _profile_from_args(args))
    finally:
        if hasattr(oracle, "close"):
            oracle.close()
    doc = dataclasses.asdict(report)
    doc["adherence_rate"] = report.adherence_rate
    doc["inversion_rate"] = report.inversion_rate
    if args.out:
        _write_json(doc, args.out)
    print(f"n={report.n_samples} adherence={report.adherence_rate:.3f} "
          f"inversion={report.inversion_rate:.3f}")
    return 0


def cmd_probe_inject(args) -> int:
    cohort = _read_cohort_samples(args.cohort, task=args.task)
    catalog = read_catalog(args.catalog)
    injected = [normalize_code(CodeSystem.ICD10, c)
                for c in args.codes.split(",")]
    oracle = _oracle_from_args(args)
    try:
        report = probe_risk_factor_injection(cohort.samples, injected, catalog,
                                             condition_phrase(cohort.task),
                                             _style(args.style), oracle,
                                             _profile_from_args(args))
    finally:
        if hasattr(oracle, "close"):
            oracle.close()
    doc = dataclasses.asdict(report)
    doc["mean_delta"] = report.mean_delta
    if args.out:
        _write_json(doc, args.out)
    print(f"n={len(report.rows)} mean_delta={report.mean_delta:+.4f}")
    return 0


# --- evaluate ----------------------------------------------------------------

def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def cmd_evaluate(args) -> int:
    preds = evaluate.read_predictions(args.preds, model=_stem(args.preds))
    rows = []
    base_rate = float(np.mean(preds.labels))
    if args.against:
        against = evaluate.read_predictions(args.against,
                                            model=_stem(args.against))
        result = evaluate.bootstrap_compare(preds, against, n=args.bootstrap,
                                            seed=args.seed)
        rows.append(evaluate.ReportRow(
            outcome=args.outcome, model=preds.model,
            roc=evaluate.roc_auc(preds), pr=evaluate.pr_auc(preds),
            base_rate=base_rate, roc_p=result.roc.p_value,
            pr_p=result.pr.p_value))
        rows.append(evaluate.ReportRow(
            outcome=args.outcome, model=against.model,
            roc=evaluate.roc_auc(against), pr=evaluate.pr_auc(against),
            base_rate=base_rate))
        print(f"bootstrap n={result.n_iterations}: "
              f"ROC p={result.roc.p_value:.4f} PR p={result.pr.p_value:.4f}")
    else:
        rows.append(evaluate.ReportRow(
            outcome=args.outcome, model=preds.model,
            roc=evaluate.roc_auc(preds), pr=evaluate.pr_auc(preds),
            base_rate=base_rate))
    csv_path, md_path = evaluate.emit_report(rows, args.out)
    print(f"wrote {csv_path} and {md_path}")
    return 0


# --- full pipeline -----------------------------------------------------------

_KNOWN_MODELS = ("logreg", "brf", "sentemed")

DEFAULT_CONFIG = """\
# ehrrb run configuration (TOML). All randomness is seeded from here;
# there are no wall-clock defaults.

task = "OUD"            # case-definition name (built-in or from paths.defs)
seed = 42               # master seed: split, model training, bootstrap
outdir = "out"          # artifact directory, created if missing
models = ["logreg"]     # any of: logreg, brf, sentemed

[paths]
# records = "records.jsonl"   # canonical records; omit when using [synth]
# catalog = "catalog.tsv"     # code descriptions (llm tooling only)
# embeddings = "emb.tsv"      # frozen embedding file; required for sentemed
# defs = "defs.tsv"           # custom case definitions

[split]
ratios = [0.7, 0.1, 0.2]      # train, val, test

# [synth]                     # generate records instead of paths.records
# n_patients = 2000
# vocab_size = 200
# seed = 42
# [[synth.rules]]
# trigger = "R07.9"
# target = "OUD"
# probability = 0.9
# trigger_fraction = 0.3

[sentemed]
# layers = 4
# heads = 4
# d_model = 0                 # 0: use the embedding file's dimension
# ff_dim = 64
# max_seq = 128
# max_visits = 64
# mask_rate = 0.15
# lr = 1e-5
# mode = "frozen"             # or "learned"
# objectives = ["mlm"]        # plus "nextvisit"
# epochs_pretrain = 1
# epochs_finetune = 5
# batch_size = 8
# finetune_lr = 0.0           # 0: reuse lr

[evaluate]
bootstrap = 1000
"""


@dataclasses.dataclass
class RunConfig:
    """Validated, hashable description of one end-to-end run."""

    task: str
    seed: int
    outdir: str
    models: tuple[str, ...]
    records: str | None = None
    catalog: str | None = None
    embeddings: str | None = None
    defs: str | None = None
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    synth: synth.SynthConfig | None = None
    sentemed: dict = dataclasses.field(default_factory=dict)
    bootstrap: int = 1000
    raw: dict = dataclasses.field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def load_run_config(path: str) -> RunConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    paths = raw.get("paths", {})
    synth_cfg = None
    if "synth" in raw:
        section = raw["synth"]
        rules = [synth.PlantedRule(
            trigger_code=r["trigger"], target_definition=r["target"],
            probability=float(r["probability"]),
            trigger_fraction=float(r.get("trigger_fraction", 0.3)))
            for r in section.get("rules", [])]
        try:
            synth_cfg = synth.SynthConfig(
                n_patients=int(section["n_patients"]),
                vocab_size=int(section["vocab_size"]),
                visits_min=int(section.get("visits_min", 2)),
                visits_max=int(section.get("visits_max", 8)),
                codes_min=int(section.get("codes_min", 1)),
                codes_max=int(section.get("codes_max", 4)),
                rules=rules, seed=int(section.get("seed", raw.get("seed", 0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad [synth] section: {exc}") from exc
    try:
        ratios = tuple(float(x) for x in
                       raw.get("split", {}).get("ratios", (0.7, 0.1, 0.2)))
        cfg = RunConfig(
            task=str(raw["task"]), seed=int(raw.get("seed", 0)),
            outdir=str(raw.get("outdir", "out")),
            models=tuple(raw.get("models", ("logreg",))),
            records=paths.get("records"), catalog=paths.get("catalog"),
            embeddings=paths.get("embeddings"), defs=paths.get("defs"),
            ratios=ratios, synth=synth_cfg,
            sentemed=dict(raw.get("sentemed", {})),
            bootstrap=int(raw.get("evaluate", {}).get("bootstrap", 1000)),
            raw=raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad run config: {exc}") from exc
    return cfg


def _embedding_dim_of(path: str) -> int | None:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
    for part in header.removeprefix("#").split():
        if part.startswith("dim="):
            try:
                return int(part[4:])
            except ValueError:
                return None
    return None


def validate_config(cfg: RunConfig) -> list[str]:
    """Return human-readable violations; empty list means the config is valid."""
    violations = []
    if "seed" not in cfg.raw:
        violations.append("seed missing: all runs need an explicit seed")
    if cfg.records is None and cfg.synth is None:
        violations.append("no input: set paths.records or a [synth] section")
    if cfg.records is not None and cfg.synth is not None:
        violations.append("ambiguous input: paths.records and [synth] both set")
    for name in ("records", "catalog", "embeddings", "defs"):
        path = getattr(cfg, name)
        if path is not None and not os.path.exists(path):
            violations.append(f"paths.{name}: {path!r} does not exist")
    for model in cfg.models:
        if model not in _KNOWN_MODELS:
            violations.append(f"unknown model {model!r}; "
                              f"expected one of {_KNOWN_MODELS}")
    if not cfg.models:
        violations.append("models list is empty")
    if abs(sum(cfg.ratios) - 1.0) > 1e-9 or len(cfg.ratios) != 3:
        violations.append(f"split.ratios {cfg.ratios} must be three numbers "
                          "summing to 1")
    try:
        defs = icd.load_case_definitions(cfg.defs) \
            if cfg.defs is None or os.path.exists(cfg.defs) else {}
        if defs and cfg.task not in defs:
            violations.append(f"task {cfg.task!r} has no case definition")
    except RiskbenchError as exc:
        violations.append(f"case definitions: {exc}")
    if "sentemed" in cfg.models:
        if cfg.embeddings is None:
            violations.append("sentemed selected but paths.embeddings unset")
        elif os.path.exists(cfg.embeddings):
            dim = _embedding_dim_of(cfg.embeddings)
            want = int(cfg.sentemed.get("d_model", 0)) or 384
            if dim is not None and dim != want:
                violations.append(f"dimension mismatch: embedding file has "
                                  f"dim {dim}, model expects {want}")
    if cfg.synth is not None:
        try:
            cfg.synth.validate()
        except ConfigError as exc:
            violations.append(f"[synth]: {exc}")
    return violations


def _run_stage(name: str):
    """Decorator-free stage wrapper: prefixes errors with the stage name."""
    class _Ctx:
        def __enter__(self):
            log.info("stage %s: start", name)
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, Exception):
                exc.args = (f"[stage {name}] {exc}",)
            else:
                log.info("stage %s: done", name)
            return False
    return _Ctx()


def run_pipeline(cfg: RunConfig) -> dict:
    """Execute ingest -> cohort -> split -> train/predict -> evaluate.

    Returns the summary document (also written to ``outdir/summary.json``).
    Every artifact directory is stamped with the config hash so equal
    configurations are verifiably byte-identical.
    """
    os.makedirs(cfg.outdir, exist_ok=True)
    out = lambda name: os.path.join(cfg.outdir, name)
    summary: dict = {"config_hash": cfg.config_hash, "task": cfg.task,
                     "artifacts": {}}

    with _run_stage("records"):
        if cfg.synth is not None:
            records = synth.generate_synthetic(cfg.synth)
            ingest.write_canonical(records, out("records.jsonl"))
            summary["artifacts"]["records"] = out("records.jsonl")
        else:
            records = ingest.read_canonical(cfg.records)
        summary["n_records"] = len(records)

    with _run_stage("cohort"):
        definition = _definition(cfg.task, cfg.defs)
        cohort = cohort_mod.build_cohort(records, definition)
        cohort_mod.write_cohort(cohort, out("cohort.jsonl"))
        stats = cohort_mod.cohort_stats(cohort)
        _write_json(stats.to_dict(), out("cohort_report.json"))
        summary["cohort"] = stats.to_dict()
        summary["artifacts"]["cohort"] = out("cohort.jsonl")

    with _run_stage("split"):
        strata = {s.patient_id: str(s.label) for s in cohort.samples}
        assignment = ingest.split_patients(sorted(strata), seed=cfg.seed,
                                           ratios=cfg.ratios, strata=strata)
        ingest.write_split(assignment, out("split.tsv"))
        by_subset = {
            name: [s for s in cohort.samples
                   if assignment.assignment[s.patient_id] == name]
            for name in ingest.SPLIT_NAMES}
        summary["split"] = assignment.counts()

    preds_by_model: dict[str, evaluate.PredictionSet] = {}
    for model_name in cfg.models:
        if model_name in ("logreg", "brf"):
            with _run_stage(f"train-{model_name}"):
                model = baselines.train_baseline(
                    model_name, cfg.task, by_subset["train"],
                    forest_cfg=baselines.ForestConfig(seed=cfg.seed))
                baselines.save_baseline(model, out(f"model_{model_name}.json"))
                preds = model.predict_cohort(by_subset["test"])
        else:
            with _run_stage("sentemed"):
                preds = _run_sentemed(cfg, records, by_subset, assignment, out)
        evaluate.write_predictions(preds, out(f"preds_{model_name}.csv"))
        summary["artifacts"][f"preds_{model_name}"] = \
            out(f"preds_{model_name}.csv")
        preds_by_model[model_name] = preds

    with _run_stage("evaluate"):
        summary["metrics"] = _evaluate_models(cfg, preds_by_model, out)

    _write_json(summary, out("summary.json"))
    return summary


def _run_sentemed(cfg: RunConfig, records, by_subset, assignment, out):
    opts = cfg.sentemed
    table = read_embedding_file(cfg.embeddings)
    enc = EncoderConfig(
        layers=int(opts.get("layers", 4)), heads=int(opts.get("heads", 4)),
        d_model=int(opts.get("d_model", 0)) or table.dim,
        ff_dim=int(opts.get("ff_dim", 64)),
        max_seq=int(opts.get("max_seq", 128)),
        max_visits=int(opts.get("max_visits", 64)),
        mask_rate=float(opts.get("mask_rate", 0.15)),
        lr=float(opts.get("lr", 1e-5)))
    mode = str(opts.get("mode", "frozen"))
    objectives = tuple(opts.get("objectives", ("mlm",)))
    train_ids = set(assignment.ids("train"))
    pretrain_records = [r for r in records if r.patient_id in train_ids]
    model, _curves = sm.pretrain(
        pretrain_records, table, enc, objectives=objectives,
        epochs=int(opts.get("epochs_pretrain", 1)),
        batch_size=int(opts.get("batch_size", 8)), seed=cfg.seed, mode=mode)
    sm.save_model(model, out("model_sentemed.npz"))
    tuned, _curve = sm.finetune(
        model, table, by_subset["train"],
        epochs=int(opts.get("epochs_finetune", 5)),
        batch_size=int(opts.get("batch_size", 8)), seed=cfg.seed,
        lr=float(opts.get("finetune_lr", 0.0)) or None)
    sm.save_model(tuned, out("model_sentemed_ft.npz"))
    return sm.predict_cohort(tuned, table, by_subset["test"])


def _evaluate_models(cfg: RunConfig, preds_by_model, out) -> dict:
    metrics: dict = {}
    rows = []
    baselines_present = [m for m in ("logreg", "brf") if m in preds_by_model]
    challenger = "sentemed" if "sentemed" in preds_by_model else None
    incumbent = None
    if challenger and baselines_present:
        incumbent = max(baselines_present,
                        key=lambda m: evaluate.roc_auc(preds_by_model[m]))
    for name, preds in preds_by_model.items():
        roc = evaluate.roc_auc(preds)
        pr = evaluate.pr_auc(preds)
        base_rate = float(np.mean(preds.labels))
        roc_p = pr_p = None
        if name == challenger and incumbent is not None:
            result = evaluate.bootstrap_compare(
                preds, preds_by_model[incumbent], n=cfg.bootstrap,
                seed=cfg.seed)
            roc_p, pr_p = result.roc.p_value, result.pr.p_value
            metrics["bootstrap"] = {
                "challenger": name, "incumbent": incumbent,
                "roc_p": roc_p, "pr_p": pr_p}
        rows.append(evaluate.ReportRow(outcome=cfg.task, model=name, roc=roc,
                                       pr=pr, base_rate=base_rate,
                                       roc_p=roc_p, pr_p=pr_p))
        metrics[name] = {"roc_auc": roc, "pr_auc": pr, "base_rate": base_rate}
    evaluate.emit_report(rows, out("report"), config_hash=cfg.config_hash)
    return metrics


def cmd_run(args) -> int:
    if args.dump_default_config:
        sys.stdout.write(DEFAULT_CONFIG)
        return 0
    if not args.config:
        raise ConfigError("--config is required (or --dump-default-config)")
    cfg = load_run_config(args.config)
    violations = validate_config(cfg)
    if violations:
        for v in violations:
            print(f"config violation: {v}", file=sys.stderr)
        return 2
    summary = run_pipeline(cfg)
    print(json.dumps(summary["metrics"], indent=2, sort_keys=True))
    print(f"config_hash: {summary['config_hash']}")
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehrrb",
        description="EHR risk-prediction workbench: cohorts, baselines, "
                    "a from-scratch sentence-embedding transformer, and "
                    "LLM probing tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Synthea CSVs -> canonical records")
    p.add_argument("--patients", required=True)
    p.add_argument("--conditions", required=True)
    p.add_argument("--map", required=True, help="SNOMED->ICD-10 TSV")
    p.add_argument("--out", required=True)
    p.add_argument("--keep-unmapped", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth-gen", help="generate synthetic records")
    p.add_argument("--config", required=True, help="TOML synth config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("split", help="assign patients to train/val/test")
    p.add_argument("--records", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ratios", default="0.7,0.1,0.2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("dump-defs", help="print built-in case definitions")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_defs)

    p = sub.add_parser("build-cohort", help="apply a case definition")
    p.add_argument("--records", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--defs", help="custom case-definition TSV")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write cohort stats JSON here")
    p.set_defaults(func=cmd_build_cohort)

    p = sub.add_parser("train-baseline", help="fit logreg or balanced RF")
    p.add_argument("--cohort", required=True)
    p.add_argument("--split", help="split TSV; trains on the train subset")
    p.add_argument("--task", default="")
    p.add_argument("--model", choices=("logreg", "brf"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("predict", help="score a cohort with a trained model")
    p.add_argument("--model", required=True,
                   help=".json baseline or .npz sentemed model")
    p.add_argument("--cohort", required=True)
    p.add_argument("--emb", help="embedding file (sentemed models)")
    p.add_argument("--split", help="split TSV for --subset filtering")
    p.add_argument("--subset", choices=ingest.SPLIT_NAMES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("pretrain", help="MLM/next-visit pretraining")
    p.add_argument("--records", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--objectives", default="mlm", help="mlm[,nextvisit]")
    p.add_argument("--mode", choices=("frozen", "learned"), default="frozen")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    _add_encoder_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning")
    p.add_argument("--model", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--split", help="split TSV; trains on the train subset")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.0,
                   help="0 keeps the pretraining learning rate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("build-prompts", help="render prompts to JSONL")
    _add_prompt_flags(p)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_prompts)

    p = sub.add_parser("export-finetune",
                       help="instruction-tuning dataset (JSONL)")
    _add_prompt_flags(p)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_finetune)

    p = sub.add_parser("llm-infer", help="score a cohort via an LLM oracle")
    _add_prompt_flags(p)
    _add_oracle_flags(p)
    p.add_argument("--model-name", default="llm")
    p.add_argument("--results", help="also write per-sample JSONL here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_llm_infer)

    p = sub.add_parser("probe-swap",
                       help="Yes/No vs High/Low instruction sensitivity")
    _add_prompt_flags(p)
    _add_oracle_flags(p)
    p.add_argument("--out", help="write the full report JSON here")
    p.set_defaults(func=cmd_probe_swap)

    p = sub.add_parser("probe-inject",
                       help="risk-factor injection sensitivity")
    _add_prompt_flags(p)
    _add_oracle_flags(p)
    p.add_argument("--codes", required=True,
                   help="comma-separated ICD-10 codes to inject")
    p.add_argument("--out", help="write the full report JSON here")
    p.set_defaults(func=cmd_probe_inject)

    p = sub.add_parser("evaluate", help="metrics + optional bootstrap report")
    p.add_argument("--preds", required=True)
    p.add_argument("--against", help="incumbent predictions CSV")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--outcome", default="outcome")
    p.add_argument("--out", required=True, help="report path prefix")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="config-driven end-to-end pipeline")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--dump-default-config", action="store_true")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RiskbenchError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
