"""Command-line interface: the full lifecycle as subcommands.

    selfreason index       build a BM25 index from a JSONL corpus
    selfreason run         answer questions through the single-pass pipeline
    selfreason datagen     synthesize candidate training records with a teacher
    selfreason qc          quality-filter candidates into the training set
    selfreason eval        score pipeline results against gold answers
    selfreason robustness  compare baseline / shuffled / noisy settings
    selfreason prep-train  emit stage-wise masked records and the schedule

Every subcommand takes an optional JSON config file (--config, schema
version 1); explicit flags override config values. All randomness flows from
--seed, so identical inputs and seed give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .datagen import (
    CandidateRecord,
    dsr_rows,
    generate_candidates,
    make_negative_sample,
    make_positive_sample,
    qc_filter,
)
from .evalsuite import (
    citation_precision,
    citation_recall,
    em_recall,
    fever_accuracy,
    lexical_overlap_judge,
    make_report,
    map_fact_label,
    merge_reports,
    segment_statements,
    short_form_accuracy,
)
from .llm_gateway import HttpBackend, ScriptedBackend
from .pipeline import STATUS_OK, PipelineConfig, run_batch
from .retrieval import LexicalRetriever, build_index, load_corpus_jsonl, load_index, save_index
from .robustness import SETTINGS, run_robustness_experiment
from .trajectory import Document, Question, trajectory_from_dict
from .training_prep import StageSchedule, build_stage_records, emit_schedule
from .util import derive_seed, dumps_canonical, read_json, read_jsonl, write_json, write_jsonl

CONFIG_VERSION = 1


class CliError(Exception):
    """Fatal subcommand error; maps to exit code 1."""


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: config must be a JSON object")
    version = cfg.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise CliError(f"{path}: unsupported config version {version} (expected {CONFIG_VERSION})")
    return cfg


def _setting(args, config: dict, key: str, default):
    """Flag wins over config wins over default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _load_questions(path: str) -> list[Question]:
    return [Question.from_dict(row) for row in read_jsonl(path)]


def _load_gold(path: str) -> dict[str, tuple[tuple[str, ...], ...]]:
    """Gold file rows: {question_id, gold_answers} (list of alias lists) or
    {question_id, class} for fact verification."""
    gold = {}
    for row in read_jsonl(path):
        qid = str(row["question_id"])
        if "gold_answers" in row:
            gold[qid] = tuple(tuple(a) for a in row["gold_answers"])
        elif "class" in row:
            gold[qid] = ((row["class"],),)
        else:
            raise CliError(f"gold row for {qid!r} needs 'gold_answers' or 'class'")
    return gold


def _build_backend(args, config: dict):
    backend_kind = _setting(args, config, "backend", "scripted")
    if backend_kind == "scripted":
        script = _setting(args, config, "script", None)
        if not script:
            raise CliError("scripted backend needs --script rules.json")
        return ScriptedBackend.from_rules_file(script)
    if backend_kind == "http":
        base_url = _setting(args, config, "base_url", None)
        model_name = _setting(args, config, "model_name", None)
        if not base_url or not model_name:
            raise CliError("http backend needs base_url and model_name (flag or config)")
        return HttpBackend(
            base_url=base_url,
            model_name=model_name,
            timeout_ms=int(_setting(args, config, "timeout_ms", 60_000)),
            max_in_flight=int(_setting(args, config, "max_in_flight", 4)),
        )
    raise CliError(f"unknown backend {backend_kind!r}; choose scripted or http")


def _pipeline_config(args, config: dict) -> PipelineConfig:
    return PipelineConfig(
        k=int(_setting(args, config, "k", 5)),
        jobs=int(_setting(args, config, "jobs", os.cpu_count() or 1)),
        temperature=float(_setting(args, config, "temperature", 0.2)),
        max_tokens=int(_setting(args, config, "max_tokens", 2048)),
        seed=_setting(args, config, "seed", None),
        record_timing=bool(_setting(args, config, "timing", False)),
    )


# --- subcommands ---------------------------------------------------------------

def cmd_index(args) -> int:
    config = _load_config(args.config)
    corpus = load_corpus_jsonl(args.corpus)
    index = build_index(corpus)
    save_index(index, args.out)
    print(dumps_canonical({"docs": len(index), "terms": index.n_terms, "out": str(args.out)}))
    return 0


def cmd_run(args) -> int:
    config = _load_config(args.config)
    retriever = LexicalRetriever(load_index(args.index))
    backend = _build_backend(args, config)
    questions = _load_questions(args.questions)
    cfg = _pipeline_config(args, config)
    _, summary = run_batch(questions, retriever, backend, cfg, out_path=args.out)
    print(dumps_canonical(summary))
    return 0


def cmd_datagen(args) -> int:
    config = _load_config(args.config)
    retriever = LexicalRetriever(load_index(args.index))
    teacher = _build_backend(args, config)
    questions = _load_questions(args.questions)
    seed = int(_setting(args, config, "seed", 0))
    k = int(_setting(args, config, "k", 5))
    n_negatives = _setting(args, config, "negatives", None)
    if n_negatives is None:
        n_negatives = len(questions) // 2
    n_negatives = min(int(n_negatives), len(questions) if len(questions) > 1 else 0)

    samples = [
        make_positive_sample(q, retriever, derive_seed(seed, "pos", i), k=k)
        for i, q in enumerate(questions)
    ]
    if n_negatives:
        import random

        chooser = random.Random(derive_seed(seed, "neg-select"))
        chosen = sorted(chooser.sample(range(len(questions)), n_negatives))
        samples += [
            make_negative_sample(questions[i], questions, retriever,
                                 derive_seed(seed, "neg", i), k=k)
            for i in chosen
        ]
    records, report = generate_candidates(samples, teacher)
    write_jsonl(args.out, (r.to_dict() for r in records))
    print(dumps_canonical(report.to_dict()))
    return 0


def cmd_qc(args) -> int:
    config = _load_config(args.config)
    records = [CandidateRecord.from_dict(row) for row in read_jsonl(args.infile)]
    delta_p = float(_setting(args, config, "delta_p", 0.8))
    delta_r = float(_setting(args, config, "delta_r", 0.8))
    judge = lexical_overlap_judge()
    kept, report = qc_filter(records, delta_p=delta_p, delta_r=delta_r, judge=judge)
    write_jsonl(args.out, dsr_rows(kept, report))
    if args.report:
        write_json(args.report, report.to_dict())
    summary = {key: value for key, value in report.to_dict().items() if key != "per_record"}
    print(dumps_canonical(summary))
    return 0


def _eval_reports(records: list[dict], gold: dict, task: str, judge) -> dict:
    reports = {}
    answered: list[tuple[str, dict]] = []
    per_item_answer = []
    flags = []
    for row in records:
        qid = str(row["question_id"])
        if qid not in gold:
            raise CliError(f"no gold answers for question {qid!r}")
        ok = row.get("status") == STATUS_OK and row.get("output")
        if ok:
            answered.append((qid, row))
        if task == "short_qa":
            value = (
                float(short_form_accuracy(row["output"]["final_answer"], gold[qid])) if ok else 0.0
            )
            per_item_answer.append((qid, value))
        elif task == "fact_verification":
            value = 0.0
            if ok:
                prediction = row["output"]["final_answer"]
                if map_fact_label(prediction) is None:
                    flags.append({"item": qid, "flag": "unmappable_prediction",
                                  "prediction": prediction})
                value = float(fever_accuracy(prediction, gold[qid][0][0]))
            per_item_answer.append((qid, value))
        elif task == "long_qa":
            analysis = row["output"]["trajectory"]["analysis"] if ok else ""
            value = em_recall(analysis, gold[qid]) if analysis else 0.0
            per_item_answer.append((qid, value))
        else:
            raise CliError(f"unknown task {task!r}")
    main_metric = "em_recall" if task == "long_qa" else "accuracy"
    reports[main_metric] = make_report(main_metric, per_item_answer, flags).to_dict()

    if task == "long_qa":
        recall_parts = []
        precision_parts = []
        for qid, row in answered:
            docs = [Document.from_dict(d) for d in row["retrieval"]["docs"]]
            statements = segment_statements(row["output"]["trajectory"]["analysis"])
            recall_parts.append(citation_recall(statements, docs, judge))
            precision_parts.append(citation_precision(statements, docs, judge))
        if recall_parts:
            reports["citation_recall"] = merge_reports(recall_parts).to_dict()
            reports["citation_precision"] = merge_reports(precision_parts).to_dict()
        else:
            reports["citation_recall"] = make_report("citation_recall", []).to_dict()
            reports["citation_precision"] = make_report("citation_precision", []).to_dict()
    return reports


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    records = list(read_jsonl(args.results))
    gold = _load_gold(args.gold)
    judge = lexical_overlap_judge()
    reports = _eval_reports(records, gold, args.task, judge)
    if args.out:
        write_json(args.out, reports)
    summary = {
        name: {"aggregate": rep["aggregate"], "n": rep["n"]} for name, rep in reports.items()
    }
    print(dumps_canonical(summary))
    return 0


def cmd_robustness(args) -> int:
    config = _load_config(args.config)
    retriever = LexicalRetriever(load_index(args.index))
    backend = _build_backend(args, config)
    questions = _load_questions(args.questions)
    settings = _setting(args, config, "settings", ",".join(SETTINGS))
    if isinstance(settings, str):
        settings = [s.strip() for s in settings.split(",") if s.strip()]
    report = run_robustness_experiment(
        questions, retriever, backend, settings,
        master_seed=int(_setting(args, config, "seed", 0)),
        fraction=float(_setting(args, config, "fraction", 0.5)),
        cfg=_pipeline_config(args, config),
    )
    if args.out:
        write_json(args.out, report.to_dict())
    print(report.to_text())
    return 0


def cmd_prep_train(args) -> int:
    config = _load_config(args.config)
    dataset = []
    for row in read_jsonl(args.dsr):
        dataset.append(
            CandidateRecord(
                sample=_dsr_row_to_sample(row),
                trajectory=trajectory_from_dict(row["trajectory"]),
                raw_teacher_output="",
            )
        )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stages = [int(s) for s in str(_setting(args, config, "stages", "1,2,3")).split(",")]
    schedule = StageSchedule(
        epochs=int(_setting(args, config, "epochs", 3)),
        batch_size=int(_setting(args, config, "batch_size", 32)),
    )
    stage_files = []
    counts = {}
    for stage in stages:
        stage_file = out_dir / f"stage{stage}.jsonl"
        written, dropped = build_stage_records(dataset, stage, stage_file)
        # schedule entries point at their sibling files by name, so the
        # output directory stays relocatable
        stage_files.append(stage_file.name)
        counts[f"stage{stage}"] = {"written": written, "dropped": dropped}
    schedule_path = out_dir / "schedule.json"
    emit_schedule(schedule_path, stage_files, schedule)
    print(dumps_canonical({"stages": counts, "schedule": str(schedule_path)}))
    return 0


def _dsr_row_to_sample(row: dict):
    from .datagen import CandidateSample

    question = Question.from_dict(row["question"])
    polarity = row.get("polarity", "positive")
    return CandidateSample(
        question=question,
        docs=tuple(Document.from_dict(d) for d in row["docs"]),
        polarity=polarity,
        source_question_id=(
            question.id if polarity == "positive"
            else str(row.get("source_question_id", f"other-than-{question.id}"))
        ),
        shuffle_seed=int(row.get("shuffle_seed", 0)),
    )


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfreason",
        description="Self-reasoning RAG lifecycle: index, run, datagen, qc, eval, "
                    "robustness, prep-train.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (schema version 1)")
        p.add_argument("--seed", type=int, help="master seed for all randomness")
        p.add_argument("--jobs", type=int, help="parallel workers (default: CPU count)")

    p = sub.add_parser("index", help="build a BM25 index from a JSONL corpus")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus JSONL ({id, title, text} per line)")
    p.add_argument("--out", required=True, help="output index file")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("run", help="answer questions through the pipeline")
    common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--questions", required=True, help="questions JSONL")
    p.add_argument("--backend", choices=["scripted", "http"])
    p.add_argument("--script", help="scripted-backend rules JSON")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--model-name", dest="model_name")
    p.add_argument("--k", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--timing", action="store_const", const=True,
                   help="record wall-clock timings (breaks byte-identical reruns)")
    p.add_argument("--out", required=True, help="results JSONL")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("datagen", help="generate candidate training records")
    common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--backend", choices=["scripted", "http"])
    p.add_argument("--script")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--model-name", dest="model_name")
    p.add_argument("--k", type=int)
    p.add_argument("--negatives", type=int, help="number of negative samples (default: half)")
    p.add_argument("--out", required=True, help="candidates JSONL")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("qc", help="quality-filter candidates into the training set")
    common(p)
    p.add_argument("--in", dest="infile", required=True, help="candidates JSONL")
    p.add_argument("--delta-p", dest="delta_p", type=float, help="citation precision threshold")
    p.add_argument("--delta-r", dest="delta_r", type=float, help="citation recall threshold")
    p.add_argument("--out", required=True, help="filtered dataset JSONL")
    p.add_argument("--report", help="write the full QC report JSON here")
    p.set_defaults(func=cmd_qc)

    p = sub.add_parser("eval", help="score pipeline results against gold answers")
    common(p)
    p.add_argument("--results", required=True, help="pipeline results JSONL")
    p.add_argument("--gold", required=True, help="gold JSONL ({question_id, gold_answers|class})")
    p.add_argument("--task", required=True, choices=["short_qa", "long_qa", "fact_verification"])
    p.add_argument("--out", help="write full metric reports JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="baseline vs shuffled vs noisy comparison")
    common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--backend", choices=["scripted", "http"])
    p.add_argument("--script")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--model-name", dest="model_name")
    p.add_argument("--k", type=int)
    p.add_argument("--settings", help="comma list from: baseline,shuffled,noisy")
    p.add_argument("--fraction", type=float, help="noise replacement fraction (default 0.5)")
    p.add_argument("--out", help="write the comparison table JSON here")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("prep-train", help="emit stage-wise masked records and schedule")
    common(p)
    p.add_argument("--dsr", required=True, help="filtered dataset JSONL")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--stages", help="comma list of stages (default 1,2,3)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_prep_train)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
