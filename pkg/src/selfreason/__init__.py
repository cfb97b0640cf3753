"""Self-reasoning RAG toolkit.

Answering happens in a single generation pass that emits a structured
reasoning trajectory (relevance judgment, cited evidence snippets, analysis)
followed by the final answer. The package covers the full lifecycle around
that idea: lexical retrieval, prompt construction, generation backends,
trajectory parsing, training-data synthesis with quality control, evaluation
metrics, retrieval-robustness experiments, and stage-wise masked training
data preparation.
"""

from .trajectory import (
    Analysis,
    AnswerMismatch,
    Document,
    EvidenceItem,
    GroundingReport,
    IndexOutOfRange,
    MalformedTrajectory,
    MissingField,
    ModelOutput,
    Question,
    RelevanceJudgment,
    SchemaViolation,
    SelfReasoningTrajectory,
    TrajectoryError,
    concat_output,
    parse_trajectory,
    serialize_trajectory,
    validate_evidence_grounding,
)
from .retrieval import (
    Corpus,
    CorpusDoc,
    EmptyCorpus,
    Index,
    LexicalRetriever,
    RetrievalResult,
    Retriever,
    build_index,
    load_corpus_jsonl,
    load_index,
    retrieve,
    save_index,
)
from .llm_gateway import (
    AuthFailure,
    BackendUnavailable,
    GenerationRequest,
    GenerationResponse,
    HttpBackend,
    NoScriptMatch,
    ResponseMalformed,
    ScriptedBackend,
    ScriptRule,
    build_datagen_prompt,
    build_inference_prompt,
    generate,
)
from .pipeline import PipelineConfig, PipelineRecord, answer_question, run_batch
from .datagen import (
    CandidateRecord,
    CandidateSample,
    PoolTooSmall,
    QcReport,
    default_answer_checker,
    generate_candidate,
    generate_candidates,
    make_negative_sample,
    make_positive_sample,
    qc_filter,
)
from .evalsuite import (
    DanglingCitation,
    MetricReport,
    Statement,
    SupportVerdict,
    citation_precision,
    citation_recall,
    em_recall,
    fever_accuracy,
    lexical_overlap_judge,
    merge_reports,
    segment_statements,
    short_form_accuracy,
)
from .robustness import (
    InsufficientDistractors,
    RobustnessReport,
    inject_noise,
    run_robustness_experiment,
    shuffle_docs,
)
from .training_prep import (
    STAGE_MASKS,
    SegmentationFailure,
    StageSchedule,
    TrainingRecord,
    build_stage_records,
    build_training_record,
    emit_schedule,
    load_schedule,
)

__version__ = "0.1.0"
