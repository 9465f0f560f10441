"""Schema-driven SQL synthesis, execution evaluation and self-play training."""

from .errors import SqlArenaError
from .executor import (
    Database,
    EvalContext,
    ExecConfig,
    ResultTable,
    Verdict,
    classify,
    ex_accuracy,
    execute,
    results_equal,
    ts_accuracy,
)
from .pipeline import PipelineConfig, RoundState, run_pipeline, vbift_round
from .samples import SynthSample
from .schema import (
    ColumnDef,
    DatabaseSchema,
    ForeignKey,
    TableDef,
    columns_of_type,
    fk_distance,
    load_schema,
)
from .selfplay import (
    PolicyRecord,
    PreferencePair,
    SelfPlayConfig,
    build_preference_pairs,
    dpo_loss,
    error_driven_grad,
    error_driven_loss,
    logistic_loss,
    reward,
    run_self_play,
    select_main,
    select_opponent,
    self_play_round,
    spin_style_loss,
)
from .synthesizer import (
    fill_values,
    instantiate,
    reconstruct_from_clause,
    render_nlq,
    select_columns,
    synthesize_dataset,
)
from .template import (
    Slot,
    SqlTemplate,
    TemplatePool,
    build_pool,
    extract_template,
    sample_template,
)
from .toypolicy import CandidateSpace, SoftmaxPolicy

__version__ = "0.1.0"

__all__ = [
    "CandidateSpace",
    "ColumnDef",
    "Database",
    "DatabaseSchema",
    "EvalContext",
    "ExecConfig",
    "ForeignKey",
    "PipelineConfig",
    "PolicyRecord",
    "PreferencePair",
    "ResultTable",
    "RoundState",
    "SelfPlayConfig",
    "Slot",
    "SoftmaxPolicy",
    "SqlArenaError",
    "SqlTemplate",
    "SynthSample",
    "TableDef",
    "TemplatePool",
    "Verdict",
    "build_pool",
    "build_preference_pairs",
    "classify",
    "columns_of_type",
    "dpo_loss",
    "error_driven_grad",
    "error_driven_loss",
    "ex_accuracy",
    "execute",
    "extract_template",
    "fill_values",
    "fk_distance",
    "instantiate",
    "load_schema",
    "logistic_loss",
    "reconstruct_from_clause",
    "render_nlq",
    "results_equal",
    "reward",
    "run_pipeline",
    "run_self_play",
    "sample_template",
    "select_columns",
    "select_main",
    "select_opponent",
    "self_play_round",
    "spin_style_loss",
    "synthesize_dataset",
    "ts_accuracy",
    "vbift_round",
]
