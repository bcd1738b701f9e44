from ._core import (
    EvalRecord,
    EvrankError,
    Hawkes,
    PromptTemplate,
    build_prompt,
    generate_synthetic,
    levenshtein,
    load_template,
    map_at_m,
    mar_at_m,
    mean_rank,
    parse_causes,
    retrieve,
    rmse_time,
    run_stage,
    similarity,
)

STAGES = ("synth", "ingest", "train-base", "propose", "abduce", "retrieve",
          "train-ranker", "predict", "evaluate", "report")


def run_all(config, overrides=None, source="synthetic"):
    """Runs the data stage and every later stage; returns all summary lines."""
    overrides = dict(overrides or {})
    first = "synth" if source == "synthetic" else "ingest"
    lines = []
    for stage in (first,) + STAGES[2:]:
        out, _ = run_stage(stage, str(config), overrides)
        lines.extend(out)
    return lines
