"""A module to contain all project-wide constants."""

CHECKPOINT_FORMAT = "tb-ckpt-1"
CORPUS_FORMAT = "tb-corpus-1"
CONFIG_FORMAT = "tb-cfg-1"
SUITE_FORMAT = "tb-suite-1"
REPORT_FORMAT = "tb-report-1"
EDIT_REPORT_FORMAT = "tb-edit-1"
TRACE_FORMAT = "tb-trace-1"
MANIFEST_FORMAT = "tb-manifest-1"
DIAGNOSTICS_FORMAT = "tb-diag-1"
REFERENCE_FORMAT = "tb-ref-1"

PAD_TOKEN = "<pad>"
NONE_TOKEN = "<none>"

# Probability floor inside every log.
PROB_EPS = 1e-12

# Edit, text-locality and multimodal-locality weights of the composite editor.
DEFAULT_LAMBDAS = (0.1, 1.0, 1.0)

CANONICAL_NINE = (
    "T4I4",
    "T3I3",
    "T3I1",
    "T1I2",
    "T1I3",
    "T1I4",
    "T2I1",
    "T2I2",
    "T2I4",
)

# Full-scale reference numbers, written to reference.json by the report command.
REFERENCE_MASK_SWEEP_BLIP2OPT_VQA = {"29-32": 0.9506, "0-32": 0.0017}
REFERENCE_MEAN_NINE_MEND_BLIP2OPT_VLKEB = 0.5513
