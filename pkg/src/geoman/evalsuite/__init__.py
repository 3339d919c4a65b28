"""Evaluation: accuracy and temporal-consistency metrics, alignment, reports."""
from .align import AlignmentResult, align_scale_shift, align_shift
from .metrics import (
    DEPTH_KEYS,
    NORMAL_KEYS,
    angular_error_deg,
    depth_metrics,
    normal_metrics,
    opw,
    tc_depth,
    tc_normal,
    warp,
)
from .report import (
    ARMS,
    DepthEvalReport,
    EvalProtocol,
    EvalReport,
    NormalEvalReport,
    aggregate,
    dumps17,
    emit_report,
    evaluate_sequence,
    read_report,
    summary_markdown,
)
