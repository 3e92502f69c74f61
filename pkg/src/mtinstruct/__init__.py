"""Multi-task vision-language instruction data compiler and evaluation harness."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    MTInstructError,
    OutOfRangeError,
    ParseError,
    PlanValidationError,
    SchemaError,
    ValidationError,
)
from .geometry import (  # noqa: F401
    NormBox,
    PixelBox,
    denormalize_box,
    iou,
    normalize_box,
    parse_box,
    serialize_box,
)
from .grammar import (  # noqa: F401
    PromptParts,
    TaskIdentifier,
    benchmark_prompt,
    parse_prompt,
    render_prompt,
)
from .markup import (  # noqa: F401
    GroundedSpan,
    GroundedText,
    PlainText,
    emit_grounded,
    extract_pairs,
    parse_grounded,
    strip_grounding,
)
