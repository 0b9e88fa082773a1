"""Web-browsing agent loop with human-in-the-loop controls.

The pipeline: harvest interactable elements from the page, render the browse
prompt under a sink + sliding-window history policy, ask a completion
provider for a JSON plan, validate the plan against the cursor/scroll
discipline, execute it on the session, repeat until the model declares the
task complete - with a human able to observe, answer questions, pause, and
take over at any point.
"""

from .context import (
    ContextState,
    HistorySegment,
    PromptTemplate,
    append_step,
    evict,
    new_context,
    render_history,
    render_prompt,
    sanitize_prompt,
)
from .gateway import (
    CompletionRequest,
    HttpCompletionGateway,
    OracleScript,
    RecordingProxy,
    ScriptedOracle,
    load_script,
    save_script,
)
from .harvester import (
    ElementMap,
    ElementRecord,
    HarvestConfig,
    NodeInfo,
    PageSnapshot,
    Rect,
    Viewport,
    classify_interactable,
    compute_visibility,
    harvest,
    load_snapshot,
    parse_elements,
    serialize_elements,
)
from .orchestrator import (
    AgentConfig,
    SessionTranscript,
    StepRecord,
    TaskRunner,
    TaskState,
    canonical_transcript_lines,
    load_transcript,
    replay,
    run_task,
)
from .protocol import (
    AgentInput,
    AgentOutput,
    CursorState,
    InteractionEvent,
    ValidationReport,
    Violation,
    build_input,
    parse_output,
    validate_events,
)
from .session import FixtureWorld, PreconditionFailure, SessionState, SimulatedSession

__version__ = "0.1.0"
