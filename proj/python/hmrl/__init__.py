"""Meta reward shaping and meta policy training on gridworlds.

Thin wrapper over the compiled ``_hmrl`` extension.
"""

from ._hmrl import (  # noqa: F401
    AgentState,
    ConfigError,
    DimensionError,
    Model,
    NumericError,
    RunConfig,
    Task,
    UsageError,
    desk_catalog,
    discounted_return,
    evaluate,
    finetune,
    goal_correlation,
    hallway_catalog,
    heatmap,
    load_checkpoint,
    make_task,
    maze_catalog,
    sample_task,
    step,
    task_from_config,
    train,
    verify,
    version,
)

__version__ = version()
