"""Guided policy co-training: python surface of the C++ core."""

from ._gpocore import (
    Env,
    alpha_update,
    backtrack_mask,
    double_clip_ratio,
    evaluate,
    gae,
    gradient_check,
    halting_conditions_hold,
    load_params,
    prop1_check_random,
    reward_to_go,
    save_params,
    tigerdoor_alt_dynamics,
    train,
)

__all__ = [
    "Env",
    "alpha_update",
    "backtrack_mask",
    "double_clip_ratio",
    "evaluate",
    "gae",
    "gradient_check",
    "halting_conditions_hold",
    "load_params",
    "prop1_check_random",
    "reward_to_go",
    "save_params",
    "tigerdoor_alt_dynamics",
    "train",
]
