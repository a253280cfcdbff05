"""Environments: the handler abstraction and built-in toy games."""

from .core import (
    ATARI_PROFILE,
    STACK_DEPTH,
    Environment,
    EnvironmentHandler,
    FrameProfile,
    Observation,
    area_resize,
    preprocess,
    vector_profile,
)
from .shooter import OBS_DIM, VARIANTS, ShooterConfig, ShooterEnv, make_shooter, tracker_action

__all__ = [
    "ATARI_PROFILE",
    "STACK_DEPTH",
    "Environment",
    "EnvironmentHandler",
    "FrameProfile",
    "Observation",
    "OBS_DIM",
    "ShooterConfig",
    "ShooterEnv",
    "VARIANTS",
    "area_resize",
    "make_shooter",
    "preprocess",
    "tracker_action",
    "vector_profile",
]


def make_env(name: str, profile: str = "vector") -> Environment:
    """Instantiate a built-in environment by registry name."""
    return make_shooter(name, profile=profile)


def env_factory(name: str, profile: str = "vector"):
    """Factory closure handed to the engine; one fresh instance per call."""
    return lambda: make_env(name, profile=profile)
