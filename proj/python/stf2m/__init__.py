"""Python access to the stf2m C++ core."""

from ._stf2m import (
    ConfigError,
    DataError,
    ParameterError,
    ParseError,
    ShapeError,
    annotate,
    annotate_text,
    class_names,
    config_text,
    eccentricity,
    evaluate,
    gen,
    intensity_degree,
    memberships,
    robustness,
    scalar_meta_gradient,
    train,
    tri_membership,
)

__all__ = [
    "ConfigError",
    "DataError",
    "ParameterError",
    "ParseError",
    "ShapeError",
    "annotate",
    "annotate_text",
    "class_names",
    "config_text",
    "eccentricity",
    "evaluate",
    "gen",
    "intensity_degree",
    "memberships",
    "robustness",
    "scalar_meta_gradient",
    "train",
    "tri_membership",
]
