"""Python interface to the mtgp panel estimator."""

from ._mtgp import (
    ConfigError,
    DataError,
    Fit,
    Panel,
    bulk_ess,
    canonical_config,
    cost_per_avoided,
    counterfactuals,
    effect,
    fingerprint,
    fit,
    parse_panel,
    rhat,
    scm,
)


def load_panel(path, treated, last_pre_time=None):
    with open(path, encoding="utf-8") as fh:
        return parse_panel(fh.read(), treated, last_pre_time)


__all__ = [
    "ConfigError",
    "DataError",
    "Fit",
    "Panel",
    "bulk_ess",
    "canonical_config",
    "cost_per_avoided",
    "counterfactuals",
    "effect",
    "fingerprint",
    "fit",
    "load_panel",
    "parse_panel",
    "rhat",
    "scm",
]
