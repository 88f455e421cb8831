# SPDX-License-Identifier: Apache-2.0
"""Deep relation learning for age regression on paired images.

Thin wrappers over the native core. Configurations and reports are plain
dicts; anything not given falls back to the library defaults.
"""
import json as _json

from . import _drlreg
from ._drlreg import (  # noqa: F401
    RuntimeFailure,
    ValidationError,
    compute_metrics,
    ground_truth_relations,
    make_folds,
    mc_estimate,
    paired_t_test,
    rank_models,
    recover_pair,
    recover_self,
    recover_with_reference,
    significance_stars,
    student_t_two_sided_p,
    uncertainty,
)

__all__ = [
    "RuntimeFailure", "ValidationError", "compare_reports", "compute_metrics", "config_hash",
    "default_config", "describe_pipeline", "generate_dataset", "generate_image",
    "ground_truth_relations", "make_folds", "mc_estimate", "paired_t_test", "rank_models",
    "recover_pair", "recover_self", "recover_with_reference", "resolve_config", "run_cv",
    "significance_stars", "student_t_two_sided_p", "uncertainty",
]


def default_config():
    """The full default run configuration."""
    return _json.loads(_drlreg.default_config())


def resolve_config(config=None):
    """Fills defaults into a partial configuration and validates it."""
    return _json.loads(_drlreg.resolve_config(_json.dumps(config or {})))


def describe_pipeline(model=None):
    """Shapes and parameter counts of every stage, without allocating a model."""
    return _json.loads(_drlreg.describe_pipeline(_json.dumps(model or {})))


def config_hash(model=None):
    return _drlreg.config_hash(_json.dumps(model or {}))


def generate_image(tau, cohort="site-a", generator=None, subject_id="sub-00000"):
    """One rendered subject as a (channels, *extents) float32 array."""
    return _drlreg.generate_image(tau, cohort, _json.dumps(generator or {}), subject_id)


def generate_dataset(directory, generator=None):
    """Writes rasters and a manifest; returns the manifest path."""
    return _drlreg.generate_dataset(_json.dumps(generator or {}), str(directory))


def run_cv(manifest, config=None, out_dir=""):
    """Trains and evaluates the configured folds; returns the report dict."""
    return _json.loads(_drlreg.run_cv(_json.dumps(config or {}), str(manifest), str(out_dir)))


def compare_reports(reports, names=None, strategy="S3", baseline=0):
    names = names or [f"report{i}" for i in range(len(reports))]
    return _json.loads(_drlreg.compare_reports(names, [_json.dumps(r) for r in reports],
                                               strategy, baseline))
