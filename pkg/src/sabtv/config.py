"""Experiment configuration: INI-style files with strict key checking.

Unknown sections or keys are errors; silent typos in experiment configs are
how irreproducible results happen.  Sections:

``[problem]``
    kind = quadratic | logistic, agents; quadratics add dimension,
    condition_number, seed; logistic adds lambda, feature_scale, digit
    choices and either IDX paths (train_images/train_labels/test_images/
    test_labels) or CSV paths (train_csv/test_csv), plus optional
    train_limit/test_limit.
``[schedule]``
    kind = static | rotating | replayed, extra_edges, seed, path (replayed).
``[oracle]``
    kind = gaussian | minibatch, sigma, batch_size.
``[run]``
    algorithm, alpha (optional; resolved per problem kind when absent),
    iterations, record_every, seeds (comma list), certify, phi_tolerance, x0.
``[output]``
    dir (defaults under $SABTV_OUTPUT_ROOT or ./out).
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

OUTPUT_ROOT_ENV = "SABTV_OUTPUT_ROOT"

_SECTIONS = {
    "problem": {
        "kind", "agents", "dimension", "condition_number", "seed", "lambda",
        "feature_scale", "digit_pos", "digit_neg", "train_images", "train_labels",
        "test_images", "test_labels", "train_csv", "test_csv", "train_limit",
        "test_limit",
    },
    "schedule": {"kind", "extra_edges", "seed", "path"},
    "oracle": {"kind", "sigma", "batch_size"},
    "run": {
        "algorithm", "alpha", "iterations", "record_every", "seeds", "certify",
        "phi_tolerance", "x0",
    },
    "output": {"dir"},
}


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    problem_kind: str
    agents: int
    # quadratic
    dimension: int = 2
    condition_number: float = 10.0
    problem_seed: int = 0
    # logistic
    lam: float | None = None
    feature_scale: float = 255.0
    digit_pos: int = 3
    digit_neg: int = 7
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_csv: str | None = None
    test_csv: str | None = None
    train_limit: int | None = None
    test_limit: int | None = None
    # schedule
    schedule_kind: str = "rotating"
    extra_edges: int = 0
    schedule_seed: int = 0
    schedule_path: str | None = None
    # oracle
    oracle_kind: str = "gaussian"
    sigma: float = 0.0
    batch_size: int = 1
    # run
    algorithm: str = "sabtv"
    alpha: float | None = None
    iterations: int = 1000
    record_every: int | None = None
    seeds: tuple = (0,)
    certify: bool = False
    phi_tolerance: float = 1e-8
    x0: str = "zeros"
    # output
    output_dir: str | None = None
    source_path: str | None = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.problem_kind not in ("quadratic", "logistic"):
            raise ConfigError(f"problem kind must be quadratic or logistic, got {self.problem_kind!r}")
        if self.agents < 1:
            raise ConfigError("agents must be >= 1")
        if self.problem_kind == "logistic":
            has_idx = all(v is not None for v in (self.train_images, self.train_labels))
            has_csv = self.train_csv is not None
            if not (has_idx or has_csv):
                raise ConfigError("logistic problems need train_images/train_labels or train_csv")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")


def _get(parser, section, key, cast, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def _seed_list(raw: str) -> tuple:
    try:
        return tuple(int(s) for s in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad seed list {raw!r}") from exc


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    if not parser.has_section("problem"):
        raise ConfigError("missing [problem] section")

    kind = _get(parser, "problem", "kind", str, None)
    if kind is None:
        raise ConfigError("[problem] needs kind = quadratic | logistic")
    cfg = ExperimentConfig(
        problem_kind=kind.strip(),
        agents=_get(parser, "problem", "agents", int, 10),
        dimension=_get(parser, "problem", "dimension", int, 2),
        condition_number=_get(parser, "problem", "condition_number", float, 10.0),
        problem_seed=_get(parser, "problem", "seed", int, 0),
        lam=_get(parser, "problem", "lambda", float, None),
        feature_scale=_get(parser, "problem", "feature_scale", float, 255.0),
        digit_pos=_get(parser, "problem", "digit_pos", int, 3),
        digit_neg=_get(parser, "problem", "digit_neg", int, 7),
        train_images=_get(parser, "problem", "train_images", str, None),
        train_labels=_get(parser, "problem", "train_labels", str, None),
        test_images=_get(parser, "problem", "test_images", str, None),
        test_labels=_get(parser, "problem", "test_labels", str, None),
        train_csv=_get(parser, "problem", "train_csv", str, None),
        test_csv=_get(parser, "problem", "test_csv", str, None),
        train_limit=_get(parser, "problem", "train_limit", int, None),
        test_limit=_get(parser, "problem", "test_limit", int, None),
        schedule_kind=_get(parser, "schedule", "kind", str, "rotating"),
        extra_edges=_get(parser, "schedule", "extra_edges", int, 0),
        schedule_seed=_get(parser, "schedule", "seed", int, 0),
        schedule_path=_get(parser, "schedule", "path", str, None),
        oracle_kind=_get(parser, "oracle", "kind", str, "gaussian"),
        sigma=_get(parser, "oracle", "sigma", float, 0.0),
        batch_size=_get(parser, "oracle", "batch_size", int, 1),
        algorithm=_get(parser, "run", "algorithm", str, "sabtv"),
        alpha=_get(parser, "run", "alpha", float, None),
        iterations=_get(parser, "run", "iterations", int, 1000),
        record_every=_get(parser, "run", "record_every", int, None),
        seeds=_seed_list(_get(parser, "run", "seeds", str, "0")),
        certify=_get(parser, "run", "certify", bool, False),
        phi_tolerance=_get(parser, "run", "phi_tolerance", float, 1e-8),
        x0=_get(parser, "run", "x0", str, "zeros"),
        output_dir=_get(parser, "output", "dir", str, None),
        source_path=str(path),
    )
    return cfg


def apply_overrides(cfg: ExperimentConfig, alpha=None, seeds=None, out=None) -> ExperimentConfig:
    changes = {}
    if alpha is not None:
        changes["alpha"] = float(alpha)
    if seeds is not None:
        changes["seeds"] = _seed_list(seeds) if isinstance(seeds, str) else tuple(seeds)
    if out is not None:
        changes["output_dir"] = str(out)
    if not changes:
        return cfg
    noted = dict(cfg.overrides)
    noted.update({k: str(v) for k, v in changes.items()})
    changes["overrides"] = noted
    return replace(cfg, **changes)


def resolve_output_dir(cfg: ExperimentConfig, default_name: str) -> str:
    if cfg.output_dir:
        return cfg.output_dir
    root = os.environ.get(OUTPUT_ROOT_ENV, "out")
    return os.path.join(root, default_name)


def config_lines(cfg: ExperimentConfig):
    """Resolved key=value lines for the manifest."""
    for key, value in sorted(vars(cfg).items()):
        if key == "overrides":
            for ok, ov in sorted(value.items()):
                yield f"override.{ok}={ov}"
        else:
            yield f"{key}={value}"
