"""Experiment configuration: JSON files, flag overrides, validation."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..model import POTTS, PotentialSpec

EXPERIMENTS = ("variance", "denoise", "diagnose")
RUN_SCHEMES = ("pg", "cb", "ts", "mixture")
TIME_UNITS = ("seconds", "iterations")


class ConfigError(ValueError):
    pass


def _variance_defaults() -> dict:
    return dict(rows=6, cols=6, n_states=8, potential={"kind": POTTS, "beta": 1.0, "alpha": 0.5},
                n_trials=100, n_iters=500)


def _denoise_defaults() -> dict:
    # alpha=None means "matched to the flip noise", see matched_alpha
    return dict(rows=32, cols=32, n_states=11, potential={"kind": POTTS, "beta": 2.0, "alpha": None},
                n_trials=50, n_iters=1000, flip_prob=0.2, n_rects=6)


def _diagnose_defaults() -> dict:
    return dict(rows=2, cols=2, n_states=2, potential={"kind": POTTS}, n_trials=100, n_iters=60,
                schemes=["cb", "ts"])


DEFAULTS = {"variance": _variance_defaults, "denoise": _denoise_defaults, "diagnose": _diagnose_defaults}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run.

    For ``diagnose``, ``n_trials`` is the number of random models, ``n_iters``
    the horizon of the rate fit and ``potential["kind"]`` the model family.
    ``burn_in=None`` means 10% of ``n_iters``; ``model_seed=None`` reuses
    ``seed``.
    """

    experiment: str
    seed: int
    rows: int = 6
    cols: int = 6
    n_states: int = 8
    potential: dict = field(default_factory=lambda: {"kind": POTTS, "beta": 1.0, "alpha": 0.5})
    schemes: list = field(default_factory=lambda: ["pg", "cb", "ts"])
    n_trials: int = 100
    n_iters: int = 500
    burn_in: int | None = None
    flip_prob: float = 0.2
    n_rects: int = 6
    model_seed: int | None = None
    image_seed: int | None = None
    noise_seed: int | None = None
    checkpoint_every: int = 10
    pg_rb: bool = False
    time_units: str = "seconds"
    out: str = "results"

    @property
    def effective_burn_in(self) -> int:
        return self.n_iters // 10 if self.burn_in is None else self.burn_in

    def potential_spec(self) -> PotentialSpec:
        pot = dict(self.potential)
        if pot.get("kind", POTTS) == POTTS and pot.get("alpha") is None:
            pot["alpha"] = matched_alpha(self.flip_prob, self.n_states)
        return PotentialSpec.from_dict(pot)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        for name in ("rows", "cols", "n_trials", "n_iters", "checkpoint_every"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer")
        if not isinstance(self.n_states, int) or self.n_states < 2:
            raise ConfigError("n_states must be an integer >= 2")
        if self.burn_in is not None and not 0 <= self.burn_in < self.n_iters:
            raise ConfigError("burn_in must lie in [0, n_iters)")
        if not isinstance(self.flip_prob, (int, float)) or not 0.0 <= self.flip_prob < 1.0:
            raise ConfigError("flip_prob must lie in [0, 1)")
        if self.n_rects < 0:
            raise ConfigError("n_rects must be non-negative")
        if not self.schemes:
            raise ConfigError("schemes must be nonempty")
        if len(set(self.schemes)) != len(self.schemes):
            raise ConfigError("schemes must not repeat")
        bad = [s for s in self.schemes if s not in RUN_SCHEMES]
        if bad:
            raise ConfigError(f"unknown schemes {bad}; choose from {RUN_SCHEMES}")
        if self.time_units not in TIME_UNITS:
            raise ConfigError(f"time_units must be one of {TIME_UNITS}")
        if not isinstance(self.potential, dict):
            raise ConfigError("potential must be an object")
        if self.experiment != "diagnose":
            try:
                self.potential_spec()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad potential: {exc}") from exc
        return self


def matched_alpha(p: float, n_states: int) -> float:
    """Unary strength equal to the log-odds of the flip channel keeping a label."""
    return math.log((1.0 - p) * (n_states - 1) / max(p, 1e-6))


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Layer experiment defaults, the JSON file at ``path`` and ``overrides``.

    ``overrides`` values that are ``None`` are ignored, so argparse namespaces
    can be passed through unfiltered.
    """
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    over = {k: v for k, v in (overrides or {}).items() if v is not None}
    exp = over.get("experiment", raw.get("experiment"))
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    base = DEFAULTS[exp]()
    merged = {"experiment": exp, **base, **raw, **over}
    layers = [d["potential"] for d in (base, raw, over) if isinstance(d.get("potential"), dict)]
    if layers and isinstance(merged["potential"], dict):
        # a file or flag naming a different kind starts from that kind alone
        kind = merged["potential"].get("kind", POTTS)
        merged["potential"] = {}
        for layer in layers:
            if layer.get("kind", kind) != kind:
                merged["potential"] = {}
                continue
            merged["potential"].update(layer)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"unknown config fields {unknown}")
    if "seed" not in merged:
        raise ConfigError("a master seed is required")
    try:
        cfg = ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if isinstance(cfg.schemes, str):
        cfg = replace(cfg, schemes=[s for s in cfg.schemes.split(",") if s])
    return cfg.validate()
