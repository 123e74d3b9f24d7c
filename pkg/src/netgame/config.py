"""Experiment configuration: JSON documents validated against a published schema.

A config file only needs the sections and keys it changes; everything else
comes from ``configs/default.json``.  The merged document is what gets
hashed and embedded into every output.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from .adversarial_channel import ChannelConfig, GameSpec
from .game_solver import LearningSchedule
from .lti_model import ControlWeights, PlantModel


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


def _read_packaged(*parts):
    return resources.files("netgame").joinpath(*parts).read_text(encoding="utf-8")


def schema():
    return json.loads(_read_packaged("schema", "experiment.schema.json"))


def default_document():
    return json.loads(_read_packaged("configs", "default.json"))


def shipped_config(name):
    """Path-like handle to one of the bundled configs (``default``, ``full_sweep``, ``ci_small``)."""
    return resources.files("netgame").joinpath("configs", f"{name}.json")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    return out


def _field_path(err):
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def validate(doc):
    """Raise :class:`ConfigError` listing every schema violation with its field path."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        lines = [f"{_field_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


def parse_text(text, source="<config>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be an object")
    return doc


def canonical_json(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    doc: dict

    @classmethod
    def from_document(cls, override=None, seed=None):
        # validate the override first so errors point at the user's own keys
        if override:
            partial = schema()
            partial.pop("required", None)
            for sec in partial["properties"].values():
                sec.pop("required", None)
            errs = sorted(
                jsonschema.Draft202012Validator(partial).iter_errors(override),
                key=lambda e: [str(p) for p in e.absolute_path],
            )
            if errs:
                raise ConfigError("invalid config:\n  " + "\n  ".join(f"{_field_path(e)}: {e.message}" for e in errs))
        doc = _merge(default_document(), override or {})
        if seed is not None:
            doc["sim"]["seed"] = int(seed)
        validate(doc)
        cfg = cls(doc)
        cfg.check_consistency()
        return cfg

    @classmethod
    def load(cls, path=None, seed=None):
        if path is None:
            return cls.from_document(None, seed)
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_document(parse_text(text, str(path)), seed)

    @property
    def hash(self):
        return hashlib.sha256(canonical_json(self.doc).encode()).hexdigest()

    @property
    def seed(self):
        return int(self.doc["sim"]["seed"])

    def section(self, name):
        return self.doc[name]

    # -- builders --------------------------------------------------------

    def model(self):
        m = self.doc["model"]
        try:
            return PlantModel(*(np.array(m[k], dtype=float) for k in ("A", "B", "C", "Q", "R")))
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None

    def weights(self):
        w = self.doc["weights"]
        try:
            return ControlWeights(np.array(w["W"], dtype=float), np.array(w["U"], dtype=float), float(w["eta"]))
        except ValueError as exc:
            raise ConfigError(f"weights: {exc}") from None

    def channel(self):
        c = self.doc["channel"]
        try:
            return ChannelConfig(float(c["lambda"]), float(c["lambda_a"]))
        except ValueError as exc:
            raise ConfigError(f"channel: {exc}") from None

    def game_spec(self, model=None, weights=None, N=None, Pbar=None, control=None):
        model = self.model() if model is None else model
        weights = self.weights() if weights is None else weights
        costs = self.doc["costs"]
        N = self.doc["game"]["N"] if N is None else N
        return GameSpec.build(model, weights, self.channel(), costs["c_s"], costs["c_a"], N, Pbar=Pbar, control=control)

    def schedule(self):
        ln = self.doc["learning"]
        return LearningSchedule(
            alpha_exponent=ln["alpha_exponent"],
            alpha_scale=ln.get("alpha_scale"),
            epsilon_floor=ln["epsilon_floor"],
            epsilon_decay=ln["epsilon_decay"],
            steps_per_episode=ln["steps_per_episode"],
        )

    def x0_cov(self):
        c = self.doc["sim"].get("x0_cov")
        return None if c is None else np.array(c, dtype=float)

    def cost_grid(self):
        """``(c_s, c_a)`` pairs of the sweep, ``c_s`` outer; raises on an empty grid."""
        sw = self.doc["sweep"]
        step = float(sw["step"])

        def axis(lo, hi):
            n = int(np.floor((hi - lo) / step + 1e-9)) + 1 if hi >= lo else 0
            return [lo + i * step for i in range(n)]

        cs = axis(*sw["cs_range"])
        ca = axis(*sw["ca_range"])
        if not cs or not ca:
            raise ConfigError("sweep: empty cost grid (range lower bound exceeds upper bound)")
        return [(c, a) for c in cs for a in ca]

    def verify_settings(self):
        return self.doc.get("verify", {})

    def check_consistency(self):
        """Cross-field checks the schema cannot express (matrix shapes, channel ordering)."""
        self.model()
        w = self.weights()
        try:
            w.check_against(self.model())
        except ValueError as exc:
            raise ConfigError(f"weights: {exc}") from None
        self.channel()
        x0 = self.x0_cov()
        n = len(self.doc["model"]["A"])
        if x0 is not None and x0.shape != (n, n):
            raise ConfigError(f"sim/x0_cov: expected shape {(n, n)}, got {x0.shape}")
