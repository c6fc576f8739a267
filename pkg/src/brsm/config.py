"""Run configuration: a flat dataclass read from and written to INI-style text.

Every field belongs to one section; unknown sections or keys are errors so a
misspelled key never silently falls back to a default.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from typing import Optional

from .layer import PARTITION_KINDS, STRATEGIES, ConfigError, PartitionSpec


def _opt(section, default, doc):
    return field(default=default, metadata={"section": section, "doc": doc})


@dataclass
class RunConfig:
    # [run]
    task: str = _opt("run", "ssmnist", "ssmnist or lm")
    seed: int = _opt("run", 0, "master seed for every random draw")
    steps: int = _opt("run", 20000, "training step budget (one step advances every batch stream)")
    eval_every: int = _opt("run", 2000, "steps between held-out evaluations (0 disables)")
    eval_steps: int = _opt("run", 2000, "length of each held-out evaluation stream")
    eval_batch: int = _opt("run", 8, "parallel held-out streams")
    metrics_dir: str = _opt("run", "runs", "directory for metrics files and checkpoints")
    flush_every: int = _opt("run", 1, "metric records buffered before a flush")
    dtype: str = _opt("run", "float64", "float64, or float32 for faster non-gradcheck runs")

    # [model]
    m: int = _opt("model", 200, "number of groups (mini-columns)")
    n: int = _opt("model", 1, "cells per group; 1 gives the flattened layer")
    k: int = _opt("model", 24, "winning groups per step")
    epsilon: float = _opt("model", 0.85, "fixed memory decay when decay is not trainable")
    trainable_decay: bool = _opt("model", False, "learn a per-cell decay through a sigmoid")
    decay_ceiling: float = _opt("model", 0.99, "upper clamp for the learned decay")
    duty_rate: float = _opt("model", 0.005, "duty-cycle moving-average rate")
    strategy: str = _opt("model", "boost", "boost, inhibition or none")
    boost_strength: float = _opt("model", 1.2, "initial boost strength (beta)")
    boost_factor: float = _opt("model", 0.85, "per-epoch multiplier on boost strength")
    epoch_steps: int = _opt("model", 1000, "steps per epoch for the boost schedule")
    inhibition_decay: float = _opt("model", 0.5, "per-step decay of the inhibition trace")
    inhibition_strength: float = _opt("model", 10.0, "weight of the inhibition trace in selection")
    partitions: str = _opt("model", "", "e.g. feed-forward:0.07,recurrent:0.85,integrated:0.08")

    # [training]
    batch_size: int = _opt("training", 16, "parallel training streams")
    learning_rate: float = _opt("training", 5e-4, "Adam learning rate for the layer")
    decoder_l2: float = _opt("training", 0.0, "L2 coefficient on the decoder weights")
    forget_prob: float = _opt("training", 0.0, "per-step, per-stream probability of clearing memory")
    rsm_freeze_step: Optional[int] = _opt("training", None, "step after which only the readout trains")

    # [readout]
    hidden_size: int = _opt("readout", 200, "classifier hidden units")
    readout_lr: float = _opt("readout", 1e-3, "Adam learning rate for the classifier")
    readout_input: str = _opt("readout", "y", "y (sparse activity) or psi (memory trace)")
    uniform_mass: float = _opt("readout", 0.01, "interpolation weight of the uniform distribution")
    cache_weight: float = _opt("readout", 0.0, "interpolation weight of the word cache")
    cache_decay: float = _opt("readout", 0.99, "per-step word cache decay")

    # [data]
    grammar: str = _opt("data", "two-by-four", "builtin grammar name or grammar file path")
    observation: str = _opt("data", "fixed", "fixed (one image per label) or random")
    images: str = _opt("data", "synthetic", "synthetic, or a directory holding MNIST IDX files")
    synthetic_noise: float = _opt("data", 0.1, "per-pixel noise of the synthetic image pool")
    synthetic_per_label: int = _opt("data", 50, "images per label in the synthetic pool")
    corpus: str = _opt("data", "", "directory with train.txt/valid.txt/test.txt, or markov / repeat")
    embedding: str = _opt("data", "synthetic", "synthetic, or path to a text embedding file")

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.task in ("ssmnist", "lm"), f"unknown task {self.task!r}")
        need(self.dtype in ("float64", "float32"), "dtype must be float64 or float32")
        for name in ("m", "n", "k", "steps", "batch_size", "hidden_size", "epoch_steps",
                     "eval_batch", "flush_every"):
            need(getattr(self, name) >= 1, f"{name} must be >= 1")
        need(self.eval_every >= 0 and self.eval_steps >= 1, "bad evaluation schedule")
        need(self.k <= self.m, "k must not exceed m")
        need(0.0 <= self.epsilon <= self.decay_ceiling < 1.0, "need 0 <= epsilon <= decay_ceiling < 1")
        need(0.0 < self.duty_rate < 1.0, "duty_rate must lie in (0, 1)")
        need(self.strategy in STRATEGIES, f"strategy must be one of {STRATEGIES}")
        need(self.boost_strength >= 0, "boost_strength must be >= 0")
        need(0.0 < self.boost_factor <= 1.0, "boost_factor must lie in (0, 1]")
        need(0.0 <= self.forget_prob <= 1.0, "forget_prob must lie in [0, 1]")
        need(self.learning_rate > 0 and self.readout_lr > 0, "learning rates must be positive")
        need(self.decoder_l2 >= 0, "decoder_l2 must be >= 0")
        need(self.rsm_freeze_step is None or self.rsm_freeze_step >= 0, "rsm_freeze_step must be >= 0")
        need(self.readout_input in ("y", "psi"), "readout_input must be y or psi")
        need(self.uniform_mass >= 0 and self.cache_weight >= 0
             and self.uniform_mass + self.cache_weight <= 1, "bad mix weights")
        need(0.0 <= self.cache_decay <= 1.0, "cache_decay must lie in [0, 1]")
        need(self.observation in ("fixed", "random"), "observation must be fixed or random")
        need(self.synthetic_noise >= 0 and self.synthetic_per_label >= 1, "bad synthetic pool")
        if self.partitions:
            self.partition_spec()

    def partition_spec(self):
        if not self.partitions:
            return None
        fractions = {}
        for part in self.partitions.split(","):
            kind, _, frac = part.strip().partition(":")
            if kind not in PARTITION_KINDS:
                raise ConfigError(f"unknown partition kind {kind!r}")
            try:
                fractions[kind] = float(frac)
            except ValueError:
                raise ConfigError(f"bad partition fraction {frac!r}") from None
        if abs(sum(fractions.values()) - 1.0) > 1e-6:
            raise ConfigError("partition fractions must sum to 1")
        return PartitionSpec.from_fractions(fractions, self.m * self.n)

    def to_text(self):
        sections = {}
        for f in fields(self):
            sections.setdefault(f.metadata["section"], []).append(f)
        lines = []
        for section, flist in sections.items():
            lines.append(f"[{section}]")
            for f in flist:
                lines.append(f"# {f.metadata['doc']}")
                lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def as_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text, base=None):
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        by_name = {f.name: f for f in fields(cls)}
        values = (base or cls()).as_dict()
        for section in parser.sections():
            for key, raw in parser.items(section):
                f = by_name.get(key)
                if f is None:
                    raise ConfigError(f"unknown config key {section}.{key}")
                if f.metadata["section"] != section:
                    raise ConfigError(f"key {key} belongs in [{f.metadata['section']}], not [{section}]")
                values[key] = _parse(f, raw)
        return cls(**values)

    def with_overrides(self, pairs):
        """Apply ``key=value`` strings (CLI overrides)."""
        by_name = {f.name: f for f in fields(self)}
        values = self.as_dict()
        for pair in pairs:
            key, sep, raw = pair.partition("=")
            key = key.strip()
            if not sep or key not in by_name:
                raise ConfigError(f"unknown override {pair!r}")
            values[key] = _parse(by_name[key], raw.strip())
        return type(self)(**values)


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(f, raw):
    raw = raw.strip()
    kind = f.type
    try:
        if kind in (bool, "bool"):
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (Optional[int], "Optional[int]"):
            return None if raw.lower() in ("", "none") else int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {f.name}") from None


# Reference hyper-parameter sets; keys not listed keep the defaults above.
PRESETS = {
    "paper-lm": dict(
        task="lm", batch_size=300, forget_prob=0.025, decoder_l2=0.00001, m=1500, n=1, k=80,
        boost_strength=1.2, boost_factor=0.85, hidden_size=1200, uniform_mass=0.01,
        cache_weight=0.07, cache_decay=0.99, trainable_decay=True, embedding="synthetic",
    ),
    "paper-ssmnist": dict(
        task="ssmnist", batch_size=300, decoder_l2=0.0, m=1000, n=1, k=120,
        boost_strength=1.2, boost_factor=0.85, hidden_size=1200, grammar="paper-8x9",
        observation="random", images="mnist",
    ),
    # desk-scale settings sized to finish on one CPU core
    "desk-ssmnist-fixed": dict(
        task="ssmnist", steps=20000, eval_every=1000, m=200, k=24, batch_size=16,
        grammar="two-by-four", observation="fixed", images="synthetic",
    ),
    "desk-ssmnist-noisy": dict(
        task="ssmnist", steps=50000, eval_every=2000, m=200, k=24, batch_size=16,
        trainable_decay=True, grammar="two-by-four", observation="random", images="synthetic",
        synthetic_noise=0.1,
    ),
    "desk-lm": dict(
        task="lm", steps=600, eval_every=0, m=100, k=12, batch_size=16, hidden_size=200,
        epoch_steps=100, corpus="markov", embedding="synthetic",
    ),
}


def preset(name):
    try:
        return RunConfig(**PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
