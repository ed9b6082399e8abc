"""Declarative run configuration.

Line-oriented ``key = value`` UTF-8 files with ``#`` comments.  Every key
has a documented default below; unknown keys are rejected.  Precedence,
lowest to highest: built-in defaults, config file, command-line
overrides (``--set key=value``).  parse -> serialize -> parse is the
identity.
"""

from dataclasses import fields as dc_fields

from .errors import ConfigError
from .losses import LossConfig
from .pipeline import TrainConfig

# key -> (default, help)
DEFAULTS = {
    # variant and schedule
    "variant": ("DIAT-A", "training variant: DIAT, DIAT-A, DIAT-A0, DIAT1, DIAT2, DIAT3"),
    "lr_transform": (0.0, "transform net learning rate; 0 resolves from variant"),
    "lr_discriminator": (0.0, "discriminator learning rate; 0 resolves from variant"),
    "dstep": (1, "discriminator updates per outer iteration"),
    "tstep": (2, "transform updates per outer iteration"),
    "batch_size": (16, "minibatch size for all trainers"),
    "max_iters": (3000, "maximum outer iterations of adversarial training"),
    "pretrain_transform_steps": (1500, "autoencoder pretraining steps"),
    "pretrain_disc_steps": (400, "discriminator pretraining steps"),
    "embedder_steps": (800, "identity embedder training steps"),
    "regularizer_steps": (600, "steps for each of the g and f regularizer nets"),
    "enhancer_steps": (2400, "enhancement net training steps"),
    "seed": (0, "master seed; all randomness derives from it"),
    "scale_factor": (0.25, "width/resolution scale (1.0 = full 128x128)"),
    "attribute": ("glasses", "attribute to transfer"),
    "attribute_target": (False, "desired attribute value after transfer"),
    "enhancement": ("local", "enhancement mode: local, global or none"),
    "input_set_size": (2000, "max size of the transfer input pool"),
    "heldout_fraction": (0.2, "fraction of the input pool held out for evaluation"),
    "eval_every": (10, "iterations between probe evaluations"),
    "plateau_window": (200, "iteration window for plateau detection"),
    "plateau_min_delta": (0.005, "min attribute-score delta to count as progress"),
    "checkpoint_every": (100, "iterations between state checkpoints"),
    # loss weights
    "lam": (0.1, "identity loss weight (lambda)"),
    "gamma": (0.001, "smooth regularizer weight"),
    "w4": (0.5, "perceptual weight on the conv4 feature map"),
    "w5": (0.5, "perceptual weight on the conv5 feature map"),
    "beta0": (0.1, "local enhancement weight, conv1 features"),
    "beta1": (0.5, "local enhancement weight, conv2 features"),
    "beta2": (1.0, "local enhancement weight, conv3 features"),
    "sigma": (1.8, "Gaussian blur std for the global enhancer"),
    "generator_loss_form": ("non_saturating", "generator adversarial term: non_saturating or saturating"),
    "adaptive_in_d_update": (False, "include the adaptive identity term in D updates"),
    # data generation
    "n_samples": (2000, "synthetic dataset size"),
    "n_identities": (64, "distinct synthetic identities"),
    # paths and logging
    "dataset_root": ("data", "directory holding the generated dataset"),
    "checkpoint_dir": ("checkpoints", "directory for model checkpoints"),
    "report_dir": ("reports", "directory for reports, transfers and metrics"),
    "verbosity": (1, "0 = quiet, 1 = progress lines, 2 = chatty"),
}

_LOSS_KEYS = ("lam", "gamma", "w4", "w5", "beta0", "beta1", "beta2", "sigma",
              "generator_loss_form", "adaptive_in_d_update")
_TRAIN_KEYS = tuple(f.name for f in dc_fields(TrainConfig) if f.name != "loss")


def _parse_value(key, text):
    default = DEFAULTS[key][0]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(
            f"config key {key!r}: cannot parse {text!r} as "
            f"{type(default).__name__}") from None


class RunConfig:
    """All run settings as attributes; see DEFAULTS for keys and meaning."""

    def __init__(self, **overrides):
        for key, (default, _) in DEFAULTS.items():
            setattr(self, key, default)
        self.update(overrides)

    def update(self, mapping):
        for key, value in mapping.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(value, str) and not isinstance(DEFAULTS[key][0], str):
                value = _parse_value(key, value)
            setattr(self, key, value)
        return self

    @classmethod
    def parse(cls, text):
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            setattr(cfg, key, _parse_value(key, value))
        return cfg

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def serialize(self):
        lines = []
        for key in DEFAULTS:
            value = getattr(self, key)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    def as_dict(self):
        return {key: getattr(self, key) for key in DEFAULTS}

    def loss_config(self):
        return LossConfig(**{k: getattr(self, k) for k in _LOSS_KEYS})

    def train_config(self):
        kw = {k: getattr(self, k) for k in _TRAIN_KEYS}
        return TrainConfig(loss=self.loss_config(), **kw)

    @property
    def image_size(self):
        from .nn import scaled_size
        return scaled_size(self.scale_factor)
