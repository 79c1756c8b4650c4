"""Experiment config files: INI-style ``key = value`` text.

Example::

    [model]
    patch = 4
    stride = 4

    [layer1]
    atoms = 64
    sparsity = 2
    iterations = 20
    init = randperm

    [layer2]
    atoms = 96
    sparsity = 3
    init = best

    [depth]            ; only read by the depth-* commands
    levels = 10
    min_mm = 500
    max_mm = 10500
    mode = constant    ; or: mode
    scheme = concat    ; or: l1
    sparsity = 4
    concat_sparsity = 1  ; optional, defaults to sparsity
    sigma = 2.0
    l1_guard = 2.0
    train_stride = 8

Layer sections are ordered by their number. Keys omitted from a layer
fall back to the defaults below; seeds never appear in the file and are
derived from the run seed.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .deep_sparse import LayerConfig
from .depth import DepthQuantizer, FeatureMode, Scheme
from .dict_init import InitKind, InitStrategy
from .dict_learning import UnusedAtomPolicy
from .patchlab import PatchConfig

LAYER_DEFAULTS = {"iterations": "20", "init": "randperm", "unused": "replace"}
MODEL_KEYS = {"patch", "stride", "remove_mean", "abs_codes"}
DEPTH_KEYS = {"levels", "min_mm", "max_mm", "mode", "scheme", "sparsity", "concat_sparsity",
              "sigma", "l1_guard", "train_stride"}


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 63-bit child seed for ``keys`` under a run ``seed``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class DepthSettings:
    quantizer: DepthQuantizer = DepthQuantizer()
    mode: FeatureMode = FeatureMode.CONSTANT_BLOCK
    scheme: Scheme = Scheme.CONCAT_MAX_NNZ
    sparsity: int = 4
    sigma: float = 2.0
    l1_guard: float = 2.0
    train_stride: int = 8
    # concat voting favours few atoms: later picks fit noise across levels
    concat_sparsity: int | None = None

    def sparsity_for(self, scheme: Scheme) -> int:
        if scheme is Scheme.CONCAT_MAX_NNZ and self.concat_sparsity is not None:
            return self.concat_sparsity
        return self.sparsity


@dataclass(frozen=True)
class ExperimentConfig:
    patch: PatchConfig
    layers: tuple
    abs_codes: bool = False
    depth: DepthSettings = field(default_factory=DepthSettings)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Give layer ``i`` the child seed ``derive_seed(seed, i)``."""
        layers = tuple(
            replace(layer, init=InitStrategy(layer.init.kind, derive_seed(seed, i)))
            for i, layer in enumerate(self.layers, 1)
        )
        return replace(self, layers=layers)

    def with_first_init(self, kind: InitKind) -> "ExperimentConfig":
        first = replace(self.layers[0], init=InitStrategy(kind, self.layers[0].init.seed))
        return replace(self, layers=(first,) + tuple(self.layers[1:]))


def _layer(section) -> LayerConfig:
    values = {**LAYER_DEFAULTS, **section}
    unknown = set(values) - {"atoms", "sparsity", "iterations", "init", "unused"}
    if unknown:
        raise ValueError(f"[{section.name}]: unknown keys {sorted(unknown)}")
    try:
        return LayerConfig(
            atoms=int(values["atoms"]),
            sparsity=int(values["sparsity"]),
            iterations=int(values["iterations"]),
            init=InitStrategy(InitKind.parse(values["init"])),
            unused_atom_policy=UnusedAtomPolicy(values["unused"]),
        )
    except KeyError as exc:
        raise ValueError(f"[{section.name}]: missing key {exc}") from None


def _check_keys(name: str, section, allowed: set) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"[{name}]: unknown keys {sorted(unknown)}")


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), default_section="__none__")
    cp.read_string(text)
    layer_sections = []
    for name in cp.sections():
        m = re.fullmatch(r"layer(\d+)", name)
        if m:
            layer_sections.append((int(m.group(1)), cp[name]))
        elif name not in ("model", "depth"):
            raise ValueError(f"unknown config section [{name}]")
    if not layer_sections:
        raise ValueError("config defines no [layerN] sections")
    layers = tuple(_layer(s) for _, s in sorted(layer_sections, key=lambda t: t[0]))

    model = cp["model"] if cp.has_section("model") else {}
    _check_keys("model", model, MODEL_KEYS)
    patch_size = int(model.get("patch", "4"))
    patch = PatchConfig(patch_size, int(model.get("stride", str(patch_size))),
                        model.get("remove_mean", "false").lower() in ("1", "true", "yes"))
    abs_codes = model.get("abs_codes", "false").lower() in ("1", "true", "yes")

    depth = DepthSettings()
    if cp.has_section("depth"):
        d = cp["depth"]
        _check_keys("depth", d, DEPTH_KEYS)
        depth = DepthSettings(
            quantizer=DepthQuantizer(d.getint("levels", 10), d.getfloat("min_mm", 500.0),
                                     d.getfloat("max_mm", 10500.0)),
            mode=FeatureMode(d.get("mode", "constant")),
            scheme=Scheme(d.get("scheme", "concat")),
            sparsity=d.getint("sparsity", 4),
            sigma=d.getfloat("sigma", 2.0),
            l1_guard=d.getfloat("l1_guard", 2.0),
            train_stride=d.getint("train_stride", patch_size),
            concat_sparsity=d.getint("concat_sparsity", None),
        )
    return ExperimentConfig(patch, layers, abs_codes, depth)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return parse_config(f.read())
