"""Experiment configuration: INI-style sections with documented defaults; ``run.seed`` is required."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass

from .integrators import ORDERS, SCHEMES, IntegratorSpec
from .lattice import TorusLattice
from .measure import GaussianMeasure
from .model import LatticeModel, PrecisionStencil

REQUIRED = object()

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "lattice": {"N": (int, 1), "L": (int, 16)},
    "model": {"stencil": (str, "diagonal"), "b": (float, 1.0), "beta": (float, 0.0)},
    "measure": {"r": (float, 1.0)},
    "integrator": {"scheme": (str, "split_exact"), "dt": (float, 0.01), "order": (str, "strang")},
    "run": {
        "T": (float, 1.0),
        "epochs": (int, 10),
        "ntraj": (int, 100),
        "seed": (int, REQUIRED),
        "threads": (int, 0),
        "observables": (str, "x0; x0^2"),
        "start": (str, "measure"),
        "backend": (str, ""),
    },
    "output": {"dir": (str, "."), "formats": (str, "csv,json")},
    "oracle": {"form": (str, "torus"), "t": (float, 1.0), "times": (str, "0, 0.5, 1, 2, 4"), "f": (str, "x0^2")},
    "check": {
        "oracle_L": (int, 64),
        "balance_times": (str, "0.5, 1"),
        "decay_times": (str, "1, 1.5, 2, 3, 4"),
        "clt_T": (str, "10, 20, 50"),
        "clt_dt": (float, 0.1),
        "beta_T": (float, 50.0),
    },
}

STARTS = ("measure", "spike")
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending ``section.key``."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _float_list(key: str, text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(key, f"expected a comma-separated list of numbers, got {text!r}") from None


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("file", f"unreadable config: {exc}") from None
        values: dict[str, dict[str, object]] = {}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(section, f"unknown section; known sections are {sorted(SCHEMA)}")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{section}.{key}", "unknown key")
        for section, keys in SCHEMA.items():
            values[section] = {}
            for key, (typ, default) in keys.items():
                name = f"{section}.{key}"
                if parser.has_option(section, key):
                    raw = parser.get(section, key).strip()
                    try:
                        values[section][key] = typ(raw) if typ is not str else raw
                    except ValueError:
                        raise ConfigError(name, f"expected {typ.__name__}, got {raw!r}") from None
                elif default is REQUIRED:
                    raise ConfigError(name, "required key is missing")
                else:
                    values[section][key] = default
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("file", f"cannot read {path}: {exc}") from None
        return cls.from_text(text)

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".")
        return self.values[section][key]

    def validate(self) -> None:
        v = self.values
        if v["lattice"]["N"] not in (1, 2, 3):
            raise ConfigError("lattice.N", f"dimension must be 1, 2 or 3, got {v['lattice']['N']}")
        if v["lattice"]["L"] < 4:
            raise ConfigError("lattice.L", f"side must be at least 4, got {v['lattice']['L']}")
        if not v["model"]["b"] > 0:
            raise ConfigError("model.b", "must be positive")
        if v["model"]["beta"] < 0:
            raise ConfigError("model.beta", "must be nonnegative")
        if not v["measure"]["r"] > 0:
            raise ConfigError("measure.r", "must be positive")
        if v["integrator"]["scheme"] not in SCHEMES:
            raise ConfigError("integrator.scheme", f"choose one of {SCHEMES}")
        if v["integrator"]["order"] not in ORDERS:
            raise ConfigError("integrator.order", f"choose one of {ORDERS}")
        if not v["integrator"]["dt"] > 0:
            raise ConfigError("integrator.dt", "must be positive")
        if v["run"]["ntraj"] < 1:
            raise ConfigError("run.ntraj", f"must be at least 1, got {v['run']['ntraj']}")
        if v["run"]["T"] < 0:
            raise ConfigError("run.T", "must be nonnegative")
        if v["run"]["epochs"] < 1:
            raise ConfigError("run.epochs", "must be at least 1")
        if v["run"]["seed"] < 0:
            raise ConfigError("run.seed", "must be nonnegative")
        if v["run"]["start"] not in STARTS:
            raise ConfigError("run.start", f"choose one of {STARTS}")
        if v["run"]["backend"] not in ("", "numba", "numpy"):
            raise ConfigError("run.backend", "choose numba, numpy or leave empty")
        if v["oracle"]["form"] not in ("torus", "infinite"):
            raise ConfigError("oracle.form", "choose torus or infinite")
        for fmt in self.formats:
            if fmt not in FORMATS:
                raise ConfigError("output.formats", f"unknown format {fmt!r}")
        for key in ("oracle.times", "check.balance_times", "check.decay_times", "check.clt_T"):
            if not self.floats(key):
                raise ConfigError(key, "list must not be empty")
        ratio = v["run"]["T"] / v["integrator"]["dt"]
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError("run.T", "must be a multiple of integrator.dt")
        ratio /= v["run"]["epochs"]
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError("run.epochs", "T / epochs must be a multiple of integrator.dt")
        try:
            self.model()
        except ValueError as exc:
            raise ConfigError("model.stencil", str(exc)) from None

    def floats(self, dotted: str) -> list[float]:
        return _float_list(dotted, self[dotted])

    @property
    def formats(self) -> list[str]:
        return [f.strip() for f in self["output.formats"].split(",") if f.strip()]

    def canonical(self) -> str:
        lines = []
        for section in SCHEMA:
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                val = self.values[section][key]
                lines.append(f"{key} = {format(val, '.17g') if isinstance(val, float) else val}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        """Digest of the resolved configuration, excluding output and thread settings."""
        text = "\n".join(l for l in self.canonical().splitlines()
                         if not l.startswith(("dir =", "formats =", "threads =", "backend =")))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    # builders ------------------------------------------------------------------------------
    def lattice(self, side: int | None = None) -> TorusLattice:
        return TorusLattice(self["lattice.N"], side or self["lattice.L"])

    def stencil(self) -> PrecisionStencil:
        text = self["model.stencil"].strip()
        N = self["lattice.N"]
        if text == "diagonal":
            return PrecisionStencil.diagonal(self["model.b"], N)
        return PrecisionStencil.parse(text, N)

    def model(self, side: int | None = None) -> LatticeModel:
        return LatticeModel(self.lattice(side), self.stencil())

    def measure(self, side: int | None = None) -> GaussianMeasure:
        return GaussianMeasure(self.model(side), self["measure.r"])

    def spec(self, beta: float | None = None) -> IntegratorSpec:
        return IntegratorSpec(self["integrator.scheme"], self["integrator.dt"], self["integrator.order"],
                              self["model.beta"] if beta is None else beta)

    @property
    def threads(self) -> int | None:
        return self["run.threads"] or None

    @property
    def backend(self) -> str | None:
        return self["run.backend"] or None
