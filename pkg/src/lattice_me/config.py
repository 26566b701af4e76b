"""INI-style configuration files.

Sections:

``[simulation]``
    Any :class:`~lattice_me.simulate.SimConfig` field.
``[fit]``
    Sampler schedule and options (:class:`FitConfig`).
``[priors]``
    Overrides of :class:`~lattice_me.hier.HierPriors` fields.
``[study]``
    Replicate count, schedule, models and worker count.
``[scenario NAME]``
    One study scenario: ``SimConfig`` overrides plus ``h_A``, ``h_B``,
    ``beta_prior_var`` and ``ssvs``.

Unknown sections or keys and invalid values raise
:class:`~lattice_me.errors.ConfigError` with the offending line.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .harness import MODELS, Scenario, StudyConfig
from .hier import HierPriors
from .simulate import SimConfig


@dataclass(frozen=True)
class FitConfig:
    model: str = "hier"
    n_iter: int = 6000
    burn_in: int = 2000
    thin: int = 1
    seed: int = 0
    ssvs: bool = False
    h_A: int = 6
    h_B: int = 5
    n_b_per_side: int = 0          # 0: infer from the number of B sites
    beta_prior_var: float = 25.0 ** 2
    weight: str = "peak"           # B weights for the fixed-location models

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}", field="model")
        if not 0 <= self.burn_in < self.n_iter:
            raise ConfigError("need 0 <= burn_in < n_iter", field="burn_in")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1", field="thin")
        if self.h_A < 0 or self.h_B < 0:
            raise ConfigError("half-widths must be non-negative", field="h_A")
        if not self.beta_prior_var > 0:
            raise ConfigError("beta_prior_var must be positive", field="beta_prior_var")
        if self.weight not in ("peak", "amplitude"):
            raise ConfigError("weight must be 'peak' or 'amplitude'", field="weight")


@dataclass
class Config:
    simulation: SimConfig = field(default_factory=SimConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    priors: dict = field(default_factory=dict)
    study: StudyConfig | None = None
    source: str | None = None

    def as_dict(self) -> dict:
        d = {"simulation": asdict(self.simulation), "fit": asdict(self.fit),
             "priors": dict(sorted(self.priors.items()))}
        if self.study is not None:
            st = self.study
            d["study"] = {"n_replicates": st.n_replicates, "n_iter": st.n_iter,
                          "burn_in": st.burn_in, "thin": st.thin, "models": list(st.models),
                          "seed": st.seed,
                          "scenarios": [asdict(s) for s in st.scenarios]}
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; stable for identical settings."""
        blob = json.dumps(self.as_dict(), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()


_STUDY_KEYS = {"n_replicates": int, "n_iter": int, "burn_in": int, "thin": int, "jobs": int,
               "seed": int, "models": "list"}
_SCENARIO_EXTRA = {"h_A": int, "h_B": int, "beta_prior_var": float, "ssvs": bool}


def _types(cls):
    return {f.name: f.type for f in fields(cls)}


def _convert(raw: str, kind, key, line):
    kind = {"int": int, "float": float, "bool": bool, "str": str}.get(kind, kind)
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "list":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}", field=key, line=line) from None


def _line_index(text: str) -> dict:
    """``(section, key) -> line number`` for error messages."""
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = i
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = i
    return out


def _section_values(parser, section, schema, lines):
    vals = {}
    for key, raw in parser.items(section):
        line = lines.get((section, key))
        name = next((k for k in schema if k.lower() == key), None)
        if name is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", field=key, line=line)
        vals[name] = _convert(raw, schema[name], name, line)
    return vals


def _wrap(ctor, vals, section, lines):
    try:
        return ctor(**vals)
    except ConfigError as exc:
        line = lines.get((section, (exc.field or "").lower()), lines.get((section, None)))
        raise ConfigError(str(exc), field=exc.field, line=line) from None
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}", line=lines.get((section, None))) from None


def parse_config_text(text: str, source: str | None = None) -> Config:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines = _line_index(text)
    sim_schema = _types(SimConfig)
    fit_schema = _types(FitConfig)
    prior_schema = _types(HierPriors)

    cfg = Config(source=source)
    sim_vals, fit_vals, study_vals, scenarios = {}, {}, None, []
    for section in parser.sections():
        if section == "simulation":
            sim_vals = _section_values(parser, section, sim_schema, lines)
        elif section == "fit":
            fit_vals = _section_values(parser, section, fit_schema, lines)
        elif section == "priors":
            cfg.priors = _section_values(parser, section, prior_schema, lines)
        elif section == "study":
            study_vals = _section_values(parser, section, _STUDY_KEYS, lines)
        elif section.startswith("scenario"):
            name = section[len("scenario"):].strip() or f"scenario{len(scenarios) + 1}"
            vals = _section_values(parser, section, {**sim_schema, **_SCENARIO_EXTRA}, lines)
            extra = {k: vals.pop(k) for k in list(vals) if k in _SCENARIO_EXTRA}
            scenarios.append((section, Scenario(name, vals, **extra)))
        else:
            raise ConfigError(f"unknown section [{section}]", line=lines.get((section, None)))

    cfg.simulation = _wrap(SimConfig, sim_vals, "simulation", lines)
    cfg.fit = _wrap(FitConfig, fit_vals, "fit", lines)
    if cfg.priors:
        _wrap(HierPriors, cfg.priors, "priors", lines)
    for section, sc in scenarios:  # overrides must give a valid simulation too
        _wrap(cfg.simulation.replace, sc.overrides, section, lines)
    if study_vals is not None or scenarios:
        study_vals = dict(study_vals or {})
        study_vals.setdefault("scenarios", [sc for _, sc in scenarios] or [Scenario("baseline")])
        cfg.study = _wrap(lambda **kw: StudyConfig(base=cfg.simulation, **kw), study_vals,
                          "study", lines)
    return cfg


def parse_config(path) -> Config:
    path = Path(path)
    text = path.read_text()  # missing file -> OSError
    return parse_config_text(text, str(path))


def shipped_config(name: str) -> Path:
    """Path to a config bundled with the package (``defaults.ini``, ...)."""
    return Path(str(resources.files("lattice_me") / "data" / name))


__all__ = ["Config", "FitConfig", "parse_config", "parse_config_text", "shipped_config"]
