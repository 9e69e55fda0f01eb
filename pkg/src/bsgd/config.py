"""Experiment configuration files.

Grammar: INI-style sections, ``key = value`` lines, ``#`` comments (whole
line or trailing).  Parsing is done by :mod:`configparser`; this module adds
the schema, types and line-numbered errors.  Example::

    [geometry]
    volume_side = 16
    angles = 0:360:10          # start:stop:step, stop excluded

    [partition]
    M = 4
    N = 2

    [method]
    name = bsgd

    [fractions]
    alpha = 1
    gamma = 1

    [tuning]
    mu0 = 0.00048828125

    [noise]
    snr_db = 17.5
    seed = 0

    [run]
    epochs = 5000
    seed = 0
"""

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .partition import SamplingFractions, select_alpha_gamma
from .solver import TuningConstants

METHODS = ("bsgd", "bsgd_im", "bsgd_ran", "bsgd_tv", "sirt", "cav", "gd", "gd_bb",
           "sag", "svrg", "ista", "fista")
BLOCK_METHODS = ("bsgd", "bsgd_im", "bsgd_ran", "bsgd_tv")
TV_METHODS = ("bsgd_tv", "ista", "fista")


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fraction(text):
    return Fraction(text.strip())


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _angles(text):
    """``start:stop:step`` (stop excluded) or an explicit list of degrees."""
    text = text.strip()
    if ":" in text:
        parts = [float(t) for t in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError("angle range must be start:stop:step with step > 0")
        return tuple(float(a) for a in np.arange(*parts))
    return tuple(float(t) for t in text.replace(",", " ").split())


# section -> key -> (parser, default); a default of REQUIRED must be given
REQUIRED = object()
SCHEMA = {
    "geometry": {
        "mode": (str, "fan2d"),
        "source_to_center": (float, 50.0),
        "center_to_detector": (float, 50.0),
        "detector_elements": (int, 30),
        "detector_pitch": (float, 1.0),
        "angles": (_angles, REQUIRED),
        "volume_side": (int, REQUIRED),
        "voxel_size": (float, 1.0),
        "system_scale": (float, 1.0),
    },
    "partition": {
        "M": (int, REQUIRED),
        "N": (int, REQUIRED),
        "tiles_per_angle": (int, 1),
        "row_unit": (str, "angle"),
    },
    "method": {
        "name": (str, REQUIRED),
        "relaxation": (float, 1.0),
        "batch": (int, 1),
        "im_final_phase": (float, 0.1),
        "prox_iters": (int, 20),
        "prox_tol": (float, 1e-4),
    },
    "fractions": {
        "node_num": (int, None),
        "alpha": (_fraction, None),
        "gamma": (_fraction, None),
    },
    "tuning": {
        "mu0": (float, REQUIRED),
        "enabled": (_bool, False),
        "epsilon": (float, 0.05),
        "delta": (float, 0.4),
        "t1": (float, 0.5),
        "t2": (float, 0.0),
        "period": (int, None),
        "criteria": (str, "1+2"),
    },
    "tv": {
        "lambda": (float, REQUIRED),
    },
    "phantom": {
        "kind": (str, "shepp_logan"),
        "intensity_scale": (float, 1.0),
    },
    "noise": {
        "snr_db": (float, REQUIRED),
        "seed": (int, REQUIRED),
    },
    "run": {
        "epochs": (int, REQUIRED),
        "seed": (int, REQUIRED),
        "metric_period": (int, 1),
        "output_dir": (str, "output"),
        "name": (str, None),
        "workers": (int, 1),
        "plots": (_bool, False),
        "oracle": (_bool, True),
        "node_storage_budget": (int, None),
    },
    "storage": {
        "budget": (int, REQUIRED),
        "M_values": (_ints, (2, 4, 8, 16, 32, 64, 135)),
        "N_values": (_ints, (2, 4, 8, 16)),
    },
}

RUN_SECTIONS = ("geometry", "partition", "method", "tuning", "noise", "run")
STORAGE_SECTIONS = ("geometry", "storage")

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^#;=\s][^=]*?)\s*=")


def _line_index(text):
    """``{(section, key): line}`` and ``{section: line}`` for error messages."""
    keys, sections = {}, {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            sections.setdefault(section, n)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            keys.setdefault((section, m.group(1)), n)
    return keys, sections


@dataclass
class ExperimentConfig:
    sections: dict
    text_hash: str
    source: str | None = None
    kind: str = "run"
    extra: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.sections[section]

    # convenience views -------------------------------------------------
    @property
    def method(self):
        return self.sections["method"]["name"]

    @property
    def name(self):
        run = self.sections.get("run", {})
        if run.get("name"):
            return run["name"]
        if self.source:
            return Path(self.source).stem
        return f"{self.method}-{self.text_hash[:8]}"

    def geometry_kwargs(self):
        g = dict(self.sections["geometry"])
        g.pop("system_scale")
        return g

    @property
    def fractions(self):
        f = self.sections.get("fractions")
        if f is None:
            return None
        p = self.sections["partition"]
        if f["node_num"] is not None:
            return select_alpha_gamma(f["node_num"], p["M"], p["N"])
        return SamplingFractions(f["alpha"], f["gamma"])

    @property
    def tuning(self):
        t = self.sections["tuning"]
        if not t["enabled"]:
            return None
        return TuningConstants(epsilon=t["epsilon"], delta=t["delta"], t1=t["t1"], t2=t["t2"],
                               period=t["period"], criteria=t["criteria"])

    @property
    def mu0(self):
        return self.sections["tuning"]["mu0"]

    @property
    def lam(self):
        return self.sections.get("tv", {}).get("lambda")

    def problem_key(self):
        """Hash of everything that fixes ``(A, y)``; used to cache the oracle."""
        parts = []
        for sec in ("geometry", "phantom", "noise"):
            parts.append(repr(sorted(self.sections.get(sec, {}).items())))
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def parse_config(text, source=None, kind="run"):
    """Parse and validate configuration text.

    ``kind`` is ``"run"`` for solver experiments or ``"storage"`` for the
    storage sweep.  Raises :class:`ConfigError` naming the offending line.
    """
    keys, section_lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",), empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected 'key = value')", line) from None

    required = RUN_SECTIONS if kind == "run" else STORAGE_SECTIONS
    missing = [s for s in required if not parser.has_section(s)]
    if missing:
        raise ConfigError("missing sections: " + ", ".join(missing))

    sections = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", section_lines.get(sec))
        schema = SCHEMA[sec]
        values = {}
        for key, raw in parser.items(sec):
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", keys.get((sec, key)))
            conv = schema[key][0]
            try:
                values[key] = conv(raw)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {exc}", keys.get((sec, key))) from None
        for key, (_, default) in schema.items():
            if key in values:
                continue
            if default is REQUIRED:
                raise ConfigError(f"missing required key {key!r} in [{sec}]", section_lines.get(sec))
            values[key] = default
        sections[sec] = values

    cfg = ExperimentConfig(sections, hashlib.sha256(text.encode()).hexdigest(), source, kind)
    if kind == "run":
        _check_run(cfg, keys, section_lines)
    return cfg


def _check_run(cfg, keys, section_lines):
    s = cfg.sections
    method = s["method"]["name"]
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}",
                          keys.get(("method", "name")))
    if method in BLOCK_METHODS:
        f = s.get("fractions")
        if f is None:
            raise ConfigError(f"method {method} needs a [fractions] section")
        explicit = f["alpha"] is not None or f["gamma"] is not None
        if f["node_num"] is not None and explicit:
            raise ConfigError("give either node_num or alpha/gamma, not both", section_lines.get("fractions"))
        if f["node_num"] is None and (f["alpha"] is None or f["gamma"] is None):
            raise ConfigError("[fractions] needs node_num or both alpha and gamma",
                              section_lines.get("fractions"))
        for key in ("alpha", "gamma"):
            if f[key] is not None and not 0 < f[key] <= 1:
                raise ConfigError(f"{key} must lie in (0, 1]", keys.get(("fractions", key)))
        try:
            fr = cfg.fractions
            fr.counts(s["partition"]["M"], s["partition"]["N"])
        except ValueError as exc:
            raise ConfigError(str(exc), section_lines.get("fractions")) from None
    if method in TV_METHODS and "tv" not in s:
        raise ConfigError(f"method {method} needs a [tv] section with lambda")
    if method in ("bsgd_im", "bsgd_ran") and s["partition"]["row_unit"] != "angle":
        raise ConfigError("importance sampling needs row_unit = angle", keys.get(("partition", "row_unit")))
    if not 0 <= s["method"]["im_final_phase"] < 1:
        raise ConfigError("im_final_phase must lie in [0, 1)", keys.get(("method", "im_final_phase")))
    for sec, key in (("run", "epochs"), ("run", "metric_period"), ("run", "workers")):
        if s[sec][key] < 1:
            raise ConfigError(f"{sec}.{key} must be >= 1", keys.get((sec, key)))
    if not s["tuning"]["mu0"] > 0:
        raise ConfigError("mu0 must be positive", keys.get(("tuning", "mu0")))
    try:
        cfg.tuning
    except ValueError as exc:
        raise ConfigError(str(exc), section_lines.get("tuning")) from None


def load_config(path, kind="run"):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return parse_config(text, source=str(path), kind=kind)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
