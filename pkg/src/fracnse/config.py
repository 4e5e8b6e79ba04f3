"""Run configuration: a flat ``key = value`` format with ``[section]`` headers.

Example::

    [grid]
    n = 32              # or nx, ny, nz
    lx = 2pi            # lengths accept multiples of pi; default 2pi

    [sim]
    beta = 0.75
    dt = 0.01
    t_end = 1.0

    [ic]
    type = random       # taylor_green | beltrami | random | snapshot
    seed = 7

Defaults for everything else are listed in ``KEYS``.  ``parse_config``
never raises anything but ``ConfigError``, which carries every problem
found, each with its line number.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from .balance import CONSISTENT, LITERAL, BalanceParams
from .dynamics import (
    FromSnapshot,
    ManufacturedTaylorGreen,
    RandomSpectrum,
    SimParams,
    SingleModeBeltrami,
    TaylorGreen,
)
from .geometry import CoherenceParams
from .spectral import Grid

MAX_LINE = 4096


@dataclass(frozen=True)
class ConfigIssue:
    line: int | None
    key: str
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line is not None else "config"
        return f"{where}: {self.key}: {self.message}" if self.key else f"{where}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, errors: list[ConfigIssue]):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


@dataclass
class RunConfig:
    grid: Grid
    sim: SimParams
    ic: Any
    balance: BalanceParams
    coherence: CoherenceParams
    output_dir: str = "out"
    write_snapshots: bool = True
    source: dict = field(default_factory=dict, repr=False)


# --------------------------------------------------------------------------
# value parsers


_PI = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*\*?\s*pi$")


def _float(text: str) -> float:
    m = _PI.match(text.lower())
    if m:
        coef = float(m.group(1)) if m.group(1) else 1.0
        return coef * math.pi
    if text.lower() in ("nan", "+nan", "-nan"):
        raise ValueError("NaN is not allowed")
    return float(text)


def _int(text: str) -> int:
    if not re.fullmatch(r"[+-]?\d{1,18}", text):
        raise ValueError("expected an integer")
    return int(text)


_BOOLS = {"true": True, "yes": True, "on": True, "1": True,
          "false": False, "no": False, "off": False, "0": False}


def _bool(text: str) -> bool:
    try:
        return _BOOLS[text.lower()]
    except KeyError:
        raise ValueError("expected true or false") from None


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return value
    return parse


def _text(text: str) -> str:
    if not text:
        raise ValueError("empty value")
    return text


def _float_or_inf(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else _float(text)


# section -> key -> (parser, default); default None means optional without value,
# REQUIRED means the key must appear
REQUIRED = object()

IC_TYPES = ("taylor_green", "beltrami", "random", "snapshot")

KEYS: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "grid": {
        "n": (_int, None),
        "nx": (_int, None),
        "ny": (_int, None),
        "nz": (_int, None),
        "lx": (_float, 2 * math.pi),
        "ly": (_float, 2 * math.pi),
        "lz": (_float, 2 * math.pi),
    },
    "sim": {
        "beta": (_float, REQUIRED),
        "dt": (_float, REQUIRED),
        "t_end": (_float, REQUIRED),
        "dealias": (_bool, True),
        "nonlinear": (_bool, True),
        "forcing": (_choice("none", "manufactured"), "none"),
        "forcing_amplitude": (_float, 1.0),
        "forcing_steady": (_bool, True),
        "snapshot_every": (_int, 100),
        "diagnostics_every": (_int, 10),
        "blowup_guard": (_float, 1e12),
    },
    "ic": {
        "type": (_choice(*IC_TYPES), REQUIRED),
        "amplitude": (_float, 1.0),
        "seed": (_int, 0),
        "slope": (_float, 2.0),
        "k_peak": (_int, 3),
        "k_max": (_float, None),
        "mode": (_int, 1),
        "path": (_text, None),
    },
    "balance": {
        "p": (_float, None),
        "gamma": (_float, 0.5),
        "a": (_float, 1.0),
        "p1": (_float, None),
        "variant": (_choice(LITERAL, CONSISTENT), CONSISTENT),
        "q": (_float_or_inf, math.inf),
    },
    "coherence": {
        "eps_mag": (_float, None),
        "r_max": (_float, None),
        "brute_force": (_bool, False),
        "line_angle": (_bool, False),
    },
    "output": {
        "dir": (_text, "out"),
        "snapshots": (_bool, True),
    },
}

# (section, key) -> (check, admissible range text)
RANGES: dict[tuple[str, str], tuple[Callable[[Any], bool], str]] = {
    ("grid", "n"): (lambda v: v >= 4 and v % 2 == 0 and v <= 4096, "even integer in [4, 4096]"),
    ("grid", "nx"): (lambda v: v >= 4 and v % 2 == 0 and v <= 4096, "even integer in [4, 4096]"),
    ("grid", "ny"): (lambda v: v >= 4 and v % 2 == 0 and v <= 4096, "even integer in [4, 4096]"),
    ("grid", "nz"): (lambda v: v >= 4 and v % 2 == 0 and v <= 4096, "even integer in [4, 4096]"),
    ("grid", "lx"): (lambda v: 0 < v < math.inf, "(0, inf)"),
    ("grid", "ly"): (lambda v: 0 < v < math.inf, "(0, inf)"),
    ("grid", "lz"): (lambda v: 0 < v < math.inf, "(0, inf)"),
    ("sim", "beta"): (lambda v: 0 < v <= 1, "(0, 1]"),
    ("sim", "dt"): (lambda v: 0 < v < math.inf, "(0, inf)"),
    ("sim", "t_end"): (lambda v: 0 <= v < math.inf, "[0, inf)"),
    ("sim", "forcing_amplitude"): (lambda v: math.isfinite(v), "finite"),
    ("sim", "snapshot_every"): (lambda v: v >= 1, "[1, inf)"),
    ("sim", "diagnostics_every"): (lambda v: v >= 1, "[1, inf)"),
    ("sim", "blowup_guard"): (lambda v: 0 < v < math.inf, "(0, inf)"),
    ("ic", "amplitude"): (lambda v: math.isfinite(v), "finite"),
    ("ic", "seed"): (lambda v: v >= 0, "[0, inf)"),
    ("ic", "slope"): (lambda v: math.isfinite(v), "finite"),
    ("ic", "k_peak"): (lambda v: v >= 1, "[1, inf)"),
    ("ic", "k_max"): (lambda v: 0 < v < math.inf, "(0, inf)"),
    ("ic", "mode"): (lambda v: v >= 1, "[1, inf)"),
    ("balance", "p"): (lambda v: 1 <= v < math.inf, "[1, inf)"),
    ("balance", "gamma"): (lambda v: 0 < v <= 1, "(0, 1]"),
    ("balance", "a"): (lambda v: 0 < v < math.inf, "(0, inf)"),
    ("balance", "p1"): (lambda v: 1 <= v < math.inf, "[1, inf)"),
    ("balance", "q"): (lambda v: v >= 1, "[1, inf]"),
    ("coherence", "eps_mag"): (lambda v: 0 < v < math.inf, "(0, inf)"),
    ("coherence", "r_max"): (lambda v: 0 < v < math.inf, "(0, inf)"),
}


# --------------------------------------------------------------------------
# parsing


def _decode(data: str | bytes, errors: list[ConfigIssue]) -> str | None:
    if isinstance(data, str):
        return data
    try:
        return bytes(data).decode("utf-8")
    except UnicodeDecodeError as exc:
        line = bytes(data)[: exc.start].count(b"\n") + 1
        errors.append(ConfigIssue(line, "", "input is not valid UTF-8"))
        return None


def _tokenize(text: str, errors: list[ConfigIssue]) -> dict[str, dict[str, tuple[str, int]]]:
    """Raw ``section -> key -> (value, line)`` with structural errors collected."""
    raw: dict[str, dict[str, tuple[str, int]]] = {}
    section: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if len(line) > MAX_LINE:
            errors.append(ConfigIssue(lineno, "", f"line longer than {MAX_LINE} characters"))
            continue
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                errors.append(ConfigIssue(lineno, "", f"malformed section header {body!r}"))
                section = None
                continue
            name = body[1:-1].strip().lower()
            if name not in KEYS:
                errors.append(ConfigIssue(lineno, "", f"unknown section [{name}]"))
                section = None
                continue
            section = name
            raw.setdefault(section, {})
            continue
        if "=" not in body:
            errors.append(ConfigIssue(lineno, "", f"expected 'key = value', got {body!r}"))
            continue
        key, value = (part.strip() for part in body.split("=", 1))
        key = key.lower()
        if section is None:
            errors.append(ConfigIssue(lineno, key, "key outside a known section"))
            continue
        if key not in KEYS[section]:
            errors.append(ConfigIssue(lineno, key, f"unknown key in [{section}]"))
            continue
        if key in raw[section]:
            first = raw[section][key][1]
            errors.append(ConfigIssue(lineno, key, f"duplicate key (lines {first} and {lineno})"))
            continue
        raw[section][key] = (value, lineno)
    return raw


def _convert(raw, errors: list[ConfigIssue]) -> tuple[dict, dict]:
    """Typed values (defaults filled in) and the line of each given key."""
    values: dict[str, dict[str, Any]] = {}
    lines: dict[tuple[str, str], int] = {}
    for section, keys in KEYS.items():
        given = raw.get(section, {})
        out = {}
        for key, (parse, default) in keys.items():
            if key not in given:
                if default is REQUIRED:
                    errors.append(ConfigIssue(None, key, f"missing required key in [{section}]"))
                    out[key] = None
                else:
                    out[key] = default
                continue
            text, lineno = given[key]
            lines[(section, key)] = lineno
            try:
                value = parse(text)
            except (ValueError, OverflowError) as exc:
                errors.append(ConfigIssue(lineno, key, f"invalid value {text[:40]!r}: {exc}"))
                out[key] = None
                continue
            check = RANGES.get((section, key))
            if check is not None and not check[0](value):
                errors.append(ConfigIssue(lineno, key, f"{value!r} outside admissible range {check[1]}"))
                out[key] = None
                continue
            out[key] = value
        values[section] = out
    return values, lines


def _build(values: dict, lines: dict, errors: list[ConfigIssue]) -> RunConfig | None:
    def issue(section: str, key: str, message: str) -> None:
        errors.append(ConfigIssue(lines.get((section, key)), key, message))

    g = values["grid"]
    dims = [g["nx"], g["ny"], g["nz"]]
    given_dims = [("grid", k) in lines for k in ("nx", "ny", "nz")]
    if ("grid", "n") in lines:
        if any(given_dims):
            issue("grid", "n", "give either n or nx/ny/nz, not both")
        dims = [g["n"]] * 3
    elif not all(given_dims):
        if not any(("grid", k) in lines for k in ("n", "nx", "ny", "nz")):
            errors.append(ConfigIssue(None, "n", "missing required key in [grid] (n or nx, ny, nz)"))
        else:
            errors.append(ConfigIssue(None, "nx", "nx, ny and nz must all be given"))

    s = values["sim"]
    ic_v = values["ic"]
    b = values["balance"]
    c = values["coherence"]
    if errors:
        return None

    grid = Grid(*dims, g["lx"], g["ly"], g["lz"])
    forcing = None
    if s["forcing"] == "manufactured":
        if not (grid.lx == grid.ly == grid.lz):
            issue("sim", "forcing", "manufactured forcing needs a cubic box")
        forcing = ManufacturedTaylorGreen(s["forcing_amplitude"], s["forcing_steady"])

    kind = ic_v["type"]
    if kind == "snapshot" and ic_v["path"] is None:
        issue("ic", "type", "type = snapshot needs a path")
    ic = {
        "taylor_green": lambda: TaylorGreen(ic_v["amplitude"]),
        "beltrami": lambda: SingleModeBeltrami(ic_v["amplitude"], ic_v["mode"]),
        "random": lambda: RandomSpectrum(ic_v["seed"], ic_v["slope"], ic_v["amplitude"],
                                         ic_v["k_peak"], ic_v["k_max"]),
        "snapshot": lambda: FromSnapshot(ic_v["path"] or ""),
    }[kind]()

    beta = s["beta"]
    p = b["p"] if b["p"] is not None else 6.0 / beta
    if not p > 3.0 / beta:
        issue("balance", "p", f"{p!r} outside admissible range (3/beta, inf) = ({3.0 / beta:g}, inf)")
    p1 = b["p1"]
    if p1 is None:
        try:
            p1 = BalanceParams.solve_p1(b["gamma"], b["a"], beta, b["variant"])
        except ValueError as exc:
            issue("balance", "p1", str(exc))
            p1 = 1.0
        if not p1 >= 1:
            issue("balance", "p1", f"solved p1 = {p1:g} is below 1; set p1 explicitly")

    half = 0.5 * min(grid.lengths)
    if c["r_max"] is not None and c["r_max"] > half:
        issue("coherence", "r_max", f"{c['r_max']!r} outside admissible range (0, {half:g}]")
    if errors:
        return None

    try:
        sim = SimParams(beta=beta, dt=s["dt"], t_end=s["t_end"], dealias=s["dealias"],
                        forcing=forcing, snapshot_every=s["snapshot_every"],
                        diagnostics_every=s["diagnostics_every"],
                        blowup_guard=s["blowup_guard"], nonlinear=s["nonlinear"])
        balance = BalanceParams(p=p, gamma=b["gamma"], a=b["a"], p1=p1, beta=beta,
                                variant=b["variant"], chen_q=b["q"])
        coherence = CoherenceParams(gamma=b["gamma"], eps_mag=c["eps_mag"], r_max=c["r_max"],
                                    brute_force=c["brute_force"], line_angle=c["line_angle"])
    except ValueError as exc:
        errors.append(ConfigIssue(None, "", str(exc)))
        return None
    out = values["output"]
    return RunConfig(grid, sim, ic, balance, coherence, out["dir"], out["snapshots"], values)


def parse_config(data: str | bytes) -> RunConfig:
    """Parse and validate; raises ``ConfigError`` listing every problem."""
    errors: list[ConfigIssue] = []
    text = _decode(data, errors)
    if text is None:
        raise ConfigError(errors)
    raw = _tokenize(text, errors)
    values, lines = _convert(raw, errors)
    config = _build(values, lines, errors)
    if errors or config is None:
        raise ConfigError(errors or [ConfigIssue(None, "", "invalid configuration")])
    return config


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read())
