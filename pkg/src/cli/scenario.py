"""INI scenario files → validated, immutable Scenario objects."""
import configparser
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from core.symbol import P_BOX, make_symbol
from expr import parse
from utils.errors import (ExpressionSyntaxError, ScenarioError, UnknownIdentifierError,
                          ValidationError)

logger = logging.getLogger(__name__)

SECTIONS = ("symbol", "initial", "domain", "output", "tunnel", "regularization", "verify")
DIVIDE_TOL = 1e-12
ON_VALUES = {"on", "true", "yes", "1"}
OFF_VALUES = {"off", "false", "no", "0"}


@dataclass(frozen=True)
class Scenario:
    name: str
    source: str
    # [symbol]
    A: str = "0.5"
    V: str = "0"
    jumps: Tuple[Tuple[float, str], ...] = ()
    time_dependent: bool = False
    p_box: Tuple[float, float] = P_BOX
    # [initial]
    S0_text: str = "0"
    p0_text: Optional[str] = None
    rho0_text: str = "1"
    # [domain]
    x_min: float = -1.0
    x_max: float = 1.0
    n_x: int = 201
    x0_min: float = -1.0
    x0_max: float = 1.0
    n_x0: int = 401
    T: float = 1.0
    h_t: float = 0.01
    x_box: Optional[Tuple[float, float]] = None
    a_text: str = "auto"
    stratum_decay: bool = True
    output_every: int = 10
    # [output]
    out_dir: str = "runs"
    # [tunnel]
    h_schedule: Tuple[float, ...] = ()
    lattice_range: Optional[Tuple[float, float]] = None
    lattice_dx: float = 2e-3
    compare_window: Optional[Tuple[float, float]] = None
    # [regularization]
    eps_schedule: Tuple[float, ...] = ()
    beta: Optional[float] = None
    profile: str = "tanh"
    t1: float = 0.1
    c_mode: str = "boundary"
    C_target: float = 1.0
    t_ref: float = 1.0
    # [verify]
    bump_count: int = 8
    seed: int = 0
    levels: Tuple[int, ...] = (5, 6, 7)
    hj_points: int = 101
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    # ---------------------- built objects ----------------------

    @property
    def model(self):
        if "model" not in self._cache:
            self._cache["model"] = make_symbol(self.A, self.V, self.jumps, self.time_dependent, self.p_box)
        return self._cache["model"]

    @property
    def S0(self):
        return self._expression("S0", self.S0_text)

    @property
    def dS0(self):
        return None if self.p0_text is None else self._expression("p0", self.p0_text)

    @property
    def rho0(self):
        return self._expression("rho0", self.rho0_text)

    @property
    def a_field(self):
        return "auto" if self.a_text == "auto" else self._expression("a", self.a_text)

    def _expression(self, key, text):
        if key not in self._cache:
            self._cache[key] = parse(text)
        return self._cache[key]

    @property
    def x0_range(self):
        return self.x0_min, self.x0_max

    @property
    def x0_grid(self):
        return np.linspace(self.x0_min, self.x0_max, self.n_x0)

    @property
    def x_grid(self):
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def regularization(self):
        return {"beta": self.beta, "profile": self.profile, "t1": self.t1,
                "c_mode": self.c_mode, "C_target": self.C_target, "t_ref": self.t_ref}

    def echo(self):
        """Inputs as plain values for the run manifest."""
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items() if not k.startswith("_")}


# ---------------------- readers ----------------------

def _key(section, key):
    return f"{section}.{key}"


def _get(cp, section, key, default=None):
    if not cp.has_section(section) or not cp.has_option(section, key):
        return default
    return cp.get(section, key).strip()


def _float(cp, section, key, default=None):
    raw = _get(cp, section, key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise ScenarioError(f"{_key(section, key)}: '{raw}' is not a number")


def _int(cp, section, key, default=None):
    raw = _get(cp, section, key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ScenarioError(f"{_key(section, key)}: '{raw}' is not an integer")


def _bool(cp, section, key, default):
    raw = _get(cp, section, key)
    if raw is None:
        return default
    if raw.lower() in ON_VALUES:
        return True
    if raw.lower() in OFF_VALUES:
        return False
    raise ScenarioError(f"{_key(section, key)}: '{raw}' is not on/off")


def _floats(cp, section, key, default=()):
    raw = _get(cp, section, key)
    if raw is None or raw == "":
        return tuple(default)
    try:
        return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ScenarioError(f"{_key(section, key)}: '{raw}' is not a list of numbers")


def _pair(cp, section, key):
    values = _floats(cp, section, key)
    if not values:
        return None
    if len(values) != 2 or values[0] >= values[1]:
        raise ScenarioError(f"{_key(section, key)}: expected 'lo hi' with lo < hi")
    return values


def _expr(cp, section, key, default=None, variables=("x",)):
    raw = _get(cp, section, key, default)
    if raw is None:
        return None
    try:
        e = parse(raw)
    except ExpressionSyntaxError as err:
        raise ScenarioError(f"{_key(section, key)}: {err} in '{raw}'")
    except UnknownIdentifierError as err:
        raise ScenarioError(f"{_key(section, key)}: {err} in '{raw}'")
    extra = e.variables - set(variables)
    if extra:
        raise ScenarioError(f"{_key(section, key)}: variable(s) {sorted(extra)} not allowed here")
    return raw


def _jumps(cp):
    raw = _get(cp, "symbol", "jumps", "")
    out = []
    for part in filter(None, (p.strip() for p in raw.split(";"))):
        if ":" not in part:
            raise ScenarioError(f"symbol.jumps: '{part}' is not 'nu : rate'")
        nu_text, rate = (s.strip() for s in part.split(":", 1))
        try:
            nu = float(nu_text)
        except ValueError:
            raise ScenarioError(f"symbol.jumps: jump size '{nu_text}' is not a number")
        if nu == 0:
            raise ScenarioError("symbol.jumps: jump size must be nonzero")
        try:
            parse(rate)
        except (ExpressionSyntaxError, UnknownIdentifierError) as err:
            raise ScenarioError(f"symbol.jumps: {err} in '{rate}'")
        out.append((nu, rate))
    return tuple(out)


# ---------------------- loading ----------------------

def load_scenario(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as err:
        raise ScenarioError(f"cannot read scenario {path}: {err}")
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ScenarioError(f"unknown section(s) {unknown} in {path}")

    time_dependent = _bool(cp, "symbol", "time_dependent", False)
    coefficient_vars = ("x", "t") if time_dependent else ("x",)
    rho0 = _expr(cp, "initial", "rho0")
    phi0 = _expr(cp, "initial", "phi0")
    if rho0 is not None and phi0 is not None:
        raise ScenarioError("initial.rho0 and initial.phi0 are mutually exclusive")
    if phi0 is not None:
        rho0 = f"({phi0})^2"

    a_text = _get(cp, "domain", "a", "auto")
    if a_text != "auto":
        a_text = _expr(cp, "domain", "a", variables=("x", "t", "u"))

    x0_min = _float(cp, "domain", "x0_min", _float(cp, "domain", "x_min", -1.0))
    x0_max = _float(cp, "domain", "x0_max", _float(cp, "domain", "x_max", 1.0))
    kwargs = dict(
        name=os.path.splitext(os.path.basename(path))[0],
        source=os.path.abspath(path),
        A=_expr(cp, "symbol", "A", "0.5", coefficient_vars),
        V=_expr(cp, "symbol", "V", "0", coefficient_vars),
        jumps=_jumps(cp),
        time_dependent=time_dependent,
        p_box=_pair(cp, "symbol", "p_box") or P_BOX,
        S0_text=_expr(cp, "initial", "S0", "0"),
        p0_text=_expr(cp, "initial", "p0"),
        rho0_text=rho0 or "1",
        x_min=_float(cp, "domain", "x_min", -1.0),
        x_max=_float(cp, "domain", "x_max", 1.0),
        n_x=_int(cp, "domain", "n_x", 201),
        x0_min=x0_min,
        x0_max=x0_max,
        n_x0=_int(cp, "domain", "n_x0", 401),
        T=_float(cp, "domain", "T", 1.0),
        h_t=_float(cp, "domain", "h_t", 0.01),
        x_box=_pair(cp, "domain", "x_box"),
        a_text=a_text,
        stratum_decay=_bool(cp, "domain", "stratum_decay", True),
        output_every=_int(cp, "domain", "output_every", 10),
        out_dir=_get(cp, "output", "dir", "runs"),
        h_schedule=_floats(cp, "tunnel", "h"),
        lattice_range=_pair(cp, "tunnel", "x_range"),
        lattice_dx=_float(cp, "tunnel", "dx", 2e-3),
        compare_window=_pair(cp, "tunnel", "window"),
        eps_schedule=_floats(cp, "regularization", "epsilon"),
        beta=_float(cp, "regularization", "beta"),
        profile=_get(cp, "regularization", "profile", "tanh"),
        t1=_float(cp, "regularization", "t1", 0.1),
        c_mode=_get(cp, "regularization", "c_mode", "boundary"),
        C_target=_float(cp, "regularization", "C_target", 1.0),
        t_ref=_float(cp, "regularization", "t_ref", 1.0),
        bump_count=_int(cp, "verify", "bump_count", 8),
        seed=_int(cp, "verify", "seed", 0),
        levels=tuple(int(v) for v in _floats(cp, "verify", "levels", (5, 6, 7))),
        hj_points=_int(cp, "verify", "hj_points", 101),
    )
    scenario = Scenario(**kwargs)
    validate(scenario)
    try:
        scenario.model
    except ValidationError as err:
        raise ScenarioError(f"symbol: {err}")
    logger.info("Loaded scenario %s from %s", scenario.name, path)
    return scenario


def validate(s):
    if not s.x_min < s.x_max:
        raise ScenarioError("domain.x_min must be below domain.x_max")
    if not s.x0_min < s.x0_max:
        raise ScenarioError("domain.x0_min must be below domain.x0_max")
    if s.n_x < 2:
        raise ScenarioError("domain.n_x must be at least 2")
    if s.n_x0 < 3:
        raise ScenarioError("domain.n_x0 must be at least 3")
    if not s.T > 0:
        raise ScenarioError(f"domain.T must be positive (got {s.T})")
    if not 0 < s.h_t <= s.T:
        raise ScenarioError(f"domain.h_t must lie in (0, T] (got {s.h_t})")
    steps = s.T / s.h_t
    if abs(steps - round(steps)) > DIVIDE_TOL * max(1.0, steps):
        raise ScenarioError(f"domain.h_t={s.h_t:g} does not divide domain.T={s.T:g}")
    if s.output_every < 1:
        raise ScenarioError("domain.output_every must be at least 1")
    if any(h <= 0 for h in s.h_schedule):
        raise ScenarioError("tunnel.h values must be positive")
    if s.lattice_dx <= 0:
        raise ScenarioError("tunnel.dx must be positive")
    if any(e <= 0 for e in s.eps_schedule):
        raise ScenarioError("regularization.epsilon values must be positive")
    if s.t_ref <= 0:
        raise ScenarioError(f"regularization.t_ref must be positive (got {s.t_ref})")
    if s.bump_count < 1:
        raise ScenarioError("verify.bump_count must be at least 1")
    if s.hj_points < 3:
        raise ScenarioError("verify.hj_points must be at least 3")


def with_overrides(scenario, out_dir=None, seed=None):
    changes = {}
    if out_dir is not None:
        changes["out_dir"] = out_dir
    if seed is not None:
        changes["seed"] = int(seed)
    if not changes:
        return scenario
    values = {k: v for k, v in scenario.__dict__.items() if k != "_cache"}
    values.update(changes)
    return Scenario(**values)
