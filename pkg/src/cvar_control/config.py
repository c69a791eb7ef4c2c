"""INI-style run configuration with documented defaults and a resolved echo."""
from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

DEFAULTS: dict[str, dict[str, str]] = {
    "market": {
        "mu": "0.11",            # comma list for several assets
        "sigma": "0.20",         # volatilities, same length as mu
        "correlation": "0.0",    # pairwise correlation (two assets)
        "r": "0.01",
        "lower": "-6.0",
        "upper": "6.0",
        "T": "1.0",
        "x0": "0.0",
    },
    "risk": {
        "kind": "mean_cvar",     # pure_cvar | mean_cvar | mad
        "alpha": "0.95",
        "lambda": "1.0",
        "epsilon": "0.01",
        "eta": "",               # blank: same as epsilon
    },
    "solver": {
        "nx": "400",
        "sigmas": "6.0",
        "nt_cap": "200000",
        "control_points": "25",
        "analytic": "true",
        "control": "",           # blank: full box; a value fixes a constant control
    },
    "descent": {
        "y0": "",                # blank: sample VaR under the mid-box control
        "grad_tol": "1e-4",
        "max_iters": "200",
        "armijo_c": "1e-4",
        "initial_step": "",      # blank: epsilon
        "convex_mode": "true",
    },
    "mc": {
        "n_paths": "100000",
        "dt": "",                # blank: T / 500
        "seed": "0",
        "record": "5",           # sample paths written by simulate
    },
    "frontier": {
        "lambdas": "",           # blank: log-spaced grid below
        "n_lambda": "12",
        "lambda_min": "0.02",
        "static_points": "241",
        "loss_smoothing": "0.01",  # lambda * epsilon held fixed; blank: [risk] epsilon for every lambda
        "mc_check": "false",
    },
    "converge": {
        "epsilons": "0.08, 0.04, 0.02",
        "eta": "",               # blank: eta = epsilon on every row
    },
    "gradcheck": {
        "y_min": "-0.3",
        "y_max": "0.5",
        "n_points": "9",
        "h": "1e-3",
        "tol": "0.02",
    },
    "simulate": {
        "policy": "",            # blank: solve inline
        "target_return": "",     # blank: use [risk] lambda; else match this expected return
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    parser: configparser.ConfigParser
    source: str = "<defaults>"

    def raw(self, section: str, key: str) -> str:
        return self.parser.get(section, key).strip()

    def _convert(self, section, key, fn, what):
        text = self.raw(section, key)
        try:
            return fn(text)
        except (ValueError, TypeError):
            raise ConfigError(f"{self.source}: [{section}] {key} = {text!r}: expected {what}") from None

    def float(self, section: str, key: str, optional: bool = False):
        if optional and not self.raw(section, key):
            return None
        return self._convert(section, key, float, "a number")

    def int(self, section: str, key: str) -> int:
        return self._convert(section, key, int, "an integer")

    def bool(self, section: str, key: str) -> bool:
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"{self.source}: [{section}] {key} = {self.raw(section, key)!r}: "
                              "expected true/false") from None

    def floats(self, section: str, key: str, optional: bool = False):
        if optional and not self.raw(section, key):
            return None
        return self._convert(section, key, lambda s: np.array([float(v) for v in s.split(",")]),
                             "a comma-separated list of numbers")

    def set(self, section: str, key: str, value) -> None:
        self.parser.set(section, key, str(value))

    def echo(self) -> str:
        """Resolved configuration as ``#`` comment lines."""
        lines = [f"# config: {self.source}"]
        for sec in self.parser.sections():
            lines.append(f"# [{sec}]")
            for k, v in self.parser.items(sec):
                lines.append(f"#   {k} = {v}")
        return "\n".join(lines) + "\n"


def load_config(path: str | None = None, text: str | None = None) -> Config:
    """Read ``path`` (or ``text``) over the defaults; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    cp.read_dict({s: {k.lower(): v for k, v in d.items()} for s, d in DEFAULTS.items()})
    source = "<defaults>"
    user = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    user.optionxform = str.lower
    try:
        if path is not None:
            source = str(path)
            with open(path, encoding="utf-8") as fh:
                user.read_file(fh, source=source)
        elif text is not None:
            source = "<string>"
            user.read_string(text, source=source)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    for sec in user.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        known = {k.lower() for k in DEFAULTS[sec]}
        for k, v in user.items(sec):
            if k not in known:
                raise ConfigError(f"{source}: unknown key {k!r} in [{sec}]")
            cp.set(sec, k, v)
    return Config(cp, source)
