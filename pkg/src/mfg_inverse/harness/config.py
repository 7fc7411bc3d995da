"""Experiment configuration: a TOML file with nested sections.

Ground-truth fields are cosine-amplitude lists ``[[k, a_k], ...]`` meaning
``sum a_k cos(k pi x)``; kernels are ``[[i, j, a_ij], ...]`` meaning
``sum a_ij cos(i pi x) cos(j pi y)``. Any field may instead come from a CSV
file (``*_file`` keys, resolved relative to the config file). Unknown keys
are rejected with their dotted path.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..costs import (
    InvalidKernelError,
    KineticHamiltonian,
    LocalAnalyticCost,
    NonlocalKernelCost,
    load_kernel_csv,
)
from ..errors import AdmissibilityError, ConfigError
from ..grid import Grid, SpatialField, cosine_series, make_grid, spatial_from_csv
from ..mfg import MfgModel
from ..parabolic import BOUNDARY_FORMS, DRIFT_DISCRETIZATIONS, SCHEMES, SolverOptions
from ..probes import KAPPA_MAX_CONDITION, TIME_FACTORS

UNKNOWNS = ("kappa", "F", "K")

DEFAULTS = {
    "grid": {"n_x": 201, "n_t": 400, "T": 1.0, "beta": 1.0},
    "model": {
        "kappa": [[0, 1.0]],
        "kappa_file": None,
        "cost": "local",
        "F": [],
        "F_files": [],
        "kernel": [],
        "kernel_file": None,
    },
    "variation": {
        "psi_eps": 1e-3,
        "m0_eps": 1e-2,
        "kernel_eps": 1e-3,
        "kappa_probes": [1, 2],
        "g1": [[0, 1.0]],
        "n_samples": 5,
        "fit_degree": 4,
    },
    "inverse": {
        "unknowns": ["kappa", "F"],
        "M": 3,
        "K_max": 2,
        "modes": None,
        "time_factor": "discrete",
        "kappa_max_condition": KAPPA_MAX_CONDITION,
    },
    "solver": {
        "scheme": "crank_nicolson",
        "drift": "centered_flux",
        "boundary": "zero_total_flux",
    },
    "output": {"directory": "out", "formats": ["json", "csv"]},
}

FORMATS = ("json", "csv")


def _merge(defaults: dict, given: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}{key}"
        if key not in defaults:
            raise ConfigError("unknown key", where)
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("expected a table", where)
            out[key] = _merge(defaults[key], value, where + ".")
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description.

    ``data`` holds the fully merged tables; ``base_dir`` anchors relative
    file paths.
    """

    data: dict
    base_dir: Path

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | str = ".") -> ExperimentConfig:
        cfg = cls(_merge(DEFAULTS, raw), Path(base_dir))
        cfg._validate()
        return cfg

    @classmethod
    def load(cls, path: Path | str) -> ExperimentConfig:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError("file not found", str(path)) from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}", str(path)) from None
        return cls.from_dict(raw, path.parent)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def digest(self) -> str:
        blob = json.dumps(self.data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    # -- accessors ----------------------------------------------------------

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def grid(self) -> Grid:
        g = self["grid"]
        try:
            return make_grid(g["n_x"], g["n_t"], g["T"], g["beta"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), "grid") from None

    @property
    def solver(self) -> SolverOptions:
        s = self["solver"]
        return SolverOptions(s["scheme"], s["drift"], s["boundary"])

    @property
    def unknowns(self) -> tuple[str, ...]:
        return tuple(self["inverse"]["unknowns"])

    def kappa(self) -> SpatialField:
        m = self["model"]
        if m["kappa_file"]:
            return self._read_field(m["kappa_file"], "model.kappa_file")
        return self._series(m["kappa"], "model.kappa")

    def F_coeffs(self) -> list[SpatialField]:
        m = self["model"]
        if m["F_files"]:
            return [self._read_field(p, f"model.F_files[{i}]")
                    for i, p in enumerate(m["F_files"])]
        return [self._series(a, f"model.F[{i}]") for i, a in enumerate(m["F"])]

    def kernel(self) -> NonlocalKernelCost:
        m = self["model"]
        grid = self.grid
        try:
            if m["kernel_file"]:
                return load_kernel_csv(self._resolve(m["kernel_file"]).read_text(), grid)
            K = np.zeros((grid.n_x, grid.n_x))
            for entry in m["kernel"]:
                i, j, a = entry
                K += float(a) * np.outer(np.cos(int(i) * np.pi * grid.x),
                                         np.cos(int(j) * np.pi * grid.x))
            return NonlocalKernelCost.from_samples(K, grid)
        except InvalidKernelError as exc:
            raise ConfigError(str(exc), "model.kernel") from None
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc), "model.kernel_file") from None

    def model(self) -> MfgModel:
        cost = self.kernel() if self["model"]["cost"] == "nonlocal" else self._local_cost()
        return MfgModel(KineticHamiltonian(self.kappa()), cost)

    def g1(self) -> SpatialField:
        return self._series(self["variation"]["g1"], "variation.g1")

    def g1_level(self) -> float:
        """Constant level of ``g_1``, after checking admissibility first."""
        g1 = self.g1().values
        if g1.min() < 0.0:
            raise AdmissibilityError(
                f"variation.g1: first-order density direction is negative (min "
                f"{g1.min():.3e}); every submitted density must satisfy m0 >= 0")
        if np.ptp(g1) > 1e-12 * max(1.0, abs(g1).max()) or g1[0] <= 0.0:
            raise ConfigError("must be a positive constant density for the reconstruction "
                              "identities", "variation.g1")
        return float(g1[0])

    # -- helpers ------------------------------------------------------------

    def _local_cost(self) -> LocalAnalyticCost:
        F = self.F_coeffs()
        if not F:
            F = [SpatialField(np.zeros(self.grid.n_x), self.grid)]
        return LocalAnalyticCost(F)

    def _resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def _read_field(self, p: str, where: str) -> SpatialField:
        try:
            return spatial_from_csv(self._resolve(p).read_text(), self.grid)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc), where) from None

    def _series(self, amplitudes, where: str) -> SpatialField:
        try:
            pairs = [(int(k), float(a)) for k, a in amplitudes]
        except (TypeError, ValueError):
            raise ConfigError("expected a list of [k, amplitude] pairs", where) from None
        if any(k < 0 for k, _ in pairs):
            raise ConfigError("mode indices must be nonnegative", where)
        return cosine_series(pairs, self.grid)

    def _validate(self) -> None:
        grid = self.grid
        s = self["solver"]
        for key, allowed in (("scheme", tuple(SCHEMES)), ("drift", DRIFT_DISCRETIZATIONS),
                             ("boundary", BOUNDARY_FORMS)):
            if s[key] not in allowed:
                raise ConfigError(f"must be one of {allowed}", f"solver.{key}")
        m = self["model"]
        if m["cost"] not in ("local", "nonlocal"):
            raise ConfigError("must be 'local' or 'nonlocal'", "model.cost")
        inv = self["inverse"]
        unknowns = inv["unknowns"]
        if not isinstance(unknowns, list) or not unknowns:
            raise ConfigError("must be a nonempty list", "inverse.unknowns")
        for u in unknowns:
            if u not in UNKNOWNS:
                raise ConfigError(f"unknown unknown {u!r}; choose from {UNKNOWNS}",
                                  "inverse.unknowns")
        if "K" in unknowns and m["cost"] != "nonlocal":
            raise ConfigError("kernel recovery requires model.cost = 'nonlocal'",
                              "inverse.unknowns")
        if "F" in unknowns and m["cost"] != "local":
            raise ConfigError("running-cost coefficients require model.cost = 'local'",
                              "inverse.unknowns")
        if not 1 <= int(inv["K_max"]) <= 3:
            raise ConfigError("must be 1, 2 or 3", "inverse.K_max")
        if not 1 <= int(inv["M"]) <= grid.n_x // 4:
            raise ConfigError(f"must lie in 1..{grid.n_x // 4} (n_x/4)", "inverse.M")
        if inv["time_factor"] not in TIME_FACTORS:
            raise ConfigError(f"must be one of {TIME_FACTORS}", "inverse.time_factor")
        v = self["variation"]
        for key in ("psi_eps", "m0_eps", "kernel_eps"):
            if not isinstance(v[key], (int, float)) or not v[key] > 0:
                raise ConfigError("must be a positive number", f"variation.{key}")
        if not v["kappa_probes"] or any(int(k) < 1 for k in v["kappa_probes"]):
            raise ConfigError("must be a nonempty list of modes >= 1", "variation.kappa_probes")
        if "F" in unknowns and int(v["fit_degree"]) < int(inv["K_max"]):
            raise ConfigError("must be at least inverse.K_max", "variation.fit_degree")
        if not 1 <= int(v["fit_degree"]) <= int(v["n_samples"]):
            raise ConfigError("need 1 <= fit_degree <= n_samples", "variation.fit_degree")
        for fmt in self["output"]["formats"]:
            if fmt not in FORMATS:
                raise ConfigError(f"must be among {FORMATS}", "output.formats")
        # materialise every field once so bad data fail at validation time
        self.kappa()
        if m["cost"] == "local":
            if len(self.F_coeffs()) > 3:
                raise ConfigError("at most three Taylor coefficients are supported", "model.F")
        else:
            self.kernel()
        self.g1()
