"""Scenario files: parsing, validation and the built-in presets.

A scenario is a YAML mapping with the sections below (defaults in brackets).

    name: str                               ["scenario"]
    domain:
      spatial_extent: [[lo, hi], ...]       one or two spatial axes
      energy_interval: [E_min, E_max]       MeV
      omega: [w1, ...]                      unit beam direction
    mesh:
      resolution: [n_1, ..., n_E]           cells per axis, energy last
      snap_interfaces: bool                 [true] put grid lines on layer interfaces
    materials:
      preset: name                          water, muscle, bone, lung, water-bortfeld, orbital
      layers:                               instead of preset
        - {name, depth: [a, b], material: row | alpha: .., p: .., rho: ..}
    scatter:                                at most one of the two keys
      epsilon: float                        [0]
      g_hg: float                           Henyey-Greenstein anisotropy, epsilon = (1 - g)/2
    spectrum:
      kind: gaussian | tabulated            [gaussian]
      E0, delta, fluence                    [62, 0.01, 1.21e9] gaussian parameters
      energies, values                      tabulated spectrum (linear interpolation)
      profile: {centre, sigma}              transverse Gaussian beam profile (2 spatial axes)
    source: float                           [0] constant volumetric source
    solver:                                 or the bare string vi | supg
      method: vi | supg                     [vi]
      vi_tolerance: float | null            [null] -> 1e-8 |rhs|_inf
      vi_max_outer: int                     [1000]
    dose:
      kind: GalerkinNodal | ElementConstant | ViNodal   [ViNodal]
      resolution: [m_1, ...]                spatial cells per axis [fluence mesh resolution]
      energy_rule: mesh | int               [mesh] trapezoid on mesh energies or on n uniform cells
    adaptivity:
      enabled: bool                         [false]
      theta: float                          [0.01]
      max_levels: int                       [4]
    convergence:
      levels: int                           [4]
    output:
      directory: path                       [out/<name>]
      fluence_csv: bool                     [true]
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from ..analytic import ExactFluence, GaussianSpectrum
from ..assembly import TransportCoefficients
from ..dose import EnergyQuadrature, Representation
from ..materials import (ORBITAL_LAYERS, PRESETS, BraggKleeman, MaterialError, MaterialField,
                         epsilon_from_hg)
from ..mesh import Domain, build_spatial_grid, build_structured
from ..problem import SOLVERS, TransportProblem


class ConfigError(ValueError):
    """Invalid scenario; ``errors`` lists every violated field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


SECTIONS = {"name", "domain", "mesh", "materials", "scatter", "spectrum", "source", "solver",
            "dose", "adaptivity", "convergence", "output"}

DEFAULTS = {
    "name": "scenario",
    "mesh": {"snap_interfaces": True},
    "scatter": {},
    "spectrum": {"kind": "gaussian", "E0": 62.0, "delta": 0.01, "fluence": 1.21e9},
    "source": 0.0,
    "solver": {"method": "vi", "vi_tolerance": None, "vi_max_outer": 1000},
    "dose": {"kind": Representation.VI.value, "energy_rule": "mesh"},
    "adaptivity": {"enabled": False, "theta": 0.01, "max_levels": 4},
    "convergence": {"levels": 4},
    "output": {"fluence_csv": True},
}

_BENCHMARK = {
    "domain": {"spatial_extent": [[0.0, 4.0]], "energy_interval": [1.0, 70.0], "omega": [1.0]},
    "materials": {"preset": "water-bortfeld"},
    "spectrum": {"E0": 62.0, "delta": 0.01, "fluence": 1.21e9},
}

PRESET_SCENARIOS = {
    "example1-supg": {
        **_BENCHMARK, "name": "example1-supg",
        "mesh": {"resolution": [64, 64]},
        "solver": {"method": "supg"},
        "dose": {"kind": "GalerkinNodal", "resolution": [64]},
    },
    "example1-vi": {
        **_BENCHMARK, "name": "example1-vi",
        "mesh": {"resolution": [64, 64]},
        "solver": {"method": "vi"},
        "dose": {"kind": "ViNodal", "resolution": [64]},
    },
    "example1-adaptive": {
        **_BENCHMARK, "name": "example1-adaptive",
        "mesh": {"resolution": [32, 32]},
        "solver": {"method": "vi"},
        "dose": {"kind": "ViNodal", "resolution": [128]},
        "adaptivity": {"enabled": True, "theta": 0.01, "max_levels": 4},
    },
    "example3": {
        "name": "example3",
        "domain": {"spatial_extent": [[0.0, 4.0], [-1.0, 1.0]], "energy_interval": [1.0, 70.0],
                   "omega": [1.0, 0.0]},
        "mesh": {"resolution": [24, 24, 24]},
        "materials": {"preset": "water-bortfeld"},
        "scatter": {"g_hg": 0.98},
        "spectrum": {"E0": 62.0, "delta": 0.01, "fluence": 1.21e9,
                     "profile": {"centre": 0.0, "sigma": 0.2}},
        "solver": {"method": "supg"},
        "dose": {"kind": "ElementConstant", "resolution": [48, 48]},
    },
    "example4-orbital": {
        "name": "example4-orbital",
        "domain": {"spatial_extent": [[0.0, 5.0]], "energy_interval": [1.0, 70.0], "omega": [1.0]},
        "mesh": {"resolution": [256, 256]},
        "materials": {"preset": "orbital"},
        "spectrum": {"E0": 65.0, "delta": 0.01, "fluence": 1.21e9},
        "solver": {"method": "vi"},
        "dose": {"kind": "ElementConstant", "resolution": [128]},
    },
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _num_list(v, n=None):
    return isinstance(v, (list, tuple)) and all(_is_num(x) for x in v) and (n is None or len(v) == n)


def _material_row(name):
    return PRESETS.get(str(name).lower())


def _validate_layers(layers, err):
    if not isinstance(layers, list) or not layers:
        err.append("materials.layers: must be a non-empty list")
        return
    for i, lay in enumerate(layers):
        key = f"materials.layers[{i}]"
        if not isinstance(lay, dict):
            err.append(f"{key}: must be a mapping")
            continue
        if not _num_list(lay.get("depth"), 2) or not lay["depth"][1] > lay["depth"][0]:
            err.append(f"{key}.depth: must be [a, b] with b > a")
        if "material" in lay:
            if _material_row(lay["material"]) is None:
                err.append(f"{key}.material: unknown row {lay['material']!r}; known: {sorted(PRESETS)}")
        else:
            a, p = lay.get("alpha"), lay.get("p")
            if not (_is_num(a) and a > 0):
                err.append(f"{key}.alpha: must be a positive number (or give 'material')")
            if not (_is_num(p) and 1 <= p <= 2):
                err.append(f"{key}.p: must lie in [1, 2] (or give 'material')")
        if "rho" in lay and not (_is_num(lay["rho"]) and lay["rho"] > 0):
            err.append(f"{key}.rho: must be positive")
    for i in range(1, len(layers)):
        try:
            if not np.isclose(layers[i]["depth"][0], layers[i - 1]["depth"][1], rtol=0, atol=1e-12):
                err.append(f"materials.layers[{i}].depth: layers must be contiguous")
        except (KeyError, TypeError, IndexError):
            pass


def validate(cfg: dict) -> list[str]:
    """Every problem with the (defaults-merged) config; empty when valid."""
    err = []
    if not isinstance(cfg, dict):
        return ["<root>: scenario must be a mapping"]
    for k in sorted(set(cfg) - SECTIONS):
        err.append(f"{k}: unknown section")

    def section(name):
        v = cfg.get(name, {})
        if not isinstance(v, dict):
            err.append(f"{name}: must be a mapping")
            return {}
        return v

    dom = cfg.get("domain")
    sd = None
    if not isinstance(dom, dict):
        err.append("domain: required mapping")
    else:
        ext = dom.get("spatial_extent")
        if not (isinstance(ext, list) and 1 <= len(ext) <= 2 and all(_num_list(e, 2) and e[1] > e[0] for e in ext)):
            err.append("domain.spatial_extent: must be one or two [lo, hi] pairs with hi > lo")
        else:
            sd = len(ext)
        ei = dom.get("energy_interval")
        if not (_num_list(ei, 2) and 0 < ei[0] < ei[1]):
            err.append("domain.energy_interval: must be [E_min, E_max] with 0 < E_min < E_max")
        om = dom.get("omega")
        if not _num_list(om) or (sd is not None and len(om) != sd):
            err.append("domain.omega: must be a list with one entry per spatial axis")
        elif abs(np.linalg.norm(om) - 1.0) > 1e-12:
            err.append("domain.omega: must have unit length")

    res = section("mesh").get("resolution")
    if not (isinstance(res, list) and all(_is_int(n) and n >= 1 for n in res)):
        err.append("mesh.resolution: must be a list of positive integers")
    elif sd is not None and len(res) != sd + 1:
        err.append(f"mesh.resolution: needs {sd + 1} entries (spatial axes then energy)")

    mats = cfg.get("materials")
    if not isinstance(mats, dict) or ("preset" in mats) == ("layers" in mats):
        err.append("materials: give exactly one of 'preset' or 'layers'")
    elif "preset" in mats:
        if mats["preset"] != "orbital" and _material_row(mats["preset"]) is None:
            err.append(f"materials.preset: unknown {mats['preset']!r}; known: {sorted(PRESETS) + ['orbital']}")
    else:
        _validate_layers(mats["layers"], err)
        if sd is not None and _num_list(dom.get("omega"), sd) and not any(e.startswith("materials") for e in err):
            corners = np.array(np.meshgrid(*dom["spatial_extent"])).reshape(sd, -1).T
            depth = corners @ np.asarray(dom["omega"], float)
            lo, hi = mats["layers"][0]["depth"][0], mats["layers"][-1]["depth"][1]
            if depth.min() < lo - 1e-12 or depth.max() > hi + 1e-12:
                err.append(f"materials.layers: depth range [{lo}, {hi}] does not cover the domain "
                           f"[{depth.min():g}, {depth.max():g}]")

    sc = section("scatter")
    eps = 0.0
    if "epsilon" in sc and "g_hg" in sc:
        err.append("scatter: epsilon and g_hg are mutually exclusive")
    if "epsilon" in sc:
        if not (_is_num(sc["epsilon"]) and sc["epsilon"] >= 0):
            err.append("scatter.epsilon: must be a nonnegative number")
        else:
            eps = sc["epsilon"]
    if "g_hg" in sc:
        if not (_is_num(sc["g_hg"]) and 0 <= sc["g_hg"] < 1):
            err.append("scatter.g_hg: must lie in [0, 1)")
        else:
            eps = epsilon_from_hg(sc["g_hg"])
    if sd == 1 and eps > 0:
        err.append("scatter: angular diffusion needs two spatial axes (spatial_dim = 1 forces epsilon = 0)")

    sp = section("spectrum")
    kind = sp.get("kind", "gaussian")
    if kind == "gaussian":
        for k in ("E0", "delta", "fluence"):
            if not (_is_num(sp.get(k)) and sp[k] > 0):
                err.append(f"spectrum.{k}: must be a positive number")
    elif kind == "tabulated":
        e, v = sp.get("energies"), sp.get("values")
        if not (_num_list(e) and _num_list(v) and len(e) == len(v) >= 2):
            err.append("spectrum.energies/values: must be equal-length numeric lists (>= 2 entries)")
        elif np.any(np.diff(e) <= 0) or min(v) < 0:
            err.append("spectrum.energies/values: energies increasing, values nonnegative")
    else:
        err.append(f"spectrum.kind: must be 'gaussian' or 'tabulated', got {kind!r}")
    prof = sp.get("profile")
    if prof is not None:
        if sd == 1:
            err.append("spectrum.profile: a transverse profile needs two spatial axes")
        elif not (isinstance(prof, dict) and _is_num(prof.get("centre", 0.0))
                  and _is_num(prof.get("sigma")) and prof["sigma"] > 0):
            err.append("spectrum.profile: needs numeric centre and positive sigma")

    if not _is_num(cfg.get("source", 0.0)):
        err.append("source: must be a number")

    so = section("solver")
    if so.get("method") not in SOLVERS:
        err.append(f"solver.method: must be one of {list(SOLVERS)}")
    if so.get("vi_tolerance") is not None and not (_is_num(so["vi_tolerance"]) and so["vi_tolerance"] > 0):
        err.append("solver.vi_tolerance: must be positive or null")
    if not (_is_int(so.get("vi_max_outer")) and so["vi_max_outer"] > 0):
        err.append("solver.vi_max_outer: must be a positive integer")

    do = section("dose")
    if do.get("kind") not in [r.value for r in Representation]:
        err.append(f"dose.kind: must be one of {[r.value for r in Representation]}")
    dres = do.get("resolution")
    if dres is not None:
        if not (isinstance(dres, list) and all(_is_int(n) and n >= 1 for n in dres)):
            err.append("dose.resolution: must be a list of positive integers")
        elif sd is not None and len(dres) != sd:
            err.append(f"dose.resolution: needs {sd} entries (spatial axes)")
    rule = do.get("energy_rule", "mesh")
    if rule != "mesh" and not (_is_int(rule) and rule >= 1):
        err.append("dose.energy_rule: 'mesh' or a positive number of uniform cells")

    ad = section("adaptivity")
    if not isinstance(ad.get("enabled"), bool):
        err.append("adaptivity.enabled: must be true or false")
    if not (_is_num(ad.get("theta")) and 0 < ad["theta"] <= 1):
        err.append("adaptivity.theta: must lie in (0, 1]")
    if not (_is_int(ad.get("max_levels")) and ad["max_levels"] >= 0):
        err.append("adaptivity.max_levels: must be a nonnegative integer")
    if ad.get("enabled") is True and sd is not None and sd != 1:
        err.append("adaptivity.enabled: local refinement is only available for one spatial axis")

    cv = section("convergence")
    if not (_is_int(cv.get("levels")) and cv["levels"] >= 1):
        err.append("convergence.levels: must be a positive integer")

    out = section("output")
    if "directory" in out and not isinstance(out["directory"], str):
        err.append("output.directory: must be a string")
    return err


def _canonical(cfg) -> str:
    body = {k: v for k, v in cfg.items() if k != "output"}
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


@dataclass
class Scenario:
    """A validated scenario; all derived objects are built on demand."""

    config: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        if not isinstance(raw, dict):
            raise ConfigError(["<root>: scenario must be a mapping"])
        if isinstance(raw.get("solver"), str):
            raw = {**raw, "solver": {"method": raw["solver"]}}
        cfg = _merge(DEFAULTS, raw)
        errors = validate(cfg)
        if errors:
            raise ConfigError(errors)
        return cls(cfg)

    @classmethod
    def from_file(cls, path) -> "Scenario":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError([f"<file>: cannot read {path}: {exc}"]) from exc
        except yaml.YAMLError as exc:
            raise ConfigError([f"<file>: not valid YAML: {exc}"]) from exc
        return cls.from_dict(raw)

    @classmethod
    def preset(cls, name: str) -> "Scenario":
        if name not in PRESET_SCENARIOS:
            raise ConfigError([f"--preset: unknown preset {name!r}; known: {sorted(PRESET_SCENARIOS)}"])
        return cls.from_dict(PRESET_SCENARIOS[name])

    def with_overrides(self, **sections) -> "Scenario":
        return Scenario.from_dict(_merge(self.config, sections))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.config, sort_keys=True)

    # -- identity
    @property
    def name(self) -> str:
        return self.config["name"]

    @property
    def hash(self) -> str:
        return hashlib.sha256(_canonical(self.config).encode()).hexdigest()[:16]

    @property
    def output_dir(self) -> Path:
        return Path(self.config["output"].get("directory", f"out/{self.name}"))

    # -- physics
    @property
    def epsilon(self) -> float:
        sc = self.config["scatter"]
        if "g_hg" in sc:
            return epsilon_from_hg(sc["g_hg"])
        return float(sc.get("epsilon", 0.0))

    def domain(self) -> Domain:
        d = self.config["domain"]
        return Domain(tuple(tuple(e) for e in d["spatial_extent"]), tuple(d["energy_interval"]),
                      tuple(d["omega"]))

    def materials(self) -> MaterialField:
        m, omega = self.config["materials"], self.config["domain"]["omega"]
        if m.get("preset") == "orbital":
            layers = [(b, row.with_density(rho, name)) for name, b, row, rho in ORBITAL_LAYERS]
        elif "preset" in m:
            return MaterialField.homogeneous(_material_row(m["preset"]), omega)
        else:
            layers = []
            for lay in m["layers"]:
                base = _material_row(lay["material"]) if "material" in lay else \
                    BraggKleeman(lay["alpha"], lay["p"])
                layers.append((tuple(lay["depth"]),
                               BraggKleeman(base.alpha, base.p, lay.get("rho", base.rho), lay.get("name", base.name))))
        try:
            return MaterialField(layers, omega)
        except MaterialError as exc:
            raise ConfigError([f"materials: {exc}"]) from exc

    def interfaces(self) -> list[float]:
        mf = self.materials()
        return [float(v) for v in mf.interfaces]

    def spectrum(self):
        sp = self.config["spectrum"]
        if sp.get("kind", "gaussian") == "gaussian":
            return GaussianSpectrum(sp["E0"], sp["delta"], sp["fluence"],
                                    tuple(self.config["domain"]["energy_interval"]))
        e, v = np.asarray(sp["energies"], float), np.asarray(sp["values"], float)
        return lambda E: np.interp(E, e, v, left=0.0, right=0.0)

    @property
    def g_sup(self) -> float:
        sp = self.config["spectrum"]
        if sp.get("kind", "gaussian") == "gaussian":
            return self.spectrum().peak
        return float(max(sp["values"]))

    def exact(self) -> ExactFluence | None:
        """Closed-form fluence when it applies: one material, no diffusion, no source, no profile."""
        sp = self.config["spectrum"]
        mf = self.materials()
        if (mf.is_homogeneous and self.epsilon == 0 and self.config["source"] == 0
                and sp.get("kind", "gaussian") == "gaussian" and sp.get("profile") is None):
            return ExactFluence(self.spectrum(), mf.materials[0], tuple(self.config["domain"]["omega"]))
        return None

    def inflow(self):
        ex = self.exact()
        if ex is not None:
            return ex
        spec = self.spectrum()
        prof = self.config["spectrum"].get("profile")
        if prof is None:
            return lambda pts: spec(pts[:, -1])
        omega = np.asarray(self.config["domain"]["omega"], float)
        perp = np.array([-omega[1], omega[0]])
        c, s = float(prof.get("centre", 0.0)), float(prof["sigma"])
        return lambda pts: spec(pts[:, -1]) * np.exp(-((pts[:, :-1] @ perp - c) ** 2) / (2 * s * s))

    def coefficients(self) -> TransportCoefficients:
        src = float(self.config["source"])
        return TransportCoefficients(
            np.asarray(self.config["domain"]["omega"], float), self.materials(), epsilon=self.epsilon,
            inflow=self.inflow(), source=(lambda pts: np.full(len(pts), src)) if src else None,
            g_sup=self.g_sup,
        )

    # -- discretisation
    def _snap(self):
        if not self.config["mesh"].get("snap_interfaces", True):
            return {}
        omega = self.config["domain"]["omega"]
        ifs = self.interfaces()
        # interfaces are planes of constant depth; they align with a grid axis only for axis beams
        axis = [k for k, w in enumerate(omega) if abs(abs(w) - 1.0) < 1e-12]
        if not ifs or not axis:
            return {}
        k = axis[0]
        return {k: [v * omega[k] for v in ifs]}

    def mesh(self, resolution=None):
        res = resolution or self.config["mesh"]["resolution"]
        return build_structured(self.domain(), res, snap=self._snap())

    def dose_grid(self):
        d = self.config["domain"]
        res = self.config["dose"].get("resolution") or self.config["mesh"]["resolution"][:-1]
        return build_spatial_grid(d["spatial_extent"], res, snap=self._snap())

    def energy_rule(self, mesh) -> EnergyQuadrature:
        rule = self.config["dose"].get("energy_rule", "mesh")
        if rule == "mesh":
            return EnergyQuadrature.from_mesh(mesh)
        lo, hi = self.config["domain"]["energy_interval"]
        return EnergyQuadrature.uniform(lo, hi, int(rule))

    def problem(self, resolution=None) -> TransportProblem:
        so = self.config["solver"]
        return TransportProblem(self.mesh(resolution), self.coefficients(), so["method"],
                                self.exact(), so.get("vi_tolerance"), so["vi_max_outer"])


def load_scenario(config=None, preset=None) -> Scenario:
    if (config is None) == (preset is None):
        raise ConfigError(["<cli>: give exactly one of --config or --preset"])
    return Scenario.preset(preset) if preset else Scenario.from_file(config)
