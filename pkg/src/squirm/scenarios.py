"""Scenario schema, paper presets, and model construction.

A scenario is a nested mapping (YAML or JSON on disk) with blocks mesh,
material, substrate, time, control, clamps, gait, ocp, newton, element,
beam and output.  Validation collects every problem before failing, and the
resolved scenario (all defaults filled in) is what lands in meta.json, so a
finished run's metadata re-ingests as a config and reproduces the run.

Friction orientation note: mu_f acts on sliding along the +X element axis.
The locomotion targets sit in the -X direction of the mesh frame, so the
presets that break fore/aft symmetry resist +X sliding (mu_f > mu_b); this
mirrors the published coefficient pairs, whose "forward" is the direction
of intended travel.
"""

import copy
from dataclasses import dataclass

import numpy as np

from .assembly import ControlMap, FEModel
from .errors import ConfigError
from .forward import NewtonConfig, TauScheme
from .gaits import GaitSpec
from .material import MaterialParams
from .mesh import build_box_mesh
from .ocp import OcpConfig
from .substrate import FrictionParams, ViscousParams

MODES = ("forward", "ocp", "beam-benchmark", "audit")

DEFAULTS = {
    "name": "custom",
    "mode": "forward",
    "mesh": {
        "L": 10.0, "B": 1.0, "Bz": None, "nx": 20, "ny": 2, "nz": 2,
        "chamber_axis": "z", "ventral_split": 0.5, "contact": "bottom",
        "pair_chambers": True,
    },
    "material": {"mu": 100.0, "lam": 10.0},
    "substrate": {"mu_l": 1.0, "mu_f": 1.0, "mu_b": 1.0, "beta": 0.1,
                  "mu_o": 1e-3},
    "time": {"T": 4.0, "dt": 0.05, "scheme": "se"},
    "control": {"map": "column-dipole", "polarity": None},
    "clamps": {"kind": "none", "width": 1},
    "gait": None,
    "ocp": None,
    # The iteration budget covers start-up transients, where a gait jumps
    # onto the undeformed body and the arch/bend pops within one step.
    "newton": {"tol": 1e-6, "max_iter": 60, "max_halvings": 4},
    "element": {"enhanced": True},
    "beam": {"nx_values": [5, 10, 20, 40], "nu_values": [0.25, 0.5, 1.0]},
    "output": {"save_state_every": 0},
}

GAIT_DEFAULTS = {"kind": "undulatory", "u_o": 0.3, "f": 1.0, "gamma": 1.0,
                 "n_strokes": 4}

OCP_DEFAULTS = {
    "x_d": [1.0, 0.5, 0.5], "alpha": 1e-3, "u_min": -0.3, "u_max": 0.3,
    "tol": 1e-3, "max_sweeps": 150, "theta_max": 0.25, "theta_policy": "bb",
    "u0": 0.01, "monotone_safeguard": True,
}

PRESETS = {
    "undulatory-paper": {
        "name": "undulatory-paper",
        "mode": "forward",
        # Lateral chambers: the antagonistic dipole bends the body in the
        # substrate plane, which is what lateral/tangential friction
        # anisotropy rectifies.
        "mesh": {"chamber_axis": "y"},
        "substrate": {"mu_l": 10.0, "mu_f": 1.0, "mu_b": 1.0},
        "gait": {"kind": "undulatory", "u_o": 0.3, "f": 1.0, "gamma": 1.0},
        "ocp": {"x_d": [1.0, 0.5, 0.5], "u_min": -0.3, "u_max": 0.3,
                "theta_policy": "bb"},
    },
    "crawling-paper": {
        "name": "crawling-paper",
        "mode": "forward",
        "mesh": {"chamber_axis": "z"},
        "substrate": {"mu_l": 1.0, "mu_f": 10.0, "mu_b": 1.0},
        "gait": {"kind": "crawling", "u_o": 0.3, "f": 2.0, "gamma": 1.0},
        "ocp": {"x_d": [1.0, 0.5, 0.5], "u_min": -0.3, "u_max": 0.3,
                "theta_policy": "constant"},
    },
    "inching-paper": {
        "name": "inching-paper",
        "mode": "forward",
        "mesh": {"B": 0.5, "chamber_axis": "z"},
        "substrate": {"mu_l": 1.0, "mu_f": 1.0, "mu_b": 0.0},
        "clamps": {"kind": "ends-bottom-z", "width": 1},
        "gait": {"kind": "inching", "u_o": 0.75, "f": 1.0, "gamma": 0.5,
                 "n_strokes": 4},
        "ocp": {"x_d": [1.0, 0.25, 0.25], "u_min": -0.3, "u_max": 0.0,
                "theta_policy": "constant"},
    },
    "beam-paper": {
        "name": "beam-paper",
        "mode": "beam-benchmark",
        "mesh": {"contact": "none"},
        "substrate": {"mu_l": 0.0, "mu_f": 0.0, "mu_b": 0.0},
    },
    "scaled-paper": {
        "name": "scaled-paper",
        "mode": "forward",
        "mesh": {"L": 20.0, "B": 2.0, "chamber_axis": "y"},
        "substrate": {"mu_l": 10.0, "mu_f": 1.0, "mu_b": 1.0},
        "gait": {"kind": "undulatory", "u_o": 0.3, "f": 1.0, "gamma": 1.0},
        "ocp": {"x_d": [5.0, 1.0, 1.0], "u_min": -0.3, "u_max": 0.3},
    },
}


def _deep_update(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve(config=None, preset=None):
    """Merge defaults <- preset <- config into a fully resolved scenario."""
    scenario = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                [f"unknown preset {preset!r}; options: {sorted(PRESETS)}"])
        scenario = _deep_update(scenario, PRESETS[preset])
    if config:
        if "scenario" in config:  # re-ingested meta.json
            config = config["scenario"]
        scenario = _deep_update(scenario, config)
    if scenario.get("gait"):
        scenario["gait"] = _deep_update(GAIT_DEFAULTS, scenario["gait"])
    if scenario.get("ocp"):
        scenario["ocp"] = _deep_update(OCP_DEFAULTS, scenario["ocp"])
    validate(scenario)
    return scenario


def validate(scenario):
    """All-at-once validation of a resolved scenario."""
    errors = []

    def check(cond, msg):
        if not cond:
            errors.append(msg)

    known = set(DEFAULTS)
    for key in scenario:
        check(key in known, f"unknown top-level key {key!r}")
    mode = scenario.get("mode")
    check(mode in MODES, f"mode must be one of {MODES}, got {mode!r}")

    mesh = scenario.get("mesh", {})
    for dim in ("L", "B"):
        check(mesh.get(dim, 0) > 0, f"mesh.{dim} must be positive")
    for n in ("nx", "ny", "nz"):
        check(int(mesh.get(n, 0)) >= 1, f"mesh.{n} must be >= 1")
    check(mesh.get("chamber_axis") in ("y", "z"),
          "mesh.chamber_axis must be 'y' or 'z'")
    check(mesh.get("contact") in ("bottom", "none"),
          "mesh.contact must be 'bottom' or 'none'")

    matl = scenario.get("material", {})
    check(matl.get("mu", 0) > 0 and matl.get("lam", 0) > 0,
          "material moduli must be positive")

    sub = scenario.get("substrate", {})
    check(min(sub.get("mu_l", 0), sub.get("mu_f", 0), sub.get("mu_b", 0)) >= 0,
          "friction coefficients must be non-negative")
    check(sub.get("beta", 0) > 0, "substrate.beta must be positive")
    check(sub.get("mu_o", 0) > 0, "substrate.mu_o must be positive")

    tm = scenario.get("time", {})
    T, dt = tm.get("T", 0), tm.get("dt", 0)
    check(T > 0 and dt > 0, "time.T and time.dt must be positive")
    if T > 0 and dt > 0:
        n = round(T / dt)
        check(abs(n * dt - T) < 1e-9 * max(T, 1.0),
              f"time.dt={dt} does not divide time.T={T}")
    try:
        TauScheme.preset(tm.get("scheme", "se"))
    except ValueError as exc:
        errors.append(str(exc))

    ctl = scenario.get("control", {})
    check(ctl.get("map") in ("column-dipole", "per-element", "uniform-column"),
          "control.map must be column-dipole, per-element or uniform-column")

    clamps = scenario.get("clamps", {})
    check(clamps.get("kind") in ("none", "left-face-x", "ends-bottom-z"),
          "clamps.kind must be none, left-face-x or ends-bottom-z")

    if mode == "forward":
        check(bool(scenario.get("gait")), "forward mode requires a gait block")
    if mode == "ocp":
        check(bool(scenario.get("ocp")), "ocp mode requires an ocp block")
    gait = scenario.get("gait")
    if gait:
        try:
            GaitSpec(kind=gait["kind"], u_o=gait["u_o"], f=gait["f"],
                     gamma=gait["gamma"], n_strokes=gait["n_strokes"])
        except (ConfigError, KeyError) as exc:
            errors.append(f"gait block invalid: {exc}")
    ocp = scenario.get("ocp")
    if ocp:
        check(len(ocp.get("x_d", [])) == 3, "ocp.x_d must be a 3-vector")
        check(ocp.get("alpha", 0) > 0, "ocp.alpha must be positive")
        check(ocp.get("u_min", 0) < ocp.get("u_max", 0),
              "ocp.u_min must be below ocp.u_max")
        check(ocp.get("theta_policy") in ("bb", "constant"),
              "ocp.theta_policy must be 'bb' or 'constant'")

    if errors:
        raise ConfigError(errors)


def _polarity(scenario):
    explicit = scenario["control"].get("polarity")
    if explicit:
        return explicit
    gait = scenario.get("gait")
    if gait:
        return GaitSpec(kind=gait["kind"], u_o=gait["u_o"], f=gait["f"],
                        gamma=gait["gamma"],
                        n_strokes=gait["n_strokes"]).polarity
    return "antagonistic"


def _clamp_mask(scenario, mesh):
    kind = scenario["clamps"]["kind"]
    fixed = np.zeros(3 * mesh.n_nodes, dtype=bool)
    if kind == "none":
        return fixed
    if kind == "left-face-x":
        left = np.flatnonzero(mesh.nodes[:, 0] < 1e-12 * mesh.dims[0])
        fixed[3 * left] = True
        return fixed
    # ends-bottom-z: bottom-face nodes of the first/last `width` element
    # columns stay on the substrate plane (vertical DOF only).
    width = int(scenario["clamps"].get("width", 1))
    hx = mesh.dims[0] / mesh.shape[0]
    on_bottom = mesh.nodes[:, 2] < 1e-12 * mesh.dims[2]
    near_end = (mesh.nodes[:, 0] <= width * hx + 1e-12) \
        | (mesh.nodes[:, 0] >= mesh.dims[0] - width * hx - 1e-12)
    nodes = np.flatnonzero(on_bottom & near_end)
    fixed[3 * nodes + 2] = True
    return fixed


@dataclass
class Built:
    scenario: dict
    model: FEModel
    tau: TauScheme
    newton: NewtonConfig
    times: np.ndarray
    gait: GaitSpec = None
    u_table: np.ndarray = None
    ocp: OcpConfig = None
    u0: float = 0.0


def build(scenario):
    """Instantiate the model and run inputs of a resolved scenario."""
    mm = scenario["mesh"]
    mesh = build_box_mesh(
        mm["L"], mm["B"], int(mm["nx"]), int(mm["ny"]), int(mm["nz"]),
        ventral_split=mm["ventral_split"], chamber_axis=mm["chamber_axis"],
        Bz=mm["Bz"], pair_chambers=mm["pair_chambers"],
        contact=mm["contact"],
    )
    cmap_kind = scenario["control"]["map"]
    if cmap_kind == "column-dipole":
        cmap = ControlMap.column_dipole(mesh, _polarity(scenario))
    elif cmap_kind == "per-element":
        cmap = ControlMap.per_element(mesh)
    else:
        cmap = ControlMap.uniform_column(mesh)

    model = FEModel(
        mesh,
        MaterialParams(scenario["material"]["mu"], scenario["material"]["lam"]),
        FrictionParams(
            mu_l=scenario["substrate"]["mu_l"],
            mu_f=scenario["substrate"]["mu_f"],
            mu_b=scenario["substrate"]["mu_b"],
            beta=scenario["substrate"]["beta"],
        ),
        ViscousParams(scenario["substrate"]["mu_o"]),
        cmap,
        fixed_mask=_clamp_mask(scenario, mesh),
        enhanced=scenario["element"]["enhanced"],
    )

    tm = scenario["time"]
    n_steps = int(round(tm["T"] / tm["dt"]))
    times = tm["dt"] * np.arange(n_steps + 1)
    tau = TauScheme.preset(tm["scheme"])
    nw = scenario["newton"]
    newton = NewtonConfig(tol_residual=nw["tol"], max_iter=int(nw["max_iter"]),
                          max_halvings=int(nw["max_halvings"]))

    gait_spec = None
    u_table = None
    if scenario.get("gait"):
        gb = scenario["gait"]
        gait_spec = GaitSpec(kind=gb["kind"], u_o=gb["u_o"], f=gb["f"],
                             gamma=gb["gamma"], n_strokes=gb["n_strokes"])
        from .gaits import sample_to_channels
        u_table = sample_to_channels(gait_spec, cmap.s_coords, times)

    ocp_cfg = None
    u0 = 0.0
    if scenario.get("ocp"):
        ob = scenario["ocp"]
        ocp_cfg = OcpConfig(
            x_d=np.asarray(ob["x_d"], dtype=float), alpha=ob["alpha"],
            u_min=ob["u_min"], u_max=ob["u_max"], tol=ob["tol"],
            max_sweeps=int(ob["max_sweeps"]), theta_max=ob["theta_max"],
            theta_policy=ob["theta_policy"],
            monotone_safeguard=ob["monotone_safeguard"],
        )
        u0 = float(ob["u0"])

    return Built(scenario=scenario, model=model, tau=tau, newton=newton,
                 times=times, gait=gait_spec, u_table=u_table, ocp=ocp_cfg,
                 u0=u0)
