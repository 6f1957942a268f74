"""Command-line front end: field sweeps, g2 simulation/fitting, estimators.

All file outputs are explicit paths, CSV cells carry nine significant digits
with LF line endings so identical configs and seeds give byte-identical
files, and every run writes a JSON manifest (config hash, seed, version,
timestamps, outputs) next to its primary output.
"""

import argparse
import concurrent.futures
import datetime
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dynamics import (
    DynamicsError,
    RateParameters,
    build_rate_matrix,
    default_delays,
    odmr_pl_variation,
    pl_variation,
    simulate_g2,
    steady_pl,
    steady_state,
)
from .estimators import GeometryParams, OrbitalComposition, estimate_zfs, get_species, hyperfine
from .photonstats import FitError, TagStream, compute_g2, estimate_rates_three_level, fit_g2_curve
from .spin_models import FieldVector, ZeroFieldSplitting, triplet_eigensystem
from .symmetry import GroundSpin, enumerate_level_diagrams, get_diagram

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

CONFIG_KEYS = (
    "ground",
    "diagram",
    "e_over_d",
    "t1_us",
    "gamma_s_mhz",
    "gamma_e_mhz",
    "gamma_isc1_mhz",
    "gamma_isc2_mhz",
    "epsilon",
)


def format_sig(x):
    """Nine-significant-digit cell formatting shared by all CSV writers."""
    return format(float(x), ".9g")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_sig(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class ModelConfig:
    """Level diagram plus rate parameters, mirroring the JSON config keys."""

    ground: str = "singlet"
    diagram: str = "b"
    e_over_d: float = -0.33
    t1_us: float = 50.0
    gamma_s_mhz: float = 820.0
    gamma_e_mhz: float = 82.0
    gamma_isc1_mhz: float = 7.7
    gamma_isc2_mhz: float = 0.85
    epsilon: float = 0.02

    def to_dict(self):
        return {k: getattr(self, k) for k in CONFIG_KEYS}

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def rate_parameters(self):
        return RateParameters(
            gamma_e=self.gamma_e_mhz,
            gamma_s=self.gamma_s_mhz,
            gamma_isc1=self.gamma_isc1_mhz,
            gamma_isc2=self.gamma_isc2_mhz,
            t1_us=self.t1_us,
            epsilon=self.epsilon,
        )

    def level_diagram(self):
        return get_diagram(GroundSpin(self.ground), self.diagram)

    def zfs(self):
        return ZeroFieldSplitting.from_ratio(self.e_over_d)


def load_config(args):
    data = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data.update(json.load(fh))
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            data[key] = flag
    base = ModelConfig().to_dict()
    base.update(data)
    return ModelConfig.from_dict(base)


def config_hash(payload):
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class RunManifest:
    config: dict
    seed: int = 0
    outputs: list = field(default_factory=list)

    def write(self, primary_output):
        payload = {
            "tool": "spinsim",
            "version": __version__,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "seed": self.seed,
            "timestamp_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "outputs": [os.fspath(p) for p in self.outputs],
        }
        path = os.fspath(primary_output) + ".manifest.json"
        write_json(path, payload)
        return path


def n_threads(args):
    if getattr(args, "threads", None):
        return max(int(args.threads), 1)
    env = os.environ.get("SPINSIM_THREADS")
    return max(int(env), 1) if env else 1


def _parallel_map(fn, items, threads):
    if threads <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_diagrams_list(args):
    ground = GroundSpin(args.ground)
    payload = [d.to_dict() for d in enumerate_level_diagrams(ground)]
    text = json.dumps(payload, indent=2)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _field_grid(args):
    """(bx, by, bz) sample points for the selected sweep mode, in grid order."""
    mode = args.mode
    if mode == "in_plane_map":
        if args.grid_n % 2 == 0:
            raise ValueError("grid_n must be odd so that B=0 is sampled")
        axis = np.linspace(-args.b_max, args.b_max, args.grid_n)
        return [(bx, by, 0.0) for by in axis for bx in axis]
    if mode == "phi_sweep":
        if args.n_points < 2:
            raise ValueError("n_points must be at least 2")
        phis = np.linspace(0.0, 2.0 * math.pi, args.n_points, endpoint=False)
        return [(args.b * math.cos(p), args.b * math.sin(p), 0.0) for p in phis]
    if mode == "magnitude_sweep":
        if args.n_points < 2:
            raise ValueError("n_points must be at least 2")
        mags = np.linspace(0.0, args.b_max, args.n_points)
        if args.z_axis:
            return [(0.0, 0.0, b) for b in mags]
        return [(b * math.cos(args.phi), b * math.sin(args.phi), 0.0) for b in mags]
    raise ValueError(f"unknown sweep mode {mode!r}")


def _model_at_field(config, bx, by, bz):
    eig = triplet_eigensystem(config.zfs(), FieldVector(bx, by, bz))
    return build_rate_matrix(config.level_diagram(), config.rate_parameters(), eig)


def cmd_pl_map(args):
    config = load_config(args)
    points = _field_grid(args)
    rm0 = _model_at_field(config, 0.0, 0.0, 0.0)
    pl0 = steady_pl(rm0)
    shelf = [i for i in range(rm0.dim) if i not in rm0.ground_indices and i not in rm0.excited_indices]

    def evaluate(point):
        bx, by, bz = point
        rm = _model_at_field(config, bx, by, bz)
        x = steady_state(rm)
        pl = steady_pl(rm, x)
        meta = float(sum(x[i] for i in shelf))
        return (bx, by, bz, pl, pl_variation(pl, pl0), meta)

    rows = _parallel_map(evaluate, points, n_threads(args))
    header = ["bx", "by", "bz", "pl_mhz", "pl_variation", "metastable_population"]
    write_csv(args.output, header, [tuple(float(v) for v in row) for row in rows])
    manifest = RunManifest(config={**config.to_dict(), "sweep": vars_for_manifest(args)}, outputs=[args.output])
    manifest.write(args.output)
    return EXIT_OK


def vars_for_manifest(args):
    skip = {"func", "config", "output", "threads"}
    return {k: v for k, v in vars(args).items() if k not in skip and not callable(v) and k not in CONFIG_KEYS}


def _delay_grid(args):
    return default_delays(args.t_min_s, args.t_max_s, args.n_delays)


def cmd_g2_sim(args):
    config = load_config(args)
    phis = [math.radians(p) for p in args.phi_deg]
    delays = _delay_grid(args)
    params = config.rate_parameters()
    diagram = config.level_diagram()
    zfs = config.zfs()
    orders = tuple(args.orders)

    initial = "steady" if args.steady_control else None

    def evaluate(phi):
        eig = triplet_eigensystem(zfs, FieldVector.in_plane(args.b, phi))
        curve = simulate_g2(diagram, params, eig, delays, initial_state=initial)
        fit = fit_g2_curve(curve, orders=orders) if not args.steady_control else None
        return curve, fit

    results = _parallel_map(evaluate, phis, n_threads(args))
    curve_rows = []
    fit_rows = []
    for phi_deg, (curve, fit) in zip(args.phi_deg, results):
        for t, v in zip(curve.delays, curve.values):
            curve_rows.append((float(phi_deg), float(t), float(v)))
        if fit is None:
            continue
        row = [float(phi_deg), fit.order]
        for c, tau in zip(fit.amplitudes, fit.lifetimes_s):
            row.extend([float(c), float(tau)])
        row.append(float(fit.reduced_chi2))
        fit_rows.append(tuple(row))
    write_csv(args.output, ["phi_deg", "t_s", "g2"], curve_rows)
    outputs = [args.output]
    if fit_rows:
        fits_path = os.path.splitext(args.output)[0] + "_fits.csv"
        max_order = max(r[1] for r in fit_rows)
        header = ["phi_deg", "order"]
        for i in range(1, max_order + 1):
            header += [f"c{i}", f"tau{i}_s"]
        header.append("reduced_chi2")
        padded = []
        for row in fit_rows:
            row = list(row)
            while len(row) < len(header):
                row.insert(-1, float("nan"))
            padded.append(tuple(row))
        write_csv(fits_path, header, padded)
        outputs.append(fits_path)
    manifest = RunManifest(
        config={**config.to_dict(), "sweep": vars_for_manifest(args)},
        outputs=outputs,
    )
    manifest.write(args.output)
    return EXIT_OK


def cmd_correlate(args):
    path = args.tags
    stream = TagStream.read_binary(path) if path.endswith(".bin") else TagStream.read_csv(path)
    hist = compute_g2(
        stream,
        window_s=(args.t_min_s, args.t_max_s),
        binning=args.binning,
        points_per_decade=args.points_per_decade,
        bin_width_s=args.bin_width_s,
    )
    rows = [
        (
            float(hist.bin_edges_s[k]),
            float(hist.bin_edges_s[k + 1]),
            float(hist.bin_centers_s[k]),
            float(hist.values[k]),
            float(hist.poisson_sigma[k]),
            int(hist.counts[k]),
        )
        for k in range(len(hist.counts))
    ]
    write_csv(args.output, ["bin_lo_s", "bin_hi_s", "t_s", "g2", "sigma", "counts"], rows)
    manifest = RunManifest(config={"tags": path, **vars_for_manifest(args)}, outputs=[args.output])
    manifest.write(args.output)
    return EXIT_OK


def cmd_g2_fit(args):
    import csv as _csv

    from .photonstats import G2Histogram, fit_empirical

    with open(args.histogram, newline="") as fh:
        reader = _csv.DictReader(fh)
        rows = list(reader)
    required = {"bin_lo_s", "bin_hi_s", "counts", "g2", "sigma"}
    if rows and required.issubset(rows[0].keys()):
        edges = [float(r["bin_lo_s"]) for r in rows] + [float(rows[-1]["bin_hi_s"])]
        counts = np.array([float(r["counts"]) for r in rows])
        values = np.array([float(r["g2"]) for r in rows])
        sigma = np.array([float(r["sigma"]) for r in rows])
        with np.errstate(divide="ignore", invalid="ignore"):
            norm = np.where(values > 0, counts / values, 1.0 / np.maximum(sigma, 1e-300))
        hist = G2Histogram(
            bin_edges_s=np.array(edges),
            counts=counts,
            normalization=norm,
            values=values,
            poisson_sigma=sigma,
        )
        fit = fit_empirical(hist, orders=tuple(args.orders))
    else:
        raise ValueError("histogram CSV must carry bin_lo_s,bin_hi_s,t_s,g2,sigma,counts columns")
    payload = {
        "n": fit.order,
        "C": list(fit.amplitudes),
        "tau_s": list(fit.lifetimes_s),
        "reduced_chi2": fit.reduced_chi2,
        "covariance": fit.covariance.tolist(),
        "candidate_reduced_chi2": {str(k): v for k, v in fit.candidate_chi2.items()},
        "identifiable": fit.identifiable,
    }
    if args.rho is not None:
        from .photonstats import background_correct_amplitudes

        payload["C_corrected"] = list(background_correct_amplitudes(fit, args.rho))
        payload["rho"] = args.rho
    write_json(args.output, payload)
    manifest = RunManifest(config={"histogram": args.histogram, **vars_for_manifest(args)}, outputs=[args.output])
    manifest.write(args.output)
    return EXIT_OK


def cmd_rates(args):
    gamma_s, gamma_isc1, gamma_isc2 = estimate_rates_three_level(args.tau1, args.tau2, args.c2, args.x)
    payload = {
        "gamma_s_MHz": gamma_s,
        "gamma_isc1_MHz": gamma_isc1,
        "gamma_isc2_MHz": gamma_isc2,
    }
    if args.output:
        write_json(args.output, payload)
        RunManifest(config=vars_for_manifest(args), outputs=[args.output]).write(args.output)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_odmr_map(args):
    config = load_config(args)
    points = _field_grid(args)
    pair = tuple(int(v) for v in args.pair.split(","))
    if len(pair) != 2:
        raise ValueError("--pair expects two comma-separated state indices")
    params = config.rate_parameters()
    diagram = config.level_diagram()
    zfs = config.zfs()

    def evaluate(point):
        bx, by, bz = point
        eig = triplet_eigensystem(zfs, FieldVector(bx, by, bz))
        rm = build_rate_matrix(diagram, params, eig)
        pl = steady_pl(rm)
        variation = odmr_pl_variation(diagram, params, eig, pair, args.gamma_odmr)
        return (bx, by, bz, pl, variation)

    rows = _parallel_map(evaluate, points, n_threads(args))
    write_csv(args.output, ["bx", "by", "bz", "pl_mhz", "odmr_variation"], rows)
    manifest = RunManifest(config={**config.to_dict(), "sweep": vars_for_manifest(args)}, outputs=[args.output])
    manifest.write(args.output)
    return EXIT_OK


def cmd_estimate(args):
    if args.what == "zfs":
        d_ghz, e_ghz = estimate_zfs(GeometryParams(x12=args.x12, y12=args.y12, z12=args.z12))
        payload = {"D_GHz": d_ghz, "E_GHz": e_ghz}
    else:
        orbital = (
            OrbitalComposition.sigma(args.eta)
            if args.orbital == "sigma"
            else OrbitalComposition.pi(args.eta)
        )
        species = get_species(args.species, path=args.species_table)
        f, d, a_par, a_perp = hyperfine(species, orbital)
        payload = {
            "species": args.species,
            "orbital": args.orbital,
            "eta": args.eta,
            "fermi_contact_MHz": f,
            "dipolar_MHz": d,
            "A_parallel_MHz": a_par,
            "A_perp_MHz": a_perp,
        }
    if args.output:
        write_json(args.output, payload)
        RunManifest(config=vars_for_manifest(args), outputs=[args.output]).write(args.output)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file (flags override its keys)")
    p.add_argument("--ground", choices=["singlet", "triplet"])
    p.add_argument("--diagram")
    p.add_argument("--e-over-d", dest="e_over_d", type=float)
    p.add_argument("--t1-us", dest="t1_us", type=float)
    p.add_argument("--gamma-s-mhz", dest="gamma_s_mhz", type=float)
    p.add_argument("--gamma-e-mhz", dest="gamma_e_mhz", type=float)
    p.add_argument("--gamma-isc1-mhz", dest="gamma_isc1_mhz", type=float)
    p.add_argument("--gamma-isc2-mhz", dest="gamma_isc2_mhz", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--threads", type=int, help="worker threads (default SPINSIM_THREADS or 1)")


def _add_sweep_flags(p):
    p.add_argument("--mode", choices=["in_plane_map", "phi_sweep", "magnitude_sweep"], default="in_plane_map")
    p.add_argument("--b-max", dest="b_max", type=float, default=2.0)
    p.add_argument("--grid-n", dest="grid_n", type=int, default=21)
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("--n-points", dest="n_points", type=int, default=16)
    p.add_argument("--phi", type=float, default=0.0, help="radians, for magnitude_sweep")
    p.add_argument("--z-axis", dest="z_axis", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="spinsim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"spinsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagrams", help="enumerate level diagrams")
    dsub = p.add_subparsers(dest="diagrams_command", required=True)
    pl = dsub.add_parser("list")
    pl.add_argument("--ground", choices=["singlet", "triplet"], required=True)
    pl.add_argument("--output")
    pl.set_defaults(func=cmd_diagrams_list)

    p = sub.add_parser("pl-map", help="steady-state PL over a field sweep")
    _add_config_flags(p)
    _add_sweep_flags(p)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_pl_map)

    p = sub.add_parser("g2-sim", help="simulate g2 curves over field angles and fit them")
    _add_config_flags(p)
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("--phi-deg", dest="phi_deg", type=float, nargs="+", required=True)
    p.add_argument("--t-min-s", dest="t_min_s", type=float, default=1e-9)
    p.add_argument("--t-max-s", dest="t_max_s", type=float, default=1e-2)
    p.add_argument("--n-delays", dest="n_delays", type=int, default=200)
    p.add_argument("--orders", type=int, nargs="+", default=[2])
    p.add_argument(
        "--steady-control",
        dest="steady_control",
        action="store_true",
        help="initialize from the steady state (flat control curves, no fits)",
    )
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_g2_sim)

    p = sub.add_parser("correlate", help="histogram a two-channel tag stream")
    p.add_argument("--tags", required=True, help="CSV (channel,timestamp_ps) or .bin")
    p.add_argument("--t-min-s", dest="t_min_s", type=float, required=True)
    p.add_argument("--t-max-s", dest="t_max_s", type=float, required=True)
    p.add_argument("--binning", choices=["log", "linear"], default="log")
    p.add_argument("--points-per-decade", dest="points_per_decade", type=int, default=25)
    p.add_argument("--bin-width-s", dest="bin_width_s", type=float)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("g2-fit", help="fit the empirical model to a histogram CSV")
    p.add_argument("--histogram", required=True)
    p.add_argument("--orders", type=int, nargs="+", default=[2, 3])
    p.add_argument("--rho", type=float, help="background ratio for corrected amplitudes")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_g2_fit)

    p = sub.add_parser("rates", help="three-level rate inversion")
    p.add_argument("--tau1", type=float, required=True, help="antibunching time (s)")
    p.add_argument("--tau2", type=float, required=True, help="bunching time (s)")
    p.add_argument("--c2", type=float, required=True)
    p.add_argument("--x", type=float, required=True, help="saturation parameter")
    p.add_argument("--output")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("odmr-map", help="PL variation under resonant pair mixing")
    _add_config_flags(p)
    _add_sweep_flags(p)
    p.add_argument("--pair", required=True, help="1-based state pair, e.g. 3,4")
    p.add_argument("--gamma-odmr", dest="gamma_odmr", type=float, default=100.0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_odmr_map)

    p = sub.add_parser("estimate", help="closed-form ZFS / hyperfine estimators")
    esub = p.add_subparsers(dest="what", required=True)
    pz = esub.add_parser("zfs")
    pz.add_argument("--x12", type=float, required=True)
    pz.add_argument("--y12", type=float, required=True)
    pz.add_argument("--z12", type=float, default=0.0)
    pz.add_argument("--output")
    pz.set_defaults(func=cmd_estimate, what="zfs")
    ph = esub.add_parser("hyperfine")
    ph.add_argument("--species", required=True)
    ph.add_argument("--orbital", choices=["sigma", "pi"], required=True)
    ph.add_argument("--eta", type=float, default=1.0)
    ph.add_argument("--species-table", dest="species_table")
    ph.add_argument("--output")
    ph.set_defaults(func=cmd_estimate, what="hyperfine")

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DynamicsError, FitError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
