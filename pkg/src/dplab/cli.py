"""``dplab`` command line.

Every subcommand writes its outputs plus ``manifest.json`` into ``--out``.
Settings come from flags, then a ``key=value`` file given by ``--config``,
then built-in defaults.  Exit status: 0 success, 1 usage error, 2 when a
checked mathematical property fails on the computed data.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fieldio import fmt, write_columns_csv, write_field_csv

log = logging.getLogger("dplab")

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2

# built-in defaults per setting; the grid defaults differ for dense linear algebra
DEFAULTS = {
    "c": 3.0,
    "k": 1.0,
    "N": 4096,
    "L": 64.0,
    "dt": 1e-3,
    "tend": 10.0,
    "sample_every": 100,
    "snapshot_every": 0,
    "cfl": 0.5,
    "delta": 0.0,
    "deltas": "1e-3,3e-3,1e-2",
    "shape": "gaussian",
    "s_matched": True,
    "beta": 0.0,
    "workers": 0,
    "lin_N": 1024,
    "c_values": "2.5,3,4,6,10",
    "samples": 100,
    "seed": 0,
}
SUBCOMMAND_DEFAULTS = {
    "spectrum": {"N": 1024},
    "coercivity": {"N": 1024},
    "stability-sweep": {"tend": 50.0},
}
CONVERTERS = {
    "c": float,
    "k": float,
    "N": int,
    "L": float,
    "dt": float,
    "tend": float,
    "sample_every": int,
    "snapshot_every": int,
    "cfl": float,
    "delta": float,
    "deltas": str,
    "shape": str,
    "s_matched": lambda s: s if isinstance(s, bool) else str(s).lower() in ("1", "true", "yes", "on"),
    "beta": float,
    "workers": int,
    "lin_N": int,
    "c_values": str,
    "samples": int,
    "seed": int,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` text; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        if key not in CONVERTERS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def _float_list(raw: str) -> list[float]:
    try:
        vals = [float(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {raw!r}") from None
    if not vals:
        raise UsageError("empty list")
    return vals


# ------------------------------------------------------------------ parsing


def _grid_flags(p):
    p.add_argument("--N", type=int)
    p.add_argument("--L", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dplab", description="Solitary-wave lab for the DP equation with dispersion.")
    parser.add_argument("--version", action="version", version=f"dplab {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--c", type=float, help="wave speed")
    common.add_argument("--k", type=float, help="linear dispersion parameter")
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--out", help="output directory (default: runs/<subcommand>)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("profile", parents=[common], help="build the solitary wave")
    _grid_flags(p)

    p = sub.add_parser("evolve", parents=[common], help="evolve the wave, optionally perturbed")
    _grid_flags(p)
    p.add_argument("--tend", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--sample-every", dest="sample_every", type=int)
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int,
                   help="write a snapshot every this many samples (0: first and last only)")
    p.add_argument("--cfl", type=float)
    p.add_argument("--delta", type=float, help="perturbation amplitude")
    p.add_argument("--shape")

    for name, text in (("spectrum", "spectrum of L_c"), ("coercivity", "constrained coercivity and g(0)")):
        p = sub.add_parser(name, parents=[common], help=text)
        _grid_flags(p)

    p = sub.add_parser("convexity", parents=[common], help="dS/dc over a list of speeds")
    _grid_flags(p)
    p.add_argument("--c-values", dest="c_values")

    p = sub.add_parser("stability-sweep", parents=[common], help="perturbation sweep with orbital diagnostics")
    _grid_flags(p)
    p.add_argument("--deltas")
    p.add_argument("--shape", help="gaussian | random:SEED | kernel")
    p.add_argument("--tend", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--sample-every", dest="sample_every", type=int)
    p.add_argument("--cfl", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--workers", type=int, help="worker processes (0: CPU count); DPLAB_THREADS caps it")
    p.add_argument("--lin-N", dest="lin_N", type=int, help="grid size for the coercivity constant")
    p.add_argument("--no-s-match", dest="s_matched", action="store_const", const=False)

    p = sub.add_parser("check-identities", parents=[common], help="algebraic and functional identities")
    _grid_flags(p)
    p.add_argument("--samples", type=int, help="random fields per identity")
    p.add_argument("--seed", type=int)
    return parser


SUBCOMMAND_KEYS = {
    "profile": ("c", "k", "N", "L"),
    "evolve": ("c", "k", "N", "L", "tend", "dt", "sample_every", "snapshot_every", "cfl", "delta", "shape"),
    "spectrum": ("c", "k", "N", "L"),
    "coercivity": ("c", "k", "N", "L"),
    "convexity": ("k", "N", "L", "c_values"),
    "stability-sweep": (
        "c", "k", "N", "L", "deltas", "shape", "tend", "dt", "sample_every", "cfl",
        "beta", "workers", "lin_N", "s_matched",
    ),
    "check-identities": ("c", "k", "N", "L", "samples", "seed"),
}


def resolve_config(args: argparse.Namespace) -> tuple[dict, list[str]]:
    """Merge flags, config file and defaults; returns the settings and the keys left at default."""
    file_cfg = read_config_file(args.config) if args.config else {}
    cfg, defaulted = {}, []
    defaults = {**DEFAULTS, **SUBCOMMAND_DEFAULTS.get(args.command, {})}
    for key in SUBCOMMAND_KEYS[args.command]:
        val = getattr(args, key, None)
        if val is None and key in file_cfg:
            val = file_cfg[key]
        if val is None:
            val = defaults[key]
            defaulted.append(key)
        try:
            cfg[key] = CONVERTERS[key](val)
        except ValueError:
            raise UsageError(f"bad value for {key}: {val!r}") from None
    _validate(cfg)
    return cfg, defaulted


def _validate(cfg: dict) -> None:
    from .profile import WaveParams

    if "c" in cfg:
        try:
            WaveParams(cfg["c"], cfg["k"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    elif not cfg["k"] > 0:
        raise UsageError("need k > 0")
    for key in ("N", "lin_N"):
        if key in cfg and (cfg[key] < 16 or cfg[key] & (cfg[key] - 1)):
            raise UsageError(f"{key} must be a power of two >= 16")
    for key in ("L", "dt", "tend", "cfl", "sample_every", "samples"):
        if key in cfg and not cfg[key] > 0:
            raise UsageError(f"{key} must be positive")
    for key in ("beta", "delta", "snapshot_every", "workers"):
        if key in cfg and cfg[key] < 0:
            raise UsageError(f"{key} must be nonnegative")
    if "deltas" in cfg:
        if any(d < 0 for d in _float_list(cfg["deltas"])):
            raise UsageError("deltas must be nonnegative")
    if "c_values" in cfg:
        vals = _float_list(cfg["c_values"])
        if any(c <= 2 * cfg["k"] for c in vals):
            raise UsageError("every c must exceed 2k")


# --------------------------------------------------------------- utilities


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.violations: list[str] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def check(self, ok: bool, message: str) -> None:
        if not ok:
            log.error("violated: %s", message)
            self.violations.append(message)


def _wave(cfg):
    from .profile import WaveParams, build_profile
    from .spectral import make_grid

    try:
        return build_profile(WaveParams(cfg["c"], cfg["k"]), make_grid(cfg["L"], cfg["N"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ------------------------------------------------------------- subcommands


def cmd_profile(cfg, run: Run) -> None:
    from .profile import closed_form_checks, residual_travel_ode

    w = _wave(cfg)
    write_columns_csv(
        run.path("profile.csv"),
        {
            "x": w.grid.x,
            "phi": w.phi.values,
            "phi_x": w.phi_x.values,
            "rho": w.rho.values,
            "psi_tilde": w.psi_tilde.values,
            "w": w.w_profile.values,
        },
    )
    residual = residual_travel_ode(w)
    closed = closed_form_checks(w)
    _write_json(
        run.path("profile.json"),
        {
            "c": w.c,
            "k": w.k,
            "N": w.grid.N,
            "L": w.grid.L,
            "max_height": w.max_height,
            "decay_rate": w.decay_rate,
            "residual": residual,
            "closed_form_deviation": closed.max(),
        },
    )
    run.check(residual <= 1e-6, f"travelling-wave ODE residual {residual:.3e} > 1e-6")
    run.check(closed.max() <= 1e-6, f"closed-form deviation {closed.max():.3e} > 1e-6")


def cmd_evolve(cfg, run: Run) -> None:
    from . import evolution
    from .spectral import l2_norm
    from .stability import InvalidInitialData, Perturbation, make_perturbed_initial, momentum_w

    w = _wave(cfg)
    try:
        u0 = make_perturbed_initial(w, Perturbation(cfg["delta"], cfg["shape"]))
    except (InvalidInitialData, ValueError) as exc:
        raise UsageError(str(exc)) from None
    snaps = []
    every = cfg["snapshot_every"]

    def observe(t, u):
        snaps.append((t, u))

    try:
        state = evolution.run(
            u0, cfg["k"], cfg["tend"], cfg["dt"], cfg["sample_every"], cfl=cfg["cfl"], observer=observe
        )
    except evolution.CFLError as exc:
        raise UsageError(str(exc)) from None

    names = ("t", "S", "H", "min_w", "uxu_slack", "linf_u")
    write_columns_csv(run.path("history.csv"), {n: state.column(n) for n in names})
    keep = [0, len(snaps) - 1] if every == 0 else list(range(0, len(snaps), every)) + [len(snaps) - 1]
    for i in sorted(set(keep)):
        _, u = snaps[i]
        write_field_csv(run.path(f"snapshot_{i:05d}.csv"), u)

    k = cfg["k"]
    scale = float(np.max(np.abs(u0.values))) + 2 * k / 3
    linf_bound = math.sqrt(2) * (1 + math.sqrt(2)) * l2_norm(u0) + 4 * k / 3
    min_w = state.column("min_w")
    slack = state.column("uxu_slack")
    S, H = state.column("S"), state.column("H")
    summary = {
        "t_final": state.t,
        "S_drift": float(np.max(np.abs(S - S[0])) / abs(S[0])),
        "H_drift": float(np.max(np.abs(H - H[0])) / abs(H[0])),
        "min_w": float(min_w.min()),
        "min_uxu_slack": float(slack.min()),
        "max_linf_u": float(state.column("linf_u").max()),
        "linf_bound": linf_bound,
        "breaking_suspected": state.breaking_suspected,
    }
    _write_json(run.path("summary.json"), summary)
    if float(momentum_w(u0, k).values.min()) > 0:
        run.check(min_w.min() > 0, f"w became nonpositive (min {min_w.min():.3e})")
        run.check(slack.min() >= -1e-8 * scale, f"|u_x| <= u + 2k/3 slack {slack.min():.3e}")
        run.check(summary["max_linf_u"] <= linf_bound, "sup norm exceeds its L2 bound")
    run.check(not state.breaking_suspected, "breaking detected")


def _linear(cfg):
    from .linops import assemble_Lc

    w = _wave(cfg)
    return w, assemble_Lc(w)


def cmd_spectrum(cfg, run: Run) -> None:
    from .linops import inverse_iteration, spectrum_report

    w, A = _linear(cfg)
    rep = spectrum_report(A, w)
    lam_ii, _ = inverse_iteration(A, rep.lambda_star - 1e-3)
    write_columns_csv(run.path("eigenvalues.csv"), {"eigenvalue": rep.eigenvalues})
    payload = {"c": w.c, "k": w.k, "N": w.grid.N, "L": w.grid.L, **rep.summary()}
    payload["lambda_star_inverse_iteration"] = lam_ii
    payload["failures"] = rep.failures()
    _write_json(run.path("spectrum.json"), payload)
    for msg in rep.failures():
        run.check(False, msg)


def cmd_coercivity(cfg, run: Run) -> None:
    from .linops import constrained_coercivity, convexity_dSdc, resolvent_g

    w, A = _linear(cfg)
    alpha = constrained_coercivity(A, w, "qr")
    alpha_svd = constrained_coercivity(A, w, "svd")
    g0 = resolvent_g(A, w, 0.0)
    dSdc = convexity_dSdc(w.k, [w.c], w.grid)[0].dSdc
    _write_json(
        run.path("coercivity.json"),
        {
            "c": w.c, "k": w.k, "N": w.grid.N, "L": w.grid.L,
            "alpha": alpha, "alpha_svd": alpha_svd, "g0": g0, "dSdc": dSdc,
            "g0_rel_mismatch": abs(-g0 - dSdc) / abs(dSdc),
        },
    )
    run.check(alpha > 0, f"coercivity constant {alpha:.3e} <= 0")
    run.check(g0 < 0, f"g(0) = {g0:.3e} is not negative")


def cmd_convexity(cfg, run: Run) -> None:
    from .linops import convexity_dSdc
    from .spectral import make_grid

    grid = make_grid(cfg["L"], cfg["N"])
    try:
        pts = convexity_dSdc(cfg["k"], _float_list(cfg["c_values"]), grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_columns_csv(
        run.path("convexity.csv"),
        {"c": [p.c for p in pts], "S": [p.S for p in pts], "dSdc": [p.dSdc for p in pts]},
    )
    _write_json(
        run.path("convexity.json"),
        {"k": cfg["k"], "N": grid.N, "L": grid.L, "points": [p.__dict__ for p in pts]},
    )
    for p in pts:
        run.check(p.dSdc > 0, f"dS/dc = {p.dSdc:.3e} <= 0 at c = {p.c:g}")


def cmd_stability_sweep(cfg, run: Run) -> None:
    from .stability import (
        TIMESERIES_COLUMNS,
        InvalidInitialData,
        SweepConfig,
        stability_sweep,
    )

    w = _wave(cfg)
    scfg = SweepConfig(
        dt=cfg["dt"],
        sample_every=cfg["sample_every"],
        shape=cfg["shape"],
        s_matched=cfg["s_matched"],
        beta=cfg["beta"],
        cfl=cfg["cfl"],
        lin_N=cfg["lin_N"],
        workers=cfg["workers"] or None,
    )
    try:
        rep = stability_sweep(w, _float_list(cfg["deltas"]), cfg["tend"], scfg)
    except (InvalidInitialData, ValueError) as exc:
        raise UsageError(str(exc)) from None
    for m in rep.members:
        cols = {name: m.timeseries[:, j] for j, name in enumerate(TIMESERIES_COLUMNS)}
        write_columns_csv(run.path(f"timeseries_delta_{fmt(m.delta)}.csv"), cols)
    summary = rep.summary()
    _write_json(run.path("summary.json"), summary)
    for i, m in enumerate(rep.members):
        run.check(m.min_linfty_slack >= 0, f"delta={m.delta:g}: L^inf-L^2 slack {m.min_linfty_slack:.3e}")
        run.check(float(m.timeseries[:, 6].min()) > 0, f"delta={m.delta:g}: w became nonpositive")
        cert = rep.certificates[i]
        if cert.has_roots and m.timeseries[0, 1] < cert.r1:
            run.check(not rep.crossed(i), f"delta={m.delta:g}: d2 crossed r1 = {cert.r1:.3e}")


def cmd_check_identities(cfg, run: Run) -> None:
    from .evolution import rhs_hamiltonian, rhs_weak
    from .linops import expansion_check
    from .profile import closed_form_checks
    from .spectral import Field, functional_S, l2_norm, lagrangian_Q

    w = _wave(cfg)
    g = w.grid
    rng = np.random.default_rng(cfg["seed"])

    def band_limited(amp):
        coef = np.zeros(g.N, dtype=complex)
        band = np.abs(g.mode_index) <= g.N // 8
        coef[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
        f = Field(g, np.fft.ifft(coef).real)
        return amp * f / l2_norm(f)

    rhs_rel, s_lo, s_hi, exp_defect = 0.0, math.inf, 0.0, 0.0
    for _ in range(cfg["samples"]):
        f = band_limited(rng.uniform(0.1, 2.0))
        weak = rhs_weak(f, w.k)
        rhs_rel = max(rhs_rel, l2_norm(rhs_hamiltonian(f, w.k) - weak) / l2_norm(weak))
        ratio = functional_S(f) / l2_norm(f) ** 2
        s_lo, s_hi = min(s_lo, ratio), max(s_hi, ratio)
        h = band_limited(rng.uniform(0.0, 1.0))
        dQ = lagrangian_Q(w.phi + h, w.c, w.k) - lagrangian_Q(w.phi, w.c, w.k)
        exp_defect = max(exp_defect, expansion_check(w, h) / (1.0 + abs(dQ)))
    closed = closed_form_checks(w)
    payload = {
        "c": w.c, "k": w.k, "N": g.N, "L": g.L, "samples": cfg["samples"], "seed": cfg["seed"],
        "rhs_identity_max_rel": rhs_rel,
        "closed_form": closed.__dict__,
        "expansion_max_scaled_defect": exp_defect,
        "S_over_L2sq_min": s_lo,
        "S_over_L2sq_max": s_hi,
    }
    _write_json(run.path("identities.json"), payload)
    run.check(rhs_rel <= 1e-10, f"Hamiltonian/weak right-hand sides differ by {rhs_rel:.3e}")
    run.check(closed.max() <= 1e-6, f"closed-form deviation {closed.max():.3e}")
    run.check(exp_defect <= 1e-8, f"expansion defect {exp_defect:.3e}")
    run.check(0.125 <= s_lo and s_hi <= 0.5, f"S/||f||^2 outside [1/8, 1/2]: [{s_lo}, {s_hi}]")


COMMANDS = {
    "profile": cmd_profile,
    "evolve": cmd_evolve,
    "spectrum": cmd_spectrum,
    "coercivity": cmd_coercivity,
    "convexity": cmd_convexity,
    "stability-sweep": cmd_stability_sweep,
    "check-identities": cmd_check_identities,
}


def dispatch(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
        )
        cfg, defaulted = resolve_config(args)
        out = Path(args.out) if args.out else Path("runs") / args.command
        run = Run(out)
        COMMANDS[args.command](cfg, run)
    except UsageError as exc:
        print(f"dplab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    code = EXIT_VIOLATION if run.violations else EXIT_OK
    manifest = {
        "tool": "dplab",
        "tool_version": __version__,
        "command": args.command,
        "argv": argv,
        "config_file": args.config,
        "config": cfg,
        "defaults_applied": {key: cfg[key] for key in defaulted},
        "outputs": {p.name: _sha256(p) for p in run.files},
        "violations": run.violations,
        "exit_code": code,
    }
    _write_json(out / "manifest.json", manifest)
    for msg in run.violations:
        print(f"dplab: violated: {msg}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(dispatch())
