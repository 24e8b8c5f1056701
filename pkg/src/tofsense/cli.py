"""Command-line front end: ``tofsense simulate|tomo|analyze|reproduce``.

Exit codes: 0 success, 1 usage or configuration error, 2 an analysis did not
converge, 3 input/output failure (missing, unreadable or malformed files).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FitError, FrameMismatchError, InsufficientDataError, ParameterError
from .fockstate import DensityMatrix, moments, wigner
from .gaussfit import GaussianModelParams, McmcSettings, fit_gaussian_detailed, g_test, run_mcmc, sigma_summary
from .inference import (BootstrapSettings, allan_deviation, bootstrap_fisher, estimate_heating_rate,
                        fisher_sensitivity, fit_oscillation_offset, fit_squeezing_floor,
                        fit_susceptibility, white_noise_adev)
from .io import (MANIFEST_NAME, ConfigError, InputFormatError, RunManifest, RunSettings, config_dict,
                 load_config, load_density, load_shots, load_sinogram, read_csv, save_density,
                 save_shots, save_sinogram, save_wigner, write_csv, write_json)
from .phasespace import ProtocolConfig, sensitivity_theory, susceptibility_theory
from .synthlab import (bin_quadratures, quadratures_from_shots, scan_shots, timeseries_for_allan,
                       tomography_t_sp)
from .tomomle import MleSettings, reconstruct

log = logging.getLogger("tofsense")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_IO = 0, 1, 2, 3

# Published reference values shown next to computed ones by ``reproduce``.
REFERENCE = {
    "susceptibility_nm_per_N": {False: 1.6e17, True: 1.7e17},
    "fisher_sensitivity_N": {False: 1.8e-18, True: 4.2e-19},
    "measured_sensitivity_N": {False: 1.9e-18, True: 4.01e-19},
    "allan_floor_N": 4e-20,
    "allan_floor_tau_s": 50.0,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1 (got {value})")
    return value


# --------------------------------------------------------------------------
# shared helpers


def _setup(args):
    cfg, run = load_config(args.config)
    changes = {}
    if getattr(args, "shots", None) is not None:
        changes["shots_per_phase"] = args.shots
    if getattr(args, "phases", None) is not None:
        changes["n_phases"] = args.phases
    if getattr(args, "with_prep", None) is not None:
        changes["with_prep"] = args.with_prep
    if changes:
        run = RunSettings(**{**run.__dict__, **changes})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, run, out


def _manifest(args, out: Path, outputs, inputs=(), **parameters) -> None:
    RunManifest(args.command, str(args.config) if args.config else None, args.seed,
                [str(p) for p in inputs], [str(Path(p).name) for p in outputs], parameters).write(out)


def _table(rows) -> str:
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def _samples_from_shots(path, cfg: ProtocolConfig, with_prep: bool, seed):
    shots = load_shots(path, seed)
    return quadratures_from_shots(shots, cfg, with_prep, center=True)


# --------------------------------------------------------------------------
# simulate


def simulate_shots(cfg: ProtocolConfig, run: RunSettings, seed: int):
    t_sp = tomography_t_sp(cfg, run.n_phases, with_prep=run.with_prep)
    shots = scan_shots(cfg, t_sp, run.shots_per_phase, seed, run.with_prep)
    samples = quadratures_from_shots(shots, cfg, run.with_prep, center=True)
    return shots, bin_quadratures(samples, delta_factor=run.delta_factor)


def cmd_simulate(args) -> int:
    cfg, run, out = _setup(args)
    shots, sino = simulate_shots(cfg, run, args.seed)
    outputs = [save_shots(out / "shots.csv", shots), save_sinogram(out / "sinogram.json", sino)]
    if args.series:
        t, f = timeseries_for_allan(cfg, run.duration, run.f_s, args.seed, run.with_prep)
        outputs.append(write_csv(out / "series.csv", ("t_s", "force_N"), zip(t.tolist(), f.tolist())))
    _manifest(args, out, outputs, **config_dict(cfg, run))
    print(_table([("phases", sino.n_phases), ("shots per phase", run.shots_per_phase),
                  ("total shots", len(shots)), ("bin width (zpf)", f"{sino.delta:.6g}"),
                  ("frame omega (rad/s)", f"{sino.meta['omega']:.6g}"),
                  ("state preparation", run.with_prep), ("output", out)]))
    for w in sino.warnings:
        print(f"warning: {w}")
    return EXIT_OK


# --------------------------------------------------------------------------
# tomo


def _mle_settings(args, run: RunSettings) -> MleSettings:
    profile = args.profile or run.profile
    overrides = {k: v for k, v in (("n_max", args.n_max), ("epsilon", args.epsilon),
                                   ("threshold_distance", args.threshold_distance),
                                   ("threshold_loglik", args.threshold_loglik),
                                   ("max_iterations", args.max_iterations)) if v is not None}
    return MleSettings.profile(profile, **overrides)


def wigner_axes(extent: float, points: int):
    axis = np.linspace(-extent, extent, points)
    return axis, axis


def cmd_tomo(args) -> int:
    cfg, run, out = _setup(args)
    sino = load_sinogram(args.sinogram)
    settings = _mle_settings(args, run)
    result = reconstruct(sino, settings)
    z_axis, p_axis = wigner_axes(args.wigner_extent, args.wigner_points)
    grid = wigner(result.rho, z_axis, p_axis)
    report = result.report()
    report.update({"profile": args.profile or run.profile, "sinogram": str(args.sinogram),
                   "wigner_integral": grid.integral()})
    mz, mp, cov = moments(result.rho)
    report["moments"] = {"mean_z1": mz, "mean_p1": mp, "cov": cov}
    outputs = [
        save_density(out / "rho.json", result.rho, {"with_prep": sino.meta.get("with_prep")}),
        save_wigner(out / "wigner.csv", grid),
        write_json(out / "tomo_report.json", {**report, "manifest": MANIFEST_NAME}),
    ]
    _manifest(args, out, outputs, [args.sinogram], n_max=settings.n_max, epsilon=settings.epsilon,
              threshold_distance=settings.threshold_distance, threshold_loglik=settings.threshold_loglik,
              profile=args.profile or run.profile)
    print(_table([("n_max", settings.n_max), ("iterations", result.iterations),
                  ("log-likelihood", f"{result.loglik:.10g}"), ("converged", result.converged),
                  ("truncation ok", result.truncation_ok), ("identifiable", result.identifiable)]))
    if not (result.converged and result.truncation_ok):
        print("error: reconstruction did not meet its convergence or truncation criteria", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


# --------------------------------------------------------------------------
# analyze


def _with_prep(args, run: RunSettings, rho_meta=None) -> bool:
    if args.with_prep is not None:
        return args.with_prep
    if rho_meta is not None:
        return bool(rho_meta)
    return run.with_prep


def _analyze_fisher(args, cfg, run, out):
    from .io import read_json
    rho = load_density(args.inputs[0])
    with_prep = _with_prep(args, run, read_json(args.inputs[0]).get("with_prep"))
    omega = cfg.sp_frequency(with_prep)
    if rho.frame_omega is not None and not math.isclose(rho.frame_omega, omega, rel_tol=1e-9):
        raise FrameMismatchError(f"density matrix frame omega={rho.frame_omega:.6g} rad/s does not match "
                                 f"the {'shallow' if with_prep else 'initial'} trap ({omega:.6g} rad/s)")
    if args.bootstrap:
        if len(args.inputs) < 2:
            raise UsageError("fisher --bootstrap needs the shots CSV as a second input")
        samples = _samples_from_shots(args.inputs[1], cfg, with_prep, args.seed)
        profile = "squeezed" if rho.n_max >= 70 else "thermal"
        settings = BootstrapSettings(n_boot=args.bootstrap, seed=args.seed,
                                     mle=MleSettings.profile(profile, n_max=rho.n_max))
        res = bootstrap_fisher(samples, cfg, settings, with_prep)
    else:
        res = fisher_sensitivity(rho, cfg, with_prep)
    report = {**res.to_dict(), "theory_sensitivity": sensitivity_theory(cfg, with_prep)}
    print(_table([("F_theta (1/rad^2)", f"{res.f_theta:.6g}"), ("F_force (1/N^2)", f"{res.f_force:.6g}"),
                  ("sensitivity S (N)", f"{res.sensitivity:.6g}")]
                 + ([("bootstrap 68% (N)", f"{res.boot_interval[0]:.4g} .. {res.boot_interval[1]:.4g}")]
                    if res.boot_interval else [])))
    return [write_json(out / "fisher.json", {**report, "manifest": MANIFEST_NAME})], EXIT_OK


def _gauss_fit(args, cfg, run):
    samples = _samples_from_shots(args.inputs[0], cfg, _with_prep(args, run), args.seed)
    return samples, fit_gaussian_detailed(samples)


def _analyze_gauss(args, cfg, run, out):
    _, fit = _gauss_fit(args, cfg, run)
    p = fit.params
    print(_table([("sigma_+", f"{p.sigma_plus:.6g}"), ("sigma_-", f"{p.sigma_minus:.6g}"),
                  ("log-likelihood", f"{fit.loglik:.10g}")]))
    return [write_json(out / "gauss.json", {**fit.to_dict(), "manifest": MANIFEST_NAME})], EXIT_OK


def _analyze_gtest(args, cfg, run, out):
    samples, fit = _gauss_fit(args, cfg, run)
    sino = bin_quadratures(samples, delta_factor=run.delta_factor)
    rep = g_test(sino, fit.params)
    print(_table([("G (Williams)", f"{rep.g_statistic:.6g}"), ("dof", rep.degrees_of_freedom),
                  ("upper p-value", f"{rep.upper_p_value:.4g}"), ("percentile", f"{rep.percentile:.4g}")]))
    return [write_json(out / "gtest.json", {**rep.to_dict(), "fit": fit.to_dict(),
                                            "manifest": MANIFEST_NAME})], EXIT_OK


def _analyze_mcmc(args, cfg, run, out):
    samples, fit = _gauss_fit(args, cfg, run)
    post, diag = run_mcmc(samples, fit.params, McmcSettings(seed=args.seed))
    summary = sigma_summary(post)
    chains = write_csv(out / "chains.csv", ("chain", "iteration", "mu_z1", "mu_p1", "A", "B_c", "B_s"),
                       post.rows())
    report = write_json(out / "mcmc.json", {"diagnostics": diag.to_dict(), "sigma": summary.to_dict(),
                                            "fit": fit.to_dict(), "manifest": MANIFEST_NAME})
    print(_table([("max R-hat", f"{max(diag.rhat.values()):.4f}"), ("effective samples", diag.n_effective),
                  ("sigma_+ 68%", "%.4g .. %.4g" % summary.interval_plus),
                  ("sigma_- 68%", "%.4g .. %.4g" % summary.interval_minus)]))
    return [chains, report], EXIT_OK if diag.converged else EXIT_NONCONVERGED


def _analyze_allan(args, cfg, run, out):
    d = read_csv(args.inputs[0], ("t_s", "force_N"))
    t = d["t_s"]
    f_s = 1.0 / float(np.median(np.diff(t))) if len(t) > 1 else run.f_s
    res = allan_deviation(d["force_N"], f_s, overlapping=args.overlapping)
    for note in res.notes:
        print(f"note: {note}")
    print(_table([("samples", len(t)), ("f_s (Hz)", f"{f_s:.6g}"), ("taus", len(res.taus)),
                  ("min ADEV (N)", f"{res.adev.min():.4g}")]))
    return [write_csv(out / "allan.csv", ("tau_s", "adev_N"), res.rows()),
            write_json(out / "allan.json", {**res.to_dict(), "f_s": f_s, "manifest": MANIFEST_NAME})], EXIT_OK


def _analyze_fits(args, cfg, run, out):
    kind = args.fit
    if kind is None:
        raise UsageError("--analysis fits needs --fit oscillation|susceptibility|squeezing|heating")
    if kind == "oscillation":
        d = read_csv(args.inputs[0], ("t_sp_s", "mu_z_m"))
        rep = fit_oscillation_offset(d["t_sp_s"], d["mu_z_m"], b5=args.b5)
    elif kind == "susceptibility":
        d = read_csv(args.inputs[0], ("theta_rad", "mu_z_m"))
        rep = fit_susceptibility(d["theta_rad"], d["mu_z_m"], cfg)
    elif kind == "squeezing":
        d = read_csv(args.inputs[0], ("r", "sigma_norm"))
        rep = fit_squeezing_floor(d["r"], d["sigma_norm"])
    else:
        if len(args.inputs) < 2:
            raise UsageError("heating fit needs two inputs: no-prep CSV and with-prep CSV")
        cols = ("t_tof_s", "sigma_z_m", "sigma_err_m")
        a, b = (read_csv(p, cols) for p in args.inputs[:2])
        rep = estimate_heating_rate(tuple(a[c] for c in cols), tuple(b[c] for c in cols), cfg)
    print(_table([(k, f"{v:.6g} +- {rep.stderr[k]:.2g}") for k, v in rep.params.items()]))
    return [write_json(out / f"fit_{kind}.json", {**rep.to_dict(), "manifest": MANIFEST_NAME})], EXIT_OK


ANALYSES = {"fisher": _analyze_fisher, "gauss": _analyze_gauss, "gtest": _analyze_gtest,
            "mcmc": _analyze_mcmc, "allan": _analyze_allan, "fits": _analyze_fits}


def cmd_analyze(args) -> int:
    cfg, run, out = _setup(args)
    for p in args.inputs:
        if not Path(p).is_file():
            raise FileNotFoundError(f"input not found: {p}")
    outputs, code = ANALYSES[args.analysis](args, cfg, run, out)
    _manifest(args, out, outputs, args.inputs, analysis=args.analysis, **config_dict(cfg, run))
    return code


# --------------------------------------------------------------------------
# reproduce


def _reproduce_susceptibility(cfg, run, out, seed):
    rows, lines = [], []
    for with_prep in (False, True):
        chi = susceptibility_theory(cfg, with_prep) * 1e9
        ref = REFERENCE["susceptibility_nm_per_N"][with_prep]
        rows.append((int(with_prep), chi, ref, chi / ref))
        lines.append(f"{'with' if with_prep else 'without'} preparation: {chi:.4g} nm/N "
                     f"(published {ref:.2g} nm/N, ratio {chi / ref:.3f})")
    files = [write_csv(out / "susceptibility.csv", ("with_prep", "computed_nm_per_N", "published_nm_per_N", "ratio"), rows)]
    return files, lines


def _reproduce_sensitivity(cfg, run, out, seed):
    t = np.linspace(10e-6, 200e-6, 96)
    rows = [(tt, sensitivity_theory(cfg.replace(t_tof=tt), False), sensitivity_theory(cfg.replace(t_tof=tt), True))
            for tt in t]
    files = [write_csv(out / "sensitivity.csv", ("t_tof_s", "S_without_prep_N", "S_with_prep_N"), rows)]
    lines = []
    for with_prep in (False, True):
        s = sensitivity_theory(cfg, with_prep)
        lines.append(f"{'with' if with_prep else 'without'} preparation at t_tof={cfg.t_tof * 1e6:g} us: "
                     f"S = {s:.3g} N (published measured {REFERENCE['measured_sensitivity_N'][with_prep]:.3g} N)")
    return files, lines


def _reproduce_sinogram(cfg, run, out, seed):
    run = RunSettings(**{**run.__dict__, "with_prep": True})
    shots, sino = simulate_shots(cfg, run, seed)
    rows = [(phi, c, n) for phi, cs, ns in zip(sino.phases, sino.centers, sino.counts)
            for c, n in zip(cs.tolist(), ns.tolist())]
    files = [save_sinogram(out / "sinogram.json", sino),
             write_csv(out / "sinogram.csv", ("phi_rad", "p_center", "count"), rows)]
    return files, [f"{sino.n_phases} phases x {run.shots_per_phase} shots, bin width {sino.delta:.4g} zpf"]


def _reproduce_wigner(cfg, run, out, seed):
    files, lines = [], []
    z_axis, p_axis = wigner_axes(6.0, 121)
    for label, with_prep in (("thermal", False), ("squeezed", True)):
        r = RunSettings(**{**run.__dict__, "with_prep": with_prep})
        _, sino = simulate_shots(cfg, r, seed)
        res = reconstruct(sino, MleSettings.profile(label))
        grid = wigner(res.rho, z_axis, p_axis)
        files.append(save_wigner(out / f"wigner_{label}.csv", grid))
        files.append(save_density(out / f"rho_{label}.json", res.rho, {"with_prep": with_prep}))
        _, _, cov = moments(res.rho)
        lam = np.linalg.eigvalsh(cov)
        lines.append(f"{label}: sigma_- = {math.sqrt(lam[0]):.3f}, sigma_+ = {math.sqrt(lam[1]):.3f} zpf, "
                     f"converged={res.converged}")
    # unit circle: the vacuum spread in zpf units
    ang = np.linspace(0.0, 2.0 * math.pi, 181)
    files.append(write_csv(out / "zpf_contour.csv", ("z1", "p1"), zip(np.cos(ang).tolist(), np.sin(ang).tolist())))
    return files, lines


def _reproduce_allan(cfg, run, out, seed):
    duration = max(run.duration, 1e4)
    t, force = timeseries_for_allan(cfg, duration, run.f_s, seed, with_prep=True)
    res = allan_deviation(force, run.f_s)
    s = sensitivity_theory(cfg, True)
    files = [write_csv(out / "allan.csv", ("tau_s", "adev_N", "white_law_N"),
                       zip(res.taus.tolist(), res.adev.tolist(), white_noise_adev(s, run.f_s, res.taus).tolist()))]
    k = int(np.argmin(np.abs(res.taus - REFERENCE["allan_floor_tau_s"])))
    lines = [f"ADEV at tau={res.taus[k]:g} s: {res.adev[k]:.3g} N (published about "
             f"{REFERENCE['allan_floor_N']:.0e} N at 50 s; series has no drift)"]
    return files, lines


TARGETS = {"susceptibility": _reproduce_susceptibility, "sensitivity": _reproduce_sensitivity,
           "sinogram": _reproduce_sinogram, "wigner": _reproduce_wigner, "allan": _reproduce_allan}


def cmd_reproduce(args) -> int:
    cfg, run, out = _setup(args)
    files, lines = TARGETS[args.target](cfg, run, out, args.seed)
    files.append(_write_summary(out / f"{args.target}_summary.txt", lines))
    _manifest(args, out, files, target=args.target, **config_dict(cfg, run))
    print("\n".join(lines))
    return EXIT_OK


def _write_summary(path, lines):
    from .io import atomic_write
    return atomic_write(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file (SI units)")
    common.add_argument("--seed", type=int, default=0, help="top-level random seed")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="tofsense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    prep = _Parser(add_help=False)
    grp = prep.add_mutually_exclusive_group()
    grp.add_argument("--with-prep", dest="with_prep", action="store_const", const=True, default=None)
    grp.add_argument("--no-prep", dest="with_prep", action="store_const", const=False)

    p = sub.add_parser("simulate", parents=[common, prep], help="generate shots and a sinogram")
    p.add_argument("--shots", type=_positive_int, help="shots per phase")
    p.add_argument("--phases", type=_positive_int, help="number of hold times")
    p.add_argument("--series", action="store_true", help="also write a force time series for Allan analysis")

    p = sub.add_parser("tomo", parents=[common], help="maximum-likelihood state reconstruction")
    p.add_argument("sinogram", type=Path)
    p.add_argument("--profile", choices=("thermal", "squeezed", "custom"))
    p.add_argument("--n-max", type=_positive_int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--threshold-distance", type=float)
    p.add_argument("--threshold-loglik", type=float)
    p.add_argument("--max-iterations", type=_positive_int)
    p.add_argument("--wigner-extent", type=float, default=6.0)
    p.add_argument("--wigner-points", type=_positive_int, default=121)

    p = sub.add_parser("analyze", parents=[common, prep], help="statistics on reconstructions and data")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--analysis", required=True, choices=sorted(ANALYSES))
    p.add_argument("--bootstrap", type=_positive_int, help="bootstrap resamples for fisher")
    p.add_argument("--fit", choices=("oscillation", "susceptibility", "squeezing", "heating"))
    p.add_argument("--b5", type=float, help="fixed offset b5 [m] for the oscillation fit")
    p.add_argument("--overlapping", action="store_true", help="overlapping Allan estimator")

    p = sub.add_parser("reproduce", parents=[common], help="regenerate figure data")
    p.add_argument("--target", required=True, choices=sorted(TARGETS))
    return parser


COMMANDS = {"simulate": cmd_simulate, "tomo": cmd_tomo, "analyze": cmd_analyze, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, FrameMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (InputFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
