"""Command-line front end: ``regencouple {params,couple,bd,verify,selftest}``.

Exit codes: 0 pass, 1 verification failure, 2 configuration error,
3 numerical or runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance as acc
from . import birth_death as bd
from .config import ExperimentConfig, check_horizons, check_replicates, check_seed, from_dict, load
from .coupling.pipeline import CSV_HEADER, run_coupling
from .cycle_sim import CycleSumLaws, empirical_moments, sample_cycles, stopped_sum_from_laws
from .errors import ConfigError, NumericError, RegenError
from .laws import law_from_dict
from .model_core import CycleMoments, derive_asymptotics, validate_params
from .models import builtin_model
from .report import digest, dump_report, make_report, metadata
from .rng import stream
from .verify import FAIL, PASS, rate_fit

log = logging.getLogger("regencouple")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
PARAMS_PILOT_CYCLES = 100_000


class _Outputs:
    """Tracks files written by a command for the manifest."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def report(self, name: str, doc: dict) -> None:
        dump_report(doc, self.path(name))

    def text(self, name: str, text: str) -> None:
        self.path(name).write_text(text, encoding="utf-8")

    def csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def manifest(self, command: str, cfg: ExperimentConfig) -> None:
        doc = {
            "command": command,
            "config_digest": digest(cfg.digest_source()),
            "config": cfg.digest_source(),
            "seed": cfg.seed,
            "outputs": sorted(self.files),
            "metadata": metadata(),
        }
        with open(self.dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


# ---------------------------------------------------------------------------
# model section


def build_cycle_model(cfg: ExperimentConfig):
    kind = cfg.model_kind
    doc = cfg.model[kind]
    if kind == "builtin":
        if not isinstance(doc, str):
            raise ConfigError("must be a model name", "model.builtin")
        return builtin_model(doc)
    if kind == "stopped_sum":
        if not isinstance(doc, dict):
            raise ConfigError("must be a table", "model.stopped_sum")
        for key in ("tau", "noise", "beta"):
            if key not in doc:
                raise ConfigError("missing", f"model.stopped_sum.{key}")
        noise = doc["noise"]
        beta = doc["beta"]
        if not isinstance(noise, list) or not noise:
            raise ConfigError("must be a non-empty list of law tables", "model.stopped_sum.noise")
        if not isinstance(beta, list) or len(beta) != len(noise):
            raise ConfigError(f"must be a list of {len(noise)} numbers", "model.stopped_sum.beta")
        tau = law_from_dict(doc["tau"], "model.stopped_sum.tau")
        if not tau.mean > 0:
            raise ConfigError("tau law must have positive mean", "model.stopped_sum.tau")
        laws = CycleSumLaws(tau, tuple(law_from_dict(x, f"model.stopped_sum.noise[{i}]") for i, x in enumerate(noise)),
                            tuple(float(b) for b in beta))
        return stopped_sum_from_laws(laws, name="stopped_sum")
    raise ConfigError(f"a cycle model is required here, not {kind!r}", f"model.{kind}")


def build_bd_spec(cfg: ExperimentConfig) -> bd.BirthDeathSpec:
    if cfg.model_kind != "birth_death":
        raise ConfigError("a birth_death model is required", "model")
    doc = cfg.model["birth_death"]
    if not isinstance(doc, dict):
        raise ConfigError("must be a table", "model.birth_death")
    return bd.BirthDeathSpec.from_dict(doc, prefix="model.birth_death.")


def _moments_from_config(doc) -> CycleMoments:
    try:
        return CycleMoments.from_dict(doc)
    except KeyError as exc:
        raise ConfigError("missing", f"model.moments.{exc.args[0]}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "model.moments") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_params(cfg: ExperimentConfig, out: _Outputs) -> int:
    kind = cfg.model_kind
    numbers: dict = {"model_kind": kind}
    if kind == "birth_death":
        spec = build_bd_spec(cfg)
        law = bd.stationary(spec, **_bd_law_kwargs(cfg))
        kap = bd.kappa_f(spec, law)
        sig = bd.sigma_f2(spec, law, **_bd_sigma_kwargs(cfg))
        numbers.update(kappa=[kap.value], sigma2=[[sig.value]], kappa_f=kap.to_dict(), sigma_f2=sig.to_dict())
        verdict = PASS
    else:
        if kind == "moments":
            moments, source = _moments_from_config(cfg.model["moments"]), "given"
        else:
            model = build_cycle_model(cfg)
            if model.analytic_moments is not None:
                moments, source = model.analytic_moments, "analytic"
            else:
                batch = sample_cycles(model, stream(cfg.seed, "params"), count=PARAMS_PILOT_CYCLES)
                moments, source = empirical_moments(batch)[0], "empirical"
        p = derive_asymptotics(moments)
        val = validate_params(p, moments)
        numbers.update(moments=moments.to_dict(), moments_source=source, params=p.to_dict(),
                       kappa=p.kappa.tolist(), sigma2=p.sigma2.tolist(), validation=val.to_dict())
        verdict = PASS if val.passed else FAIL
    doc = make_report("params", cfg.digest_source(), cfg.seed, verdict, numbers)
    out.report("params.json", doc)
    log.info("params: verdict %s, kappa=%s, sigma2=%s", verdict, numbers["kappa"], numbers["sigma2"])
    return EXIT_PASS if verdict == PASS else EXIT_FAIL


def cmd_couple(cfg: ExperimentConfig, out: _Outputs) -> int:
    model = build_cycle_model(cfg)
    run = run_coupling(model, cfg.horizons, coupler=cfg.coupler, replicates=cfg.replicates, seed=cfg.seed,
                       grid_step=cfg.grid_step, threads=cfg.threads, wtilde=cfg.wtilde)
    sups = run.sups()
    fit = None
    fit_error = None
    try:
        kw = {k: cfg.tolerances[k] for k in ("exponent_max", "r2_min") if k in cfg.tolerances}
        fit = rate_fit(cfg.horizons, [sups[t] for t in cfg.horizons], tail_seed=cfg.seed, **kw)
    except RegenError as exc:
        fit_error = str(exc)
    triangles = run.all_triangles_ok()
    verdict = fit.verdict if fit is not None else "NO-FIT"
    numbers = {
        "model": model.name,
        "coupler": cfg.coupler,
        "pilot": run.pilot.to_dict(),
        "rate_fit": None if fit is None else fit.to_dict(),
        "rate_fit_error": fit_error,
        "triangle_all_ok": triangles,
        "mean_phi_sups": {repr(t): np.mean([r.phi_sups for r in run.realizations if r.horizon == t], axis=0).tolist()
                          for t in cfg.horizons},
        "attempts_max": max(r.diagnostics["attempts"] for r in run.realizations),
    }
    out.report("rate_fit.json", make_report("couple", cfg.digest_source(), cfg.seed, verdict, numbers))
    out.csv("phi.csv", CSV_HEADER, run.csv_rows())
    if fit is not None and fit.tail is not None:
        out.csv("tail.csv", ["x", "survival", "fitted"], fit.tail.csv_rows())
    lines = [f"model {model.name}, coupler {cfg.coupler}, {cfg.replicates} replicates per horizon, seed {cfg.seed}",
             f"{'t':>10} {'mean sup':>10} {'median':>10} {'q90':>10}"]
    for t in cfg.horizons:
        s = sups[t]
        lines.append(f"{t:>10g} {s.mean():>10.4f} {np.median(s):>10.4f} {np.quantile(s, 0.9):>10.4f}")
    if fit is not None:
        lines.append(f"mean sup ~ {fit.c:.4f} log t + {fit.mean_fit.intercept:.4f} (R^2 {fit.mean_fit.r2:.4f}); "
                     f"log-log exponent {fit.exponent:.4f}; verdict {fit.verdict}")
    else:
        lines.append(f"no rate fit: {fit_error}")
    lines.append(f"triangle inequality on every replicate: {'yes' if triangles else 'NO'}")
    out.text("summary.txt", "\n".join(lines) + "\n")
    for line in lines:
        log.info(line)
    ok = triangles and (cfg.expect is None or cfg.expect == verdict)
    return EXIT_PASS if ok else EXIT_FAIL


def _bd_law_kwargs(cfg):
    return {"mass_tol": cfg.tolerances["mass_tol"]} if "mass_tol" in cfg.tolerances else {}


def _bd_sigma_kwargs(cfg):
    return {"rtol": cfg.tolerances["oracle_rtol"]} if "oracle_rtol" in cfg.tolerances else {}


def cmd_bd(cfg: ExperimentConfig, out: _Outputs) -> int:
    spec = build_bd_spec(cfg)
    vd = bd.van_doorn_margin(spec)
    em = bd.exp_moment_margin(spec)
    numbers: dict = {"spec": spec.to_dict(), "van_doorn": vd.to_dict(), "exp_moment": em.to_dict(),
                     "growth_constant": spec.growth_constant()}
    try:
        law = bd.stationary(spec, **_bd_law_kwargs(cfg))
        kap = bd.kappa_f(spec, law)
        sig = bd.sigma_f2(spec, law, **_bd_sigma_kwargs(cfg))
    except NumericError as exc:
        numbers["error"] = {"type": type(exc).__name__, "message": str(exc)}
        out.report("bd.json", make_report("bd", cfg.digest_source(), cfg.seed, "ERROR", numbers))
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC
    numbers.update(stationary={"tail_mass_bound": law.tail_mass_bound, "tail_ratio": law.tail_ratio},
                   kappa_f=kap.to_dict(), sigma_f2=sig.to_dict())
    fv = spec.f_values()
    out.csv("stationary.csv", ["n", "pi_tilde", "f"],
            [[n, repr(float(p)), repr(float(f))] for n, (p, f) in enumerate(zip(law.pi_tilde, fv))])
    if cfg.ssa_horizon is not None:
        traj = bd.simulate_ssa(spec, cfg.ssa_horizon, stream(cfg.seed, "bd", "ssa"), init=cfg.ssa_init)
        with open(out.path("trajectory.csv"), "w", encoding="utf-8") as fh:
            traj.to_csv(fh)
        ext = bd.bd_cycles(traj, fv)
        cyc = ext.cycles
        moments, probes = empirical_moments(cyc)
        p = derive_asymptotics(moments)
        n = len(cyc)
        mean_tau_exact = 1.0 / (spec.birth(np.array([0]))[0] * law.truncated()[0])
        numbers["ssa"] = {
            "horizon": cfg.ssa_horizon,
            "init": cfg.ssa_init,
            "events": int(traj.times.size - 1),
            "cycles": ext.to_dict(),
            "time_average_f": traj.time_average(fv),
            "fraction_at_zero": traj.fraction_at(0),
            "mean_tau": moments.mean_tau,
            "mean_tau_se": math.sqrt(moments.var_tau / n),
            "mean_tau_exact": mean_tau_exact,
            "kappa_from_cycles": float(p.kappa[0]),
            "sigma2_from_cycles": float(p.sigma2[0, 0]),
            "sigma2_rel_error": float(p.sigma2[0, 0]) / sig.value - 1.0 if sig.value else None,
            "probes_screen": probes.screen(),
        }
    verdicts = (vd.verdict, em.verdict)
    verdict = FAIL if FAIL in verdicts else (PASS if verdicts == (PASS, PASS) else "INDETERMINATE")
    out.report("bd.json", make_report("bd", cfg.digest_source(), cfg.seed, verdict, numbers))
    log.info("conditions: van Doorn %s, exponential moment %s", vd.verdict, em.verdict)
    log.info("kappa_f = %.10g (+/- %.3g), sigma_f^2 = %.10g (Poisson) / %.10g (oracle)",
             kap.value, kap.error_bar, sig.poisson, sig.oracle)
    return EXIT_FAIL if verdict == FAIL else EXIT_PASS


def cmd_verify(cfg: ExperimentConfig, out: _Outputs) -> int:
    if cfg.suite == "acceptance":
        entries = acc.run_suite(cfg.criteria, cfg.seed, cfg.threads, log=print)
        for e in entries:
            out.report(f"acceptance_{e.number}.json", e.result.report())
        results = {str(e.number): e.result.verdict for e in entries}
    else:
        check = acc.PLANTED[cfg.suite](cfg.seed)
        print(f"{cfg.suite} {check.verdict}")
        out.report(f"{cfg.suite}.json", check.report())
        results = {cfg.suite: check.verdict}
    ok = all(v == PASS for v in results.values())
    out.report("verify.json", make_report("verify", cfg.digest_source(), cfg.seed, PASS if ok else FAIL,
                                          {"suite": cfg.suite, "results": results}))
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_selftest(cfg: ExperimentConfig, out: _Outputs) -> int:
    checks = [acc.PLANTED["planted_signal"](cfg.seed), acc.PLANTED["planted_null"](cfg.seed),
              acc.criterion_1(cfg.seed), acc.criterion_8(cfg.seed)]
    results = {}
    for c in checks:
        print(f"{c.check} {c.verdict}")
        out.report(f"{c.check}.json", c.report())
        results[c.check] = c.verdict
    ok = all(v == PASS for v in results.values())
    out.report("selftest.json", make_report("selftest", cfg.digest_source(), cfg.seed, PASS if ok else FAIL,
                                            {"results": results}))
    return EXIT_PASS if ok else EXIT_FAIL


COMMANDS = {
    "params": (cmd_params, True, "derive and validate the asymptotic parameters of a model"),
    "couple": (cmd_couple, True, "run the coupling pipeline over horizons x replicates and fit the rate"),
    "bd": (cmd_bd, True, "birth-death chain: conditions, stationary law, kappa_f, sigma_f^2, optional SSA"),
    "verify": (cmd_verify, False, "run the acceptance suite or a planted self-test"),
    "selftest": (cmd_selftest, False, "quick planted-signal / planted-null / algebra checks"),
}


# ---------------------------------------------------------------------------
# argument handling


def parse_horizons(text: str) -> list[float]:
    """``"256,512,2^10"`` into floats; ``a^b`` is a power."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            if "^" in tok:
                base, exp = tok.split("^")
                out.append(float(base) ** float(exp))
            else:
                out.append(float(tok))
        except ValueError:
            raise ConfigError(f"cannot parse horizon {tok!r}", "--horizons") from None
    return check_horizons(out, "--horizons")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regencouple", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, needs_config, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, required=needs_config, help="TOML or JSON experiment file")
        p.add_argument("--seed", type=int, help="64-bit unsigned seed (overrides the config)")
        p.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
        p.add_argument("--out", type=Path, help="output directory (default $REGENCOUPLE_OUT or ./regencouple-out)")
        p.add_argument("--horizons", help="comma-separated horizons, e.g. 256,512,2^10")
        p.add_argument("--replicates", type=int, help="replicates per horizon")
        p.add_argument("-q", "--quiet", action="store_true", help="only print verdict lines")
        if name == "verify":
            p.add_argument("--criteria", help="comma-separated acceptance criteria (default: all)")
            p.add_argument("--suite", choices=["acceptance", "planted_signal", "planted_null"])
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config is not None else from_dict({})
    if args.command == "verify" and args.config is None:
        cfg.seed = acc.DEFAULT_SEED
    if args.seed is not None:
        cfg.seed = check_seed(args.seed, "--seed")
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("must be at least 1", "--threads")
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out = str(args.out)
    if args.horizons is not None:
        cfg.horizons = parse_horizons(args.horizons)
    if args.replicates is not None:
        cfg.replicates = check_replicates(args.replicates, "--replicates")
    if getattr(args, "suite", None):
        cfg.suite = args.suite
    if getattr(args, "criteria", None):
        try:
            crit = [int(x) for x in args.criteria.split(",")]
        except ValueError:
            raise ConfigError("must be comma-separated integers", "--criteria") from None
        if not all(1 <= c <= 10 for c in crit):
            raise ConfigError("criteria are numbered 1..10", "--criteria")
        cfg.criteria = crit
    if args.command in ("params", "couple", "bd") and not cfg.model:
        raise ConfigError("a [model] section is required", "model")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    fn = COMMANDS[args.command][0]
    try:
        cfg = resolve_config(args)
        out = _Outputs(cfg.output_dir())
        code = fn(cfg, out)
        out.manifest(args.command, cfg)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RegenError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
