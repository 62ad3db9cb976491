"""Command-line entry point: ``energy-cbf run ...`` and ``energy-cbf verify ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kernels
from .dynamics import ModelError, desk_arm, load_model
from .scenarios import (ScenarioError, gamma_label, load_scenario, resolve_sim, run_experiment)
from .simulator import SimulationError, energy_audit

EXPERIMENTS = ("exp1", "exp2", "exp3", "exp4")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energy-cbf",
                                     description="Kinetic-energy limiting safety filter experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write traces, summary and plots")
    run.add_argument("scenario", help="exp1..exp4 or a path to a scenario TOML file")
    run.add_argument("--config", help="scenario TOML file overriding the built-in definition")
    run.add_argument("--gamma", type=_floats, help="comma-separated gamma values (1/s)")
    run.add_argument("--kmax", type=float, help="kinetic energy limit (J)")
    run.add_argument("--mode", choices=("agnostic", "aware"))
    run.add_argument("--filter", choices=("on", "off"))
    run.add_argument("--seed", type=int)
    run.add_argument("--duration", type=float, help="simulated time (s)")
    run.add_argument("--out", default="runs", help="output directory (default: runs)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    run.add_argument("--format", choices=("csv", "npz"), default="csv", help="trace file format")
    run.add_argument("--no-plots", action="store_true")

    ver = sub.add_parser("verify", help="run the oracle suites")
    ver.add_argument("suite", nargs="?", default="all",
                     choices=("all", "dynamics", "qp", "filter", "simulator"))
    ver.add_argument("--model", help="robot TOML file for the dynamics suite")
    ver.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------
# verdicts


def _verdict(name: str, passed: bool, detail: str) -> tuple[str, bool]:
    return f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}", bool(passed)


def _common_verdicts(traces: dict, k_max: float) -> list:
    worst_p = max(float(np.max(tr.p_safe)) for tr in traces.values())
    bitwise = all(np.array_equal(tr.u[~tr.intervened], tr.u_nom[~tr.intervened])
                  for tr in traces.values())
    audit = max(abs(energy_audit(tr)[0]) / max(energy_audit(tr)[1], 1e-12) for tr in traces.values())
    return [
        _verdict("filter power", worst_p <= 1e-9, f"max p_safe = {worst_p:.3e} W (<= 1e-9)"),
        _verdict("minimal invasiveness", bitwise, "u == u_nom bitwise on every tick without intervention"),
        _verdict("energy audit", audit <= 1e-3, f"max residual / max K_e = {audit:.3e} (<= 1e-3)"),
    ]


def _gamma_verdicts(traces: dict, k_max: float, off_factor: float) -> list:
    out = []
    peaks = {lbl: float(np.max(tr.K_e)) for lbl, tr in traces.items()}
    if "off" in peaks:
        out.append(_verdict("filter off exceeds limit", peaks["off"] > off_factor * k_max,
                            f"max K_e = {peaks['off']:.4f} J (> {off_factor:g} K_max)"))
    gammas = sorted(tr.meta["gamma"] for lbl, tr in traces.items() if lbl != "off")
    for g in gammas:
        if g <= 10:
            pk = peaks[gamma_label(g)]
            out.append(_verdict(f"invariance gamma={g:g}", pk <= 1.02 * k_max,
                                f"max K_e = {pk:.4f} J (<= {1.02 * k_max:.4f})"))
    if len(gammas) > 1:
        seq = [peaks[gamma_label(g)] for g in gammas]
        mono = all(b >= a for a, b in zip(seq, seq[1:]))
        out.append(_verdict("conservatism ordering", mono,
                            "max K_e over gamma " + ", ".join(f"{g:g}:{p:.4f}" for g, p in zip(gammas, seq))))
    return out


def _push_verdicts(traces: dict, k_max: float, gamma: float) -> list:
    out = []
    err = {lbl: float(np.max(tr.K_e)) - k_max for lbl, tr in traces.items()}
    if "agnostic" in err:
        p_max = float(np.max(traces["agnostic"].p_ext))
        bound = p_max / gamma + 0.02 * k_max
        out.append(_verdict("agnostic error bound", err["agnostic"] <= bound,
                            f"{err['agnostic']:.4f} J (<= max P_ext/gamma + 2% K_max = {bound:.4f})"))
    if "agnostic" in err and "aware" in err:
        out.append(_verdict("aware improvement", err["aware"] <= 0.3 * err["agnostic"],
                            f"aware {err['aware']:.4f} J vs agnostic {err['agnostic']:.4f} J (ratio <= 0.3)"))
    if "off" in err and len(err) > 1:
        others = max(v for k, v in err.items() if k != "off")
        out.append(_verdict("unfiltered exceeds filtered", err["off"] > others,
                            f"off {err['off']:.4f} J vs filtered max {others:.4f} J"))
    return out


def _power_verdicts(sweep) -> list:
    out = []
    missing = [pt for pt in sweep.points if pt.error is None]
    out.append(_verdict("steady state reached", not missing, f"{len(missing)} runs without steady state"))
    for g in sorted({pt.gamma for pt in sweep.points}):
        fit = sweep.fits.get(g)
        if fit is None:
            out.append(_verdict(f"slope gamma={g:g}", False, "no fit"))
            continue
        out.append(_verdict(f"slope gamma={g:g}", abs(fit.slope * g - 1.0) <= 0.1,
                            f"slope*gamma = {fit.slope * g:.4f} (|.-1| <= 0.1), r2 = {fit.r2:.6f}"))
        rel = [pt.rel_error for pt in sweep.points if pt.gamma == g and pt.rel_error is not None]
        worst = max(rel) if rel else float("inf")
        out.append(_verdict(f"pointwise law gamma={g:g}", worst <= 0.05,
                            f"max |K_e - K_max - P/gamma| / (P/gamma) = {worst:.4f} (<= 0.05)"))
    return out


# ---------------------------------------------------------------------------
# run


_TRACE_SUMMARY = ("label", "gamma", "mode", "filter", "k_max", "max_K_e", "max_excess", "max_p_safe",
                  "min_p_safe", "max_p_ext", "interventions", "audit_residual")
_POWER_SUMMARY = ("gamma", "p_ext", "K_ss", "error", "expected", "t_ss", "rel_error", "slope",
                  "slope_gamma", "intercept", "r2")


def _write_trace(trace, path: Path, fmt: str) -> Path:
    return trace.to_npz(path.with_suffix(".npz")) if fmt == "npz" else trace.to_csv(path.with_suffix(".csv"))


def _trace_summary(traces: dict, k_max: float, path: Path):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_TRACE_SUMMARY)
        for lbl, tr in traces.items():
            m = tr.meta
            w.writerow([lbl, m["gamma"], m["mode"], "on" if m["filter"] else "off", k_max,
                        float(np.max(tr.K_e)), float(np.max(tr.K_e)) - k_max, float(np.max(tr.p_safe)),
                        float(np.min(tr.p_safe)), float(np.max(tr.p_ext)), int(np.sum(tr.intervened)),
                        energy_audit(tr)[0]])


def _power_summary(sweep, path: Path):
    nan = float("nan")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_POWER_SUMMARY)
        for pt in sweep.points:
            fit = sweep.fits.get(pt.gamma)
            w.writerow([pt.gamma, pt.p_ext,
                        nan if pt.error is None else pt.error + sweep.k_max,
                        nan if pt.error is None else pt.error, pt.expected,
                        nan if pt.t_ss is None else pt.t_ss,
                        nan if pt.rel_error is None else pt.rel_error,
                        fit.slope if fit else nan, fit.slope * pt.gamma if fit else nan,
                        fit.intercept if fit else nan, fit.r2 if fit else nan])


def cmd_run(args) -> int:
    source = args.config or args.scenario
    spec = load_scenario(source)
    spec = spec.with_overrides(gammas=args.gamma, k_max=args.kmax, mode=args.mode,
                               filter_on=None if args.filter is None else args.filter == "on",
                               seed=args.seed, duration=args.duration)
    if spec.kind == "external_interaction":
        # --mode picks a single filtered case, --filter off keeps only the unfiltered one
        if args.filter == "off":
            spec = replace(spec, cases=("off",))
        elif args.mode is not None:
            spec = replace(spec, cases=("off", args.mode))
    out = Path(args.out) / spec.name
    out.mkdir(parents=True, exist_ok=True)

    started = time.time()
    sim = resolve_sim(spec)
    spec = replace(spec, sim=sim, auto_qddot_max=False)
    manifest = {
        "scenario": spec.name, "kind": spec.kind, "config": spec.source, "output": str(out),
        "seed": spec.sim.seed, "backend": kernels.BACKEND,
        "overrides": {"gamma": args.gamma, "k_max": args.kmax, "mode": args.mode,
                      "filter": args.filter, "duration": args.duration},
        "gammas": list(spec.gammas), "k_max": spec.k_max,
        "qddot_max": None if sim.qddot_max is None else np.asarray(sim.qddot_max).tolist(),
    }
    try:
        result = run_experiment(spec, workers=args.jobs)
    except SimulationError as exc:
        path = _write_trace(exc.trace, out / "trace_failed", args.format)
        print(f"error: {exc}; partial trace written to {path}", file=sys.stderr)
        return 3

    verdicts = []
    if spec.kind == "constant_power":
        sweep = result
        traces = sweep.traces
        _power_summary(sweep, out / "summary.csv")
        verdicts += _power_verdicts(sweep)
        k_max = sweep.k_max
    else:
        traces = result
        k_max = spec.k_max
        _trace_summary(traces, k_max, out / "summary.csv")
        if spec.kind == "step_response":
            verdicts += _gamma_verdicts(traces, k_max, 1.5)
        elif spec.kind == "contact_loss":
            verdicts += _gamma_verdicts(traces, k_max, 1.0)
            first = next(iter(traces.values()))
            manifest["stored_energy"] = first.meta.get("stored_energy")
            manifest["string_tension"] = first.meta.get("string_tension")
        else:
            verdicts += _push_verdicts(traces, k_max, spec.gammas[0])
    verdicts = _common_verdicts(traces, k_max) + verdicts

    for lbl, tr in traces.items():
        _write_trace(tr, out / f"trace_{lbl}", args.format)
    if not args.no_plots:
        from . import plotting
        if spec.kind == "constant_power":
            plotting.fit_plot(result, out / "fit.png", spec.name)
        else:
            plotting.energy_plot(traces, k_max, out / "kinetic_energy.png", spec.name)
            plotting.power_plot(traces, out / "power.png", spec.name)
    manifest["elapsed_s"] = round(time.time() - started, 3)
    manifest["verdicts"] = [line for line, _ in verdicts]
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    for line, _ in verdicts:
        print(line)
    print(f"outputs in {out}")
    return 0 if all(ok for _, ok in verdicts) else 1


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    from . import verify
    model = load_model(args.model) if args.model else desk_arm()
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        fn = verify.SUITES[name]
        checks = fn(model=model, seed=args.seed) if name == "dynamics" else fn(seed=args.seed)
        for c in checks:
            print(c.line())
            ok &= c.passed
    print("all checks passed" if ok else "some checks FAILED")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_verify(args)
    except (ScenarioError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
