"""Command-line entry point: ``svbvar <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .criteria import model_dic, model_gd_log_ml
from .data import Panel, build_var_data
from .experiments import (
    MC_KAPPA,
    Candidate,
    ComparisonConfig,
    DgpConfig,
    EstimatorSettings,
    FailureBudgetExceeded,
    build_prior,
    estimate_log_ml,
    homoskedastic_draws,
    predictive_log_likelihood,
    run_model_comparison,
    simulate_dgp,
)
from .gibbs.chain import RunConfig, SamplerError, run_chain
from .io import (
    ConfigError,
    IngestError,
    RunManifest,
    RunSettings,
    ingest_csv,
    load_config,
    load_schema,
    write_draws_csv,
    write_json,
    write_panel_csv,
)
from .stochastics import make_rng

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BUDGET = 0, 2, 3, 4
MODEL_TAGS = ("var", "csv", "sv", "fsv")
COMMANDS = ("simulate", "estimate", "ml", "gd", "dic", "compare", "forecast", "mc")


class PartialFailure(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="svbvar", description="Stochastic-volatility BVAR estimation and model comparison.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="TOML run configuration")
        sp.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--model", help="model tag: var, csv, sv or fsv")
        sp.add_argument("--preset", help="dimension preset: 7, 15, 30 or custom")
        if name == "compare":
            sp.add_argument("results", nargs="+", type=Path, help="ml.json files to tabulate")
        if name == "simulate":
            sp.add_argument("--n", type=int)
            sp.add_argument("--T", type=int)
    return ap


def _settings(args: argparse.Namespace) -> RunSettings:
    preset: Any = args.preset
    if preset is not None and preset != "custom":
        try:
            preset = int(preset)
        except ValueError as exc:
            raise ConfigError(f"unknown preset {args.preset!r}") from exc
    if args.model is not None and args.model not in MODEL_TAGS:
        raise ConfigError(f"unknown model tag {args.model!r}; expected one of {MODEL_TAGS}")
    over = {"seed": args.seed, "threads": args.threads, "model": args.model, "preset": preset}
    if args.command == "simulate":
        over.update(dgp=args.model, n=getattr(args, "n", None), T=getattr(args, "T", None))
        over["model"] = None
    return load_config(args.config, **over)


def _estimator(s: RunSettings, model: str) -> EstimatorSettings:
    fixed = s.fixed_kappa
    if model == "var" and fixed is None:
        fixed = MC_KAPPA
    return EstimatorSettings(
        burn_in=s.burn_in,
        keep=s.keep,
        R=s.R,
        thin=s.thin,
        p=s.p,
        fixed_kappa=fixed,
        impact_kappa=s.impact_kappa,
        prior_mode=s.prior_mode,
        allow_weak_identification=s.allow_weak_identification,
    )


def _load_panel(s: RunSettings) -> Panel:
    if s.data_path is None:
        raise ConfigError("data.path is required for this command")
    schema = dict(s.schema)
    if s.schema_path is not None:
        schema = {**load_schema(s.schema_path), **schema}
    return ingest_csv(s.data_path, schema, s.preset)


def _fit(s: RunSettings, panel: Panel, model: str, *, stream: int = 1, rows: int | None = None):
    """Data, prior and posterior draws; ``rows`` truncates the sample (recursive forecasting)."""
    est = _estimator(s, model)
    data = build_var_data(panel, s.p)
    if rows is not None:
        data = data.subsample(rows)
    prior = build_prior(model, panel, est)
    if model == "var":
        chain_like = homoskedastic_draws(make_rng(s.seed, stream), data, prior, prior.kappa_fixed, s.keep)
        return data, prior, chain_like
    cfg = RunConfig(
        model,
        burn_in=s.burn_in,
        keep=s.keep,
        thin=s.thin,
        seed=s.seed,
        stream=stream,
        p=s.p,
        r=s.r,
        prior_mode=s.prior_mode,
        allow_weak_identification=s.allow_weak_identification,
    )
    return data, prior, run_chain(model, data, prior, cfg)


def _summary(chain) -> dict[str, Any]:
    out: dict[str, Any] = {
        "model": chain.model,
        "draws": len(chain),
        "metadata": chain.metadata,
        "acceptance": {k: chain.acceptance_rate(k) for k in chain.acceptance_counts},
        "config": chain.config.to_dict(),
    }
    means = {}
    for name in ("phi", "sigma2", "mu", "kappa", "kappa1", "kappa2", "kappa3"):
        if hasattr(chain.draws[0], name):
            means[name] = chain.stack(name).mean(axis=0)
    out["posterior_means"] = means
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(s: RunSettings, out: Path, args) -> list[Path]:
    cfg = DgpConfig(s.dgp, n=s.n, T=s.T, p=s.dgp_p, r=s.dgp_r, noisy=s.noisy, allow_weak_identification=s.allow_weak_identification)
    panel, truth = simulate_dgp(make_rng(s.seed, 0), cfg)
    data_path = out / "panel.csv"
    write_panel_csv(panel, data_path)
    truth_json = {k: (list(v) if isinstance(v, list) else v) for k, v in truth.items()}
    return [data_path, write_json(truth_json, out / "truth.json")]


def cmd_estimate(s: RunSettings, out: Path, args) -> list[Path]:
    if s.model == "var":
        raise ConfigError("estimate runs the volatility samplers; use ml for the homoskedastic benchmark")
    _, _, chain = _fit(s, _load_panel(s), s.model)
    return [write_json(_summary(chain), out / "summary.json"), write_draws_csv(chain, out / "draws.csv")]


def cmd_ml(s: RunSettings, out: Path, args) -> list[Path]:
    panel = _load_panel(s)
    cand = Candidate(s.model, s.model, s.r)
    est, _ = estimate_log_ml(cand, panel, _estimator(s, s.model), seed=s.seed, stream=1)
    result = {"model": s.model, "n": panel.n, **est.to_dict()}
    return [write_json(result, out / "ml.json")]


def cmd_gd(s: RunSettings, out: Path, args) -> list[Path]:
    if s.model == "var":
        raise ConfigError("gd needs a volatility model")
    data, prior, chain = _fit(s, _load_panel(s), s.model)
    est = model_gd_log_ml(s.model, data, prior, chain, variant=s.gd_variant, alpha=s.gd_alpha)
    return [write_json({"model": s.model, "n": data.n, "criterion": s.gd_variant, **est.to_dict()}, out / "gd.json")]


def cmd_dic(s: RunSettings, out: Path, args) -> list[Path]:
    if s.model == "var":
        raise ConfigError("dic needs a volatility model")
    data, _, chain = _fit(s, _load_panel(s), s.model)
    res = model_dic(s.model, data, chain, s.dic_R, make_rng(s.seed, 2))
    return [write_json({"model": s.model, "n": data.n, "criterion": "dic", **res.to_dict()}, out / "dic.json")]


def render_grid(results: Sequence[dict[str, Any]]) -> tuple[str, list[list[str]]]:
    """Models down the side, dimensions across; cells read 'log_ml (nse)'."""
    order = {m: i for i, m in enumerate(MODEL_TAGS)}
    models = sorted({r["model"] for r in results}, key=lambda m: (order.get(m, 99), m))
    dims = sorted({int(r["n"]) for r in results})
    cell = {(r["model"], int(r["n"])): f"{r['log_ml']:,.1f} ({r['nse']:.2f})" for r in results}
    label = {"var": "VAR", "csv": "VAR-CSV", "sv": "VAR-SV", "fsv": "VAR-FSV"}
    rows = [["", *[f"n = {d}" for d in dims]]]
    for m in models:
        rows.append([label.get(m, m), *[cell.get((m, d), "-") for d in dims]])
    widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths))) for r in rows]
    return "\n".join(lines) + "\n", rows


def cmd_compare(s: RunSettings, out: Path, args) -> list[Path]:
    results = []
    for path in args.results:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read result file {path}: {exc}") from exc
        for key in ("model", "n", "log_ml", "nse"):
            if key not in doc:
                raise ConfigError(f"{path} lacks field {key!r}")
        results.append(doc)
    text, rows = render_grid(results)
    sys.stdout.write(text)
    (out / "compare.txt").write_text(text, encoding="utf-8")
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)
    return [out / "compare.txt", out / "compare.csv"]


def cmd_forecast(s: RunSettings, out: Path, args) -> list[Path]:
    panel = _load_panel(s)
    full = build_var_data(panel, s.p)
    origins = s.origins or (full.T - max(s.horizons),)
    rows, totals = [], {h: 0.0 for h in s.horizons}
    for i, origin in enumerate(origins):
        if origin + max(s.horizons) > full.T or origin <= s.p:
            raise ConfigError(f"origin {origin} leaves too few observations")
        _, _, chain = _fit(s, panel, s.model, stream=10 + i, rows=origin)
        for h in s.horizons:
            rng = make_rng(s.seed, 100_000 + 10 * i + h)
            score = predictive_log_likelihood(chain, full, origin, h, rng, model=s.model)
            rows.append({"origin": origin, "horizon": h, "log_predictive": score})
            totals[h] += score
    result = {"model": s.model, "n": panel.n, "scores": rows, "sums": {str(h): v for h, v in totals.items()}}
    return [write_json(result, out / "forecast.json")]


def _candidates(tags: Sequence[str]) -> tuple[Candidate, ...]:
    out = []
    for tag in tags:
        model, _, r = tag.partition(":")
        out.append(Candidate(tag, model, int(r) if r else (1 if model == "fsv" else 0)))
    return tuple(out)


def cmd_mc(s: RunSettings, out: Path, args) -> list[Path]:
    dgp = DgpConfig(s.dgp, n=s.n, T=s.T, p=s.dgp_p, r=s.dgp_r, noisy=s.noisy, allow_weak_identification=s.allow_weak_identification)
    cands = _candidates(s.candidates)
    true = next((c.label for c in cands if c.model == s.dgp and (s.dgp != "fsv" or c.r == s.dgp_r)), None)
    if true is None:
        raise ConfigError(f"no candidate matches the DGP {s.dgp!r}")
    est = _estimator(s, "csv")
    if est.fixed_kappa is None:
        est = replace(est, fixed_kappa=MC_KAPPA, impact_kappa=est.impact_kappa or 1.0)
    cfg = ComparisonConfig(dgp, cands, true, s.replications, est, s.seed, s.threads, s.failure_budget)
    partial = None
    try:
        result = run_model_comparison(cfg)
    except FailureBudgetExceeded as exc:
        result, partial = exc.result, exc
    paths = [out / "mc.csv", out / "mc_summary.json"]
    paths[0].write_text(result.to_csv(), encoding="utf-8")
    summary = {
        "true_model": true,
        "replications": s.replications,
        "selection_frequency": result.selection_frequency(),
        "failures": [{k: v for k, v in f.items() if k != "trace"} for f in result.failures],
    }
    write_json(summary, paths[1])
    for c in cands:
        if c.label != true and result.complete_replications():
            counts, edges = result.histogram(c.label, bins=10)
            hp = out / f"hist_{c.label.replace(':', '_')}.csv"
            with open(hp, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["left", "right", "count"])
                w.writerows(zip(edges[:-1], edges[1:], counts))
            paths.append(hp)
    if partial is not None:
        raise PartialFailure(str(partial))
    return paths


HANDLERS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "ml": cmd_ml,
    "gd": cmd_gd,
    "dic": cmd_dic,
    "compare": cmd_compare,
    "forecast": cmd_forecast,
    "mc": cmd_mc,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        settings = _settings(args)
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, settings.to_dict(), settings.seed)
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        manifest.outputs = [str(p) for p in HANDLERS[args.command](settings, out, args)]
    except PartialFailure as exc:
        print(f"monte carlo failures over budget: {exc}", file=sys.stderr)
        manifest.status, code = "partial", EXIT_BUDGET
    except (ConfigError, IngestError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest.status, code = "config_error", EXIT_CONFIG
    except (SamplerError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        manifest.status, code = "numerical_failure", EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest.status, code = "config_error", EXIT_CONFIG
    manifest.timings["total_seconds"] = time.perf_counter() - t0
    manifest.write(out)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
