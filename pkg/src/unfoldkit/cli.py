"""Command-line entry point: ``unfoldkit <command> --config CONFIG --out-dir DIR``.

Every command reads a JSON config, writes its outputs plus ``manifest.json``
into the output directory and exits with 0 on success, 1 on a usage or
configuration error and 2 when the computation itself fails.  A manifest
can be passed back as ``--config`` to repeat a run exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .binned_em import BinnedProblem, dagostini_unfold
from .core_data import (EventSample, build_histogram, derive_seed, kde_estimate, load_events,
                        load_table, save_events, silverman_bandwidth, write_table)
from .experiments import (GaussianConfig, GaussianForwardModel, JetForwardModel,
                          SyntheticJetConfig, build_jet_observables, generate_gaussian,
                          jet_records_array, make_synthetic_jet_study)
from .nnet import MLPSpec, TrainConfig
from .omnifold import DEFAULT_CLIP, ks_distance, run_omnifold, weighted_moments
from .profile_omnifold import GaussianPrior, POFConfig, run_pof, w_at
from .w_function import (AnalyticGaussianW, default_w_config, load_w, save_w,
                         synthesize_w_training_data, train_w)

__all__ = ["main", "cli_dispatch", "UsageError"]

MANIFEST_FORMAT = "unfoldkit-manifest"
JET_COLUMNS = ("pt1_truth", "pt2_truth", "pt1_reco", "pt2_reco")


class UsageError(Exception):
    """Bad command line or configuration; exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# config helpers
# --------------------------------------------------------------------------

def _check_keys(section: dict, allowed, where: str) -> None:
    if not isinstance(section, dict):
        raise UsageError(f"config key '{where}' must be an object")
    for key in section:
        if key not in allowed:
            raise UsageError(f"unknown config key '{where}.{key}'" if where
                             else f"unknown config key '{key}'")


def _take(section: dict, key: str, where: str, kind, default=None):
    if key not in section:
        return default
    val = section[key]
    try:
        if kind is float:
            return float(val)
        if kind is int:
            if isinstance(val, bool) or int(val) != val:
                raise ValueError
            return int(val)
        if kind is bool:
            if not isinstance(val, bool):
                raise ValueError
            return val
        if kind is list:
            if not isinstance(val, (list, tuple)):
                raise ValueError
            return list(val)
        return kind(val)
    except (TypeError, ValueError):
        raise UsageError(f"config key '{where}{'.' if where else ''}{key}' has invalid "
                         f"value {val!r}") from None


def _train_config(section: dict | None, seed: int, base: TrainConfig) -> TrainConfig:
    section = section or {}
    names = {f.name for f in fields(TrainConfig)} - {"seed"}
    _check_keys(section, names, "train")
    kw = {}
    for f in fields(TrainConfig):
        if f.name in section:
            kind = {"float": float, "int": int, "str": str}.get(
                f.type if isinstance(f.type, str) else f.type.__name__, float)
            kw[f.name] = _take(section, f.name, "train", kind)
    try:
        return TrainConfig(**{**base.to_dict(), **kw, "seed": seed})
    except ValueError as exc:
        raise UsageError(f"config key 'train': {exc}") from None


def _network_spec(section: dict | None, input_dim: int, seed: int, *, w_net: bool) -> MLPSpec:
    section = section or {}
    _check_keys(section, {"hidden", "dropout_rate", "dropout_after", "batch_norm",
                          "standardize"}, "network")
    base = MLPSpec.w_classifier(input_dim, seed) if w_net else MLPSpec.step_classifier(input_dim, seed)
    kw = base.to_dict()
    for key, kind in (("hidden", list), ("dropout_rate", float), ("dropout_after", int),
                      ("standardize", bool)):
        if key in section:
            kw[key] = _take(section, key, "network", kind)
    if "batch_norm" in section:
        bn = section["batch_norm"]
        kw["batch_norm"] = bn if isinstance(bn, bool) else list(bn)
    try:
        return MLPSpec(**{**kw, "hidden": tuple(kw["hidden"]),
                          "batch_norm": kw["batch_norm"] if isinstance(kw["batch_norm"], bool)
                          else tuple(kw["batch_norm"])})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config key 'network': {exc}") from None


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("UNFOLDKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"UNFOLDKIT_THREADS must be an integer, got {env!r}") from None
    return 1


def _read_config(path: str | None) -> tuple[dict, str | None]:
    if path is None:
        return {}, None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    if doc.get("format") == MANIFEST_FORMAT:
        return dict(doc["config"]), doc.get("command")
    return doc, None


# --------------------------------------------------------------------------
# samples
# --------------------------------------------------------------------------

SAMPLE_KEYS = {"path", "particle", "detector", "weight", "generate", "mu", "sigma", "theta",
               "n", "seed"}


def _sample_from_config(section, where: str, seed: int, *, need_particle: bool):
    """Returns ``(sample, truth_or_None)``; generated data keep their particle values as truth."""
    if isinstance(section, str):
        section = {"path": section}
    _check_keys(section, SAMPLE_KEYS, where)
    if "generate" in section:
        if section["generate"] != "gaussian":
            raise UsageError(f"config key '{where}.generate' must be 'gaussian'")
        kw = {k: section[k] for k in ("mu", "sigma", "theta", "n", "seed") if k in section}
        kw.setdefault("seed", derive_seed(seed, where))
        try:
            gcfg = GaussianConfig(**{k: (int(v) if k in ("n", "seed") else float(v))
                                     for k, v in kw.items()})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config key '{where}': {exc}") from None
        s = generate_gaussian(gcfg)
        return s, s
    if "path" not in section:
        raise UsageError(f"config key '{where}' needs 'path' or 'generate'")
    schema = {"particle": _take(section, "particle", where, list, []) if need_particle
              or "particle" in section else [],
              "detector": _take(section, "detector", where, list, [])}
    if not schema["detector"]:
        raise UsageError(f"config key '{where}.detector' must list the detector columns")
    if need_particle and not schema["particle"]:
        raise UsageError(f"config key '{where}.particle' must list the particle columns")
    s = load_events(section["path"], schema, section.get("weight"))
    return s, (s if s.particle is not None else None)


def _inputs(cfg: dict, seed: int):
    """MC, data, optional truth sample and optional MC jet records."""
    if "study" in cfg:
        st = cfg["study"]
        _check_keys(st, {"kind", "n", "seed", "theta_data", "tilt"}, "study")
        if st.get("kind") != "synthetic-jets":
            raise UsageError("config key 'study.kind' must be 'synthetic-jets'")
        jc = SyntheticJetConfig(n=_take(st, "n", "study", int, 40_000),
                                seed=_take(st, "seed", "study", int, derive_seed(seed, "study")))
        mc, recs, data, truth = make_synthetic_jet_study(
            jc, _take(st, "theta_data", "study", float, 1.7), _take(st, "tilt", "study", float, 1.5))
        return mc, data, truth, recs
    if "mc" not in cfg or "data" not in cfg:
        raise UsageError("config needs 'mc' and 'data' sections (or a 'study')")
    mc, _ = _sample_from_config(cfg["mc"], "mc", seed, need_particle=True)
    data, truth = _sample_from_config(cfg["data"], "data", seed, need_particle=False)
    if "truth" in cfg:
        truth, _ = _sample_from_config(cfg["truth"], "truth", seed, need_particle=True)
    return mc, data.detector_view(), truth, None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

class Run:
    def __init__(self, command: str, out_dir: Path, config: dict):
        self.command = command
        self.out = out_dir
        self.config = config
        self.artifacts: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.extra: dict = {}
        self._t = time.perf_counter()
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str, key: str | None = None) -> Path:
        self.artifacts[key or name] = name
        return self.out / name

    def lap(self, stage: str) -> None:
        now = time.perf_counter()
        self.timings[stage] = round(now - self._t, 3)
        self._t = now

    def write_manifest(self) -> None:
        missing = [n for n in self.artifacts.values() if not (self.out / n).exists()]
        if missing:
            raise RuntimeError(f"artifacts missing at manifest time: {missing}")
        doc = {"format": MANIFEST_FORMAT, "toolkit_version": __version__,
               "command": self.command, "config": self.config,
               "seeds": {"seed": self.config.get("seed", 0)},
               "artifacts": self.artifacts, "timings": self.timings, **self.extra}
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))


def _save_sample(run: Run, sample: EventSample, name: str, key: str) -> None:
    save_events(sample, run.path(name, key))


def cmd_gen(run: Run, cfg: dict, args) -> None:
    if args.kind != "gaussian":
        raise UsageError(f"unknown generator {args.kind!r}")
    _check_keys(cfg, {"mc", "data", "seed", "iterations"}, "")
    seed = cfg.get("seed", 0)
    for role in ("mc", "data"):
        section = {"generate": "gaussian", **cfg.get(role, {})}
        s, _ = _sample_from_config(section, role, seed, need_particle=False)
        _save_sample(run, s, f"{role}.csv", role)
    run.lap("generate")


def cmd_build_jets(run: Run, cfg: dict, args) -> None:
    _check_keys(cfg, {"records", "theta", "synthetic", "seed", "iterations"}, "")
    seed = cfg.get("seed", 0)
    if "synthetic" in cfg:
        st = cfg["synthetic"]
        _check_keys(st, {"n", "seed", "theta_data", "tilt"}, "synthetic")
        jc = SyntheticJetConfig(n=_take(st, "n", "synthetic", int, 40_000),
                                seed=_take(st, "seed", "synthetic", int,
                                           derive_seed(seed, "study")))
        mc, recs, data, truth = make_synthetic_jet_study(
            jc, _take(st, "theta_data", "synthetic", float, 1.7),
            _take(st, "tilt", "synthetic", float, 1.5))
        _save_sample(run, mc, "mc.csv", "mc")
        _save_sample(run, data, "data.csv", "data")
        _save_sample(run, truth, "truth.csv", "truth")
        write_table(run.path("mc_records.csv", "mc_records"),
                    {c: recs[:, i] for i, c in enumerate(JET_COLUMNS)})
    else:
        if "records" not in cfg:
            raise UsageError("config needs 'records' (a 4-column CSV) or 'synthetic'")
        tab = load_table(cfg["records"])
        for c in JET_COLUMNS:
            if c not in tab:
                raise UsageError(f"records file {cfg['records']} lacks column '{c}'")
        recs = jet_records_array(np.column_stack([tab[c] for c in JET_COLUMNS]))
        theta = _take(cfg, "theta", "", float, 1.0)
        _save_sample(run, build_jet_observables(recs, theta), "events.csv", "events")
    run.lap("build")


def cmd_unfold_binned(run: Run, cfg: dict, args) -> None:
    _check_keys(cfg, {"response", "observed", "iterations", "lambda0", "seed"}, "")
    for key in ("response", "observed"):
        if key not in cfg:
            raise UsageError(f"config needs '{key}'")
    tab = load_table(cfg["response"])
    K = np.column_stack(list(tab.values()))
    obs = load_table(cfg["observed"])
    if "count" not in obs:
        raise UsageError(f"observed file {cfg['observed']} lacks column 'count'")
    n_iter = args.iterations or _take(cfg, "iterations", "", int, 100)
    if "lambda0" in cfg:
        problem = BinnedProblem(K, obs["count"], np.asarray(_take(cfg, "lambda0", "", list)))
    else:
        problem = BinnedProblem.with_flat_start(K, obs["count"])
    traj = dagostini_unfold(problem, n_iter)
    cols = {"iteration": np.arange(len(traj), dtype=float), "loglik": traj.logliks}
    for j in range(traj.lambdas.shape[1]):
        cols[f"lambda_{j}"] = traj.lambdas[:, j]
    write_table(run.path("trajectory.csv", "trajectory"), cols)
    run.lap("unfold")


COMMON_KEYS = {"mc", "data", "truth", "study", "seed", "iterations", "clip", "train", "network"}


def _clip_cfg(cfg):
    if "clip" not in cfg:
        return DEFAULT_CLIP
    if cfg["clip"] is None:
        return None
    c = _take(cfg, "clip", "", list)
    if len(c) != 2:
        raise UsageError("config key 'clip' must be [lo, hi] or null")
    return (float(c[0]), float(c[1]))


def _summary(mc: EventSample, nu: np.ndarray, truth) -> dict:
    mean, sd = weighted_moments(mc.particle[:, 0], nu * mc.weights)
    out = {"mean": mean, "sd": sd}
    if truth is not None and truth.particle is not None:
        out["ks_to_truth"] = ks_distance(mc.particle[:, 0], nu * mc.weights,
                                         truth.particle[:, 0], truth.weights)
    return out


def _materialize(run: Run, mc, data, truth) -> None:
    _save_sample(run, mc, "mc.csv", "mc")
    _save_sample(run, data, "data.csv", "data")
    if truth is not None:
        _save_sample(run, EventSample(truth.particle, truth.particle, truth.weights),
                     "truth.csv", "truth")


def _of_weights_long(history) -> dict:
    n = history[0].size
    it = np.repeat(np.arange(len(history), dtype=float), n)
    idx = np.tile(np.arange(n, dtype=float), len(history))
    return {"event_index": idx, "iteration": it, "weight": np.concatenate(history)}


def cmd_omnifold(run: Run, cfg: dict, args) -> None:
    _check_keys(cfg, COMMON_KEYS, "")
    seed = cfg.get("seed", 0)
    mc, data, truth, _ = _inputs(cfg, seed)
    _materialize(run, mc, data, truth)
    run.lap("load")
    n_iter = args.iterations or _take(cfg, "iterations", "", int, 10)
    spec = _network_spec(cfg.get("network"), mc.detector.shape[1], seed, w_net=False)
    tcfg = _train_config(cfg.get("train"), seed, TrainConfig())
    state = run_omnifold(mc, data, n_iter, spec, tcfg, clip=_clip_cfg(cfg))
    run.lap("omnifold")
    write_table(run.path("weights.csv", "weights"), _of_weights_long(state.history))
    summ = {"iterations": n_iter, "gof": state.gof, "renormalized": True,
            **_summary(mc, state.nu, truth)}
    _write_json(run.path("summary.json", "summary"), summ)


def _forward_model(section: dict, mc: EventSample, recs):
    _check_keys(section, {"kind", "theta_bar", "records"}, "forward")
    kind = section.get("kind", "gaussian")
    tb = _take(section, "theta_bar", "forward", float, 1.0)
    if kind == "gaussian":
        return GaussianForwardModel(mc.particle, tb)
    if kind == "jets":
        if "records" in section:
            tab = load_table(section["records"])
            recs = np.column_stack([tab[c] for c in JET_COLUMNS])
        if recs is None:
            raise UsageError("config key 'forward.records' is required for jets")
        return JetForwardModel(recs, tb)
    raise UsageError(f"config key 'forward.kind' must be 'gaussian' or 'jets', got {kind!r}")


def _w_section(cfg: dict, mc: EventSample, recs, seed: int, threads: int, run: Run):
    section = cfg.get("w", {"analytic": {}})
    _check_keys(section, {"analytic", "path", "learned"}, "w")
    if "path" in section:
        return load_w(section["path"])
    if "learned" in section:
        return _train_w_from(section["learned"], mc, recs, seed, threads, run, "w.learned")
    a = section.get("analytic", {})
    _check_keys(a, {"theta_bar", "smeared_index"}, "w.analytic")
    return AnalyticGaussianW(_take(a, "theta_bar", "w.analytic", float, 1.0),
                             _take(a, "smeared_index", "w.analytic", int, 1))


W_KEYS = {"forward", "theta_range", "n", "n_members", "f1_patience", "f2_patience", "train",
          "network"}


def _train_w_from(section, mc, recs, seed, threads, run: Run, where: str):
    _check_keys(section, W_KEYS, where)
    fwd = _forward_model(section.get("forward", {}), mc, recs)
    rng_ = _take(section, "theta_range", where, list, [0.5, 2.0])
    d1, d2 = synthesize_w_training_data(fwd, tuple(rng_), _take(section, "n", where, int),
                                        derive_seed(seed, "w-data"), mc.weights)
    dim = d1.x.shape[1] + d1.y.shape[1] + 1
    spec = _network_spec(section.get("network"), dim, seed, w_net=True)
    tcfg = _train_config(section.get("train"), seed, default_w_config())
    wfn = train_w(d1, d2, spec, tcfg, _take(section, "n_members", where, int, 10),
                  f1_patience=_take(section, "f1_patience", where, int, 30),
                  f2_patience=_take(section, "f2_patience", where, int, 3),
                  theta_range=tuple(rng_), threads=threads)
    save_w(wfn, run.path("w.json", "w"))
    run.lap("train-w")
    return wfn


def cmd_train_w(run: Run, cfg: dict, args) -> None:
    _check_keys(cfg, W_KEYS | {"mc", "study", "seed", "iterations"}, "")
    seed = cfg.get("seed", 0)
    recs = None
    if "study" in cfg:
        mc, _, _, recs = _inputs(cfg, seed)
    elif "mc" in cfg:
        mc, _ = _sample_from_config(cfg["mc"], "mc", seed, need_particle=True)
    else:
        raise UsageError("config needs an 'mc' section (or a 'study')")
    run.lap("load")
    section = {k: v for k, v in cfg.items() if k in W_KEYS}
    _train_w_from(section, mc, recs, seed, _threads(args), run, "")


def _prior_cfg(section):
    if section is None:
        return None
    _check_keys(section, {"theta_bar", "sigma0"}, "pof.prior")
    try:
        return GaussianPrior(_take(section, "theta_bar", "pof.prior", float, 1.0),
                             _take(section, "sigma0", "pof.prior", float, 1.0))
    except ValueError as exc:
        raise UsageError(f"config key 'pof.prior': {exc}") from None


def cmd_pof(run: Run, cfg: dict, args) -> None:
    _check_keys(cfg, COMMON_KEYS | {"w", "pof", "compare_omnifold"}, "")
    seed = cfg.get("seed", 0)
    threads = _threads(args)
    mc, data, truth, recs = _inputs(cfg, seed)
    _materialize(run, mc, data, truth)
    run.lap("load")
    wfn = _w_section(cfg, mc, recs, seed, threads, run)
    p = cfg.get("pof", {})
    _check_keys(p, {"theta_inits", "prior", "theta_bounds", "step3_uses_updated_nu"}, "pof")
    try:
        pcfg = POFConfig(
            theta_inits=tuple(_take(p, "theta_inits", "pof", list, list(POFConfig.theta_inits))),
            n_iter=args.iterations or _take(cfg, "iterations", "", int, 10),
            prior=_prior_cfg(p.get("prior")),
            theta_bounds=tuple(_take(p, "theta_bounds", "pof", list, [0.5, 2.0])),
            clip=_clip_cfg(cfg), seed=seed,
            step3_uses_updated_nu=_take(p, "step3_uses_updated_nu", "pof", bool, False))
    except ValueError as exc:
        raise UsageError(f"config key 'pof': {exc}") from None
    spec = _network_spec(cfg.get("network"), mc.detector.shape[1], seed, w_net=False)
    tcfg = _train_config(cfg.get("train"), seed, TrainConfig())
    res = run_pof(mc, data, wfn, pcfg, spec, tcfg, threads=threads)
    run.lap("pof")

    rows = {"init": [], "iteration": [], "theta": [], "gof": []}
    for i, rec in enumerate(res.records):
        if not rec.ok:
            continue
        rows["init"] += [float(i)] * (len(rec) + 1)
        rows["iteration"] += [float(k) for k in range(len(rec) + 1)]
        rows["theta"] += [rec.theta_init] + rec.theta
        rows["gof"] += [rec.gof_initial] + rec.gof
    write_table(run.path("trajectory.csv", "trajectory"), rows)
    nu = res.best.final_nu
    write_table(run.path("weights.csv", "weights"),
                {"event_index": np.arange(nu.size, dtype=float), "weight": nu})
    selection = {
        "selected": res.selected, "theta_hat": res.theta_hat, "gof_hat": res.gof_hat,
        "runs": [{"init": r.theta_init, "final_theta": r.final_theta if r.ok else None,
                  "final_gof": r.final_gof if r.ok else None, "error": r.error,
                  "at_boundary": bool(r.at_boundary[-1]) if r.ok else None,
                  "boundary_iterations": [k for k, b in enumerate(r.at_boundary) if b]}
                 for r in res.records],
        "pof": _summary(mc, nu, truth),
    }
    if cfg.get("compare_omnifold", True):
        st = run_omnifold(mc, data, pcfg.n_iter, spec, tcfg, clip=pcfg.clip)
        write_table(run.path("of_weights.csv", "of_weights"),
                    {"event_index": np.arange(nu.size, dtype=float), "weight": st.nu})
        selection["omnifold"] = _summary(mc, st.nu, truth)
        run.lap("omnifold")
    _write_json(run.path("selection.json", "selection"), selection)
    run.extra["selection"] = {"selected": res.selected, "theta_hat": res.theta_hat,
                              "gof_hat": res.gof_hat}
    if isinstance(wfn, AnalyticGaussianW):
        run.extra["w"] = {"analytic": {"theta_bar": wfn.theta_bar,
                                       "smeared_index": wfn.smeared_index}}


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def _need(run_dir: Path, manifest: dict, key: str) -> Path:
    name = manifest.get("artifacts", {}).get(key)
    if name is None or not (run_dir / name).exists():
        raise RuntimeError(f"run directory {run_dir} is missing artifact '{key}'"
                           + (f" ({name})" if name else ""))
    return run_dir / name


def _weights_from(path: Path) -> np.ndarray:
    tab = load_table(path)
    if "iteration" in tab:
        last = tab["iteration"].max()
        sel = tab["iteration"] == last
        order = np.argsort(tab["event_index"][sel])
        return tab["weight"][sel][order]
    return tab["weight"][np.argsort(tab["event_index"])]


def _density_hist(values, weights, edges):
    h = build_histogram(values, weights, edges)
    tot = h.total
    return h.counts / (tot * np.diff(edges)) if tot > 0 else h.counts


def cmd_report(run_dir: Path, bins: int = 50, kde_points: int = 200) -> dict:
    mpath = run_dir / "manifest.json"
    if not mpath.is_file():
        raise UsageError(f"no manifest.json in {run_dir}")
    manifest = json.loads(mpath.read_text())
    cols = {"x0": ["x0"]}
    mc_tab = load_table(_need(run_dir, manifest, "mc"))
    dcols = sorted(c for c in mc_tab if c.startswith("y"))
    mc = load_events(_need(run_dir, manifest, "mc"), {"particle": cols["x0"], "detector": dcols},
                     "weight")
    data = load_events(_need(run_dir, manifest, "data"), {"detector": dcols}, "weight")
    nu_pof = _weights_from(_need(run_dir, manifest, "weights"))
    nu_of = None
    if manifest["command"] == "omnifold":
        nu_of, nu_pof = nu_pof, None
    elif "of_weights" in manifest.get("artifacts", {}):
        nu_of = _weights_from(_need(run_dir, manifest, "of_weights"))
    truth = None
    if "truth" in manifest.get("artifacts", {}):
        truth = load_events(_need(run_dir, manifest, "truth"),
                            {"particle": ["x0"], "detector": ["y0"]}, "weight")

    x = mc.particle[:, 0]
    spectra = {"mc": (x, mc.weights)}
    if truth is not None:
        spectra["truth"] = (truth.particle[:, 0], truth.weights)
    if nu_of is not None:
        spectra["of"] = (x, nu_of * mc.weights)
    if nu_pof is not None:
        spectra["pof"] = (x, nu_pof * mc.weights)
    written = {}

    ref_vals = spectra.get("truth", spectra["mc"])[0]
    bw = max(silverman_bandwidth(v, w) for v, w in spectra.values())
    grid = np.linspace(ref_vals.min() - 3 * bw, ref_vals.max() + 3 * bw, kde_points)
    kde = {"x": grid}
    for name, (v, w) in spectra.items():
        kde[name] = kde_estimate(v, w, grid, bw)
    write_table(run_dir / "report_kde.csv", kde)
    written["kde"] = "report_kde.csv"

    lo = min(v.min() for v, _ in spectra.values())
    hi = max(v.max() for v, _ in spectra.values())
    edges = np.linspace(lo, hi, bins + 1)
    dens = {k: _density_hist(v, w, edges) for k, (v, w) in spectra.items()}
    nan = np.full(bins, np.nan)
    truth_d = dens.get("truth", nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        table = {"bin_low": edges[:-1], "bin_high": edges[1:], "truth": truth_d,
                 "of": dens.get("of", nan), "pof": dens.get("pof", nan),
                 "truth/of": truth_d / dens.get("of", nan),
                 "truth/pof": truth_d / dens.get("pof", nan)}
    write_table(run_dir / "report_ratio.csv", table)
    written["ratio"] = "report_ratio.csv"

    wfn = None
    if "w" in manifest and "analytic" in manifest["w"]:
        a = manifest["w"]["analytic"]
        wfn = AnalyticGaussianW(a["theta_bar"], a["smeared_index"])
    elif "w" in manifest.get("artifacts", {}):
        wfn = load_w(_need(run_dir, manifest, "w"))
    theta_hat = manifest.get("selection", {}).get("theta_hat")
    for j, name in enumerate(dcols):
        yv = [data.detector[:, j], mc.detector[:, j]]
        e = np.linspace(min(v.min() for v in yv), max(v.max() for v in yv), bins + 1)
        det = {"bin_low": e[:-1], "bin_high": e[1:],
               "data": _density_hist(data.detector[:, j], data.weights, e),
               "mc": _density_hist(mc.detector[:, j], mc.weights, e)}
        if nu_of is not None:
            det["of"] = _density_hist(mc.detector[:, j], nu_of * mc.weights, e)
        if nu_pof is not None and wfn is not None and theta_hat is not None:
            pw = w_at(mc, theta_hat, wfn) * nu_pof * mc.weights
            det["pof"] = _density_hist(mc.detector[:, j], pw, e)
        fname = f"report_detector_{name}.csv"
        write_table(run_dir / fname, det)
        written[f"detector_{name}"] = fname

    if "trajectory" in manifest.get("artifacts", {}) and manifest["command"] == "pof":
        tab = load_table(_need(run_dir, manifest, "trajectory"))
        write_table(run_dir / "report_trajectories.csv", tab)
        written["trajectories"] = "report_trajectories.csv"
    _write_json(run_dir / "report.json", {"bins": bins, "kde_bandwidth": bw,
                                          "files": written})
    return written


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

COMMANDS = {
    "gen": cmd_gen,
    "build-jets": cmd_build_jets,
    "unfold-binned": cmd_unfold_binned,
    "omnifold": cmd_omnifold,
    "train-w": cmd_train_w,
    "pof": cmd_pof,
}


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="unfoldkit", description="Binned and unbinned unfolding toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON config or a previous run's manifest.json")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out-dir", default="unfoldkit-run", help="output directory")
        sp.add_argument("--iterations", type=int, help="number of iterations")
        sp.add_argument("--threads", type=int,
                        help="worker threads (fallback: UNFOLDKIT_THREADS)")

    g = sub.add_parser("gen", help="generate event samples")
    g.add_argument("kind", choices=["gaussian"])
    common(g)
    for name, text in (("build-jets", "build dijet observables from pT records"),
                       ("unfold-binned", "D'Agostini iteration on a binned problem"),
                       ("omnifold", "two-step OmniFold"),
                       ("train-w", "train a learned w function"),
                       ("pof", "profile OmniFold with multi-start selection")):
        common(sub.add_parser(name, help=text))
    r = sub.add_parser("report", help="plot-ready tables from a run directory")
    r.add_argument("run_dir")
    r.add_argument("--bins", type=int, default=50)
    return p


def cli_dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join([*COMMANDS, "report"]))
        if args.command == "report":
            written = cmd_report(Path(args.run_dir), args.bins)
            print(json.dumps(written, indent=2))
            return 0
        cfg, recorded = _read_config(args.config)
        if recorded is not None and recorded != args.command:
            raise UsageError(f"manifest was written by '{recorded}', not '{args.command}'")
        if args.seed is not None:
            cfg["seed"] = args.seed
        cfg.setdefault("seed", 0)
        if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
            raise UsageError(f"config key 'seed' has invalid value {cfg['seed']!r}")
        if args.iterations is not None:
            if args.iterations < 1:
                raise UsageError("--iterations must be >= 1")
            cfg["iterations"] = args.iterations
        run = Run(args.command, Path(args.out_dir), cfg)
        COMMANDS[args.command](run, cfg, args)
        run.write_manifest()
        print(json.dumps({"out_dir": str(run.out), "artifacts": run.artifacts}, indent=2))
        return 0
    except UsageError as exc:
        print(f"unfoldkit: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:
        print(f"unfoldkit: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch())
