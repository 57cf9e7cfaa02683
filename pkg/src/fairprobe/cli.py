"""Batch command-line front end.

Every subcommand reads one JSON run configuration::

    {
      "schema": "schema.json",            # attribute schema (required)
      "data": "data.csv",                 # labelled CSV (required)
      "model": "out/model.json",          # optional; defaults to <output_dir>/model.json
      "output_dir": "out",                # required
      "rng_seed": 0,                      # required
      "train": {"hidden": [64, 32, 16, 8, 4], "epochs": 20, "batch_size": 128,
                "learning_rate": 0.001, "optimizer": "adam"},
      "generation": {"n_clusters": 4, "num_g": 1000, "max_iter_g": 40, ...},
      "metrics": {"rho_cons": [0.02, 0.05], "n_samples": 10000, "repeats": 5,
                  "fraction": 0.1, "retrain_epochs": 10}
    }

Relative paths resolve against the directory holding the config file.
Results go to files in ``output_dir``; logs go to stderr.  Exit codes:
0 success, 2 configuration error, 3 no discrimination found, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import nn
from .data import kmeans_seeds, load_csv, load_schema
from .errors import FairProbeError, NoDiscrimination, ParseError, SchemaMismatch
from .generate import GenerationConfig, IDISet, generate
from .interpret import profile_from_data, profile_from_report, write_report
from .metrics import (MetricsReport, biased_neuron_coverage, dm_rs, gd, gsr, input_space, ranks,
                      random_baseline, retrain_fairness, significance, spearman)

log = logging.getLogger("fairprobe")

EXIT_OK, EXIT_CONFIG, EXIT_ADVISORY, EXIT_RUNTIME = 0, 2, 3, 4

DEFAULT_TRAIN = {"hidden": [64, 32, 16, 8, 4], "epochs": 20, "batch_size": 128,
                 "learning_rate": 0.001, "optimizer": "adam"}
DEFAULT_METRICS = {"rho_cons": [0.02, 0.05], "n_samples": 10_000, "repeats": 5,
                   "fraction": 0.10, "retrain_epochs": 10}

_GEN_FIELDS = {f.name for f in fields(GenerationConfig)}


class ConfigError(FairProbeError):
    pass


@dataclass
class RunConfig:
    schema: Path
    data: Path
    output_dir: Path
    rng_seed: int
    model: Path
    train: dict = field(default_factory=dict)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    metrics: dict = field(default_factory=dict)

    def path(self, name):
        return self.output_dir / name


def _existing(base, value, key):
    if value is None:
        raise ConfigError(f"config lacks required key {key!r}")
    p = (base / value) if not Path(value).is_absolute() else Path(value)
    if not p.exists():
        raise ConfigError(f"{key} path does not exist: {p}")
    return p


def load_config(path, overrides=None):
    """Parse and validate a run configuration; ``overrides`` patch the generation block."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    base = path.parent
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    seed = overrides.pop("rng_seed", doc.get("rng_seed"))
    if seed is None:
        raise ConfigError("config lacks required key 'rng_seed'")
    out_dir = overrides.pop("output_dir", doc.get("output_dir"))
    if out_dir is None:
        raise ConfigError("config lacks required key 'output_dir'")
    out_dir = Path(out_dir) if Path(out_dir).is_absolute() else base / out_dir
    gen = dict(doc.get("generation", {}))
    unknown = set(gen) - _GEN_FIELDS
    if unknown:
        raise ConfigError(f"unknown generation settings {sorted(unknown)}")
    gen.update(overrides)
    gen["rng_seed"] = int(gen.get("rng_seed", seed))
    try:
        gen_cfg = GenerationConfig(**gen)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"generation settings: {exc}") from None
    model = doc.get("model")
    model = out_dir / "model.json" if model is None else (
        Path(model) if Path(model).is_absolute() else base / model)
    return RunConfig(
        schema=_existing(base, doc.get("schema"), "schema"),
        data=_existing(base, doc.get("data"), "data"),
        output_dir=out_dir,
        rng_seed=int(seed),
        model=model,
        train={**DEFAULT_TRAIN, **doc.get("train", {})},
        generation=gen_cfg,
        metrics={**DEFAULT_METRICS, **doc.get("metrics", {})},
    )


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _splits(cfg):
    schema = load_schema(cfg.schema)
    dataset = load_csv(cfg.data, schema)
    if dataset.y is None:
        raise ConfigError(f"{cfg.data}: no label column {schema.label_name!r}")
    return schema, dataset.split(cfg.rng_seed)


def _load_model(cfg):
    if not cfg.model.exists():
        raise ConfigError(f"model path does not exist: {cfg.model} (run 'train' first)")
    return nn.load(cfg.model)


def _train_config(cfg, epochs=None):
    t = cfg.train
    return nn.TrainConfig(learning_rate=float(t["learning_rate"]), optimizer=t["optimizer"],
                          epochs=int(epochs or t["epochs"]), batch_size=int(t["batch_size"]),
                          rng_seed=cfg.rng_seed)


def _profile(cfg, net, schema, test):
    path = cfg.path("interpret.json")
    if path.exists():
        return profile_from_report(json.loads(path.read_text()))
    return profile_from_data(net, test.X, schema)


def cmd_train(cfg, args):
    schema, (train, val, test) = _splits(cfg)
    n_classes = max(len(schema.classes), int(train.y.max()) + 1)
    net = nn.init_network(schema.n_attributes, cfg.train["hidden"], n_classes, seed=cfg.rng_seed)
    net = nn.train(net, train.X, train.y, _train_config(cfg))
    cfg.model.parent.mkdir(parents=True, exist_ok=True)
    nn.save(net, cfg.model)
    report = {
        "model": cfg.model.name,
        "model_sha256": _file_sha256(cfg.model),
        "rng_seed": cfg.rng_seed,
        "train": cfg.train,
        "sizes": {"train": len(train), "val": len(val), "test": len(test)},
        "accuracy": {"train": nn.accuracy(net, train.X, train.y),
                     "val": nn.accuracy(net, val.X, val.y) if len(val) else None,
                     "test": nn.accuracy(net, test.X, test.y) if len(test) else None},
    }
    _dump(report, cfg.path("train_report.json"))
    print(f"train accuracy {report['accuracy']['train']:.4f}, "
          f"test accuracy {report['accuracy']['test']}")
    return EXIT_OK


def cmd_interpret(cfg, args):
    schema, (_, _, test) = _splits(cfg)
    net = _load_model(cfg)
    profile = profile_from_data(net, test.X, schema)
    curves = cfg.path("curves")
    curves.mkdir(parents=True, exist_ok=True)
    write_report(profile, cfg.path("interpret.json"), curves)
    print(f"most biased layer {profile.most_biased_layer} (AUC {profile.aucs[profile.most_biased_layer]:.4f}), "
          f"T_d {profile.threshold:.3f}, {profile.n_biased} biased neurons")
    return EXIT_OK


def write_idis(path, schema, idis):
    names = schema.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + [f"witness_{n}" for n in names] + ["phase", "seed", "iteration"])
        for pair, prov in zip(idis.pairs, idis.provenance):
            cells = [format(v, ".17g") for v in np.concatenate([pair.a, pair.b])]
            w.writerow(cells + [prov.get("phase", ""), prov.get("seed", ""), prov.get("iteration", "")])


def read_idis(path, schema):
    """Load an ``idis.csv`` back into an ``IDISet`` (provenance included)."""
    out = IDISet()
    k = schema.n_attributes
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:k] != schema.names:
            raise SchemaMismatch(f"{path}: header does not match the schema")
        for r, row in enumerate(reader, start=2):
            try:
                vals = np.array([float(c) for c in row[:2 * k]])
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell", row=r) from None
            out.add(vals[:k], vals[k:], phase=row[2 * k], seed=int(row[2 * k + 1]),
                    iteration=int(row[2 * k + 2]))
    return out


def cmd_generate(cfg, args):
    schema, (train, _, test) = _splits(cfg)
    net = _load_model(cfg)
    profile = _profile(cfg, net, schema, test)
    gen = cfg.generation
    seed_rows = kmeans_seeds(train.X, gen.n_clusters, gen.num_g, cfg.rng_seed)
    t0 = time.perf_counter()
    found_g, found_l = generate(net, train.X[seed_rows], profile, schema, gen,
                                workers=args.workers)
    wall = time.perf_counter() - t0
    merged = IDISet()
    merged.extend(found_g)
    merged.extend(found_l)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_idis(cfg.path("idis.csv"), schema, merged)
    n_gen = merged.n_generated
    summary = {"global": len(found_g), "local": len(found_l), "total": len(merged),
               "n_generated": n_gen, "gsr": gsr(len(merged), n_gen) if n_gen else None}
    _dump({"config": gen.to_dict(), "model_sha256": _file_sha256(cfg.model),
           "seed_rows": seed_rows.tolist(), "summary": summary,
           "pairs": merged.provenance}, cfg.path("provenance.json"))
    log.info("generation wall time %.2fs", wall)
    if args.timing:
        _dump({"generate_seconds": wall}, cfg.path("timing.json"))
    print(f"IDIs: {summary['global']} global, {summary['local']} local, {summary['total']} total; "
          f"GSR {summary['gsr']}")
    return EXIT_OK


def _retrain_summary(cfg):
    path = cfg.path("retrain_report.json")
    return json.loads(path.read_text()) if path.exists() else None


def cmd_evaluate(cfg, args):
    schema, (train, _, test) = _splits(cfg)
    net = _load_model(cfg)
    profile = _profile(cfg, net, schema, test)
    for name in ("idis.csv", "provenance.json"):
        if not cfg.path(name).exists():
            raise ConfigError(f"missing {cfg.path(name)} (run 'generate' first)")
    idis = read_idis(cfg.path("idis.csv"), schema)
    prov = json.loads(cfg.path("provenance.json").read_text())
    gen = replace(cfg.generation, time_budget=None)
    n_gen = prov["summary"]["n_generated"]
    g = gsr(len(idis), n_gen) if n_gen else 0.0
    seeds = train.X[np.asarray(prov["seed_rows"], dtype=np.int64)]
    baseline = random_baseline(net, seeds, schema, gen)
    nf_global = IDISet()
    for pair, pv in zip(idis.pairs, idis.provenance):
        if pv["phase"] == "global":
            nf_global.add(pair.a, pair.b, **pv)
    gd_values = {}
    for rho in cfg.metrics["rho_cons"]:
        key = f"rho={rho}"
        if len(nf_global) and len(baseline):
            gd_values[key] = gd(nf_global, baseline, float(rho), schema)
    n_samples = int(cfg.metrics["n_samples"])
    before = dm_rs(net, schema, n_samples, cfg.rng_seed)
    retrained = _retrain_summary(cfg)
    rho_s, sigma, after = None, {}, None
    if retrained is not None:
        after = retrained["dm_rs_after"]
        aucs = [retrained["auc_before"]] + [r["auc"] for r in retrained["runs"]]
        dms = [retrained["dm_rs_before"]] + [r["dm_rs"] for r in retrained["runs"]]
        if len(aucs) >= 2:
            rho_s = spearman(ranks(aucs), ranks(dms))
            sigma = {"auc": significance(aucs), "dm_rs": significance(dms)}
    report = MetricsReport(
        gsr=g, input_space=input_space(len(idis), g), n_idis=len(idis), n_generated=n_gen,
        gd=gd_values, dm_rs_before=before, dm_rs_after=after, rho_s=rho_s, sigma=sigma,
        coverage=biased_neuron_coverage(net, idis.A, profile) if len(idis) else 0.0,
        provenance={"model_sha256": _file_sha256(cfg.model), "rng_seed": cfg.rng_seed,
                    "n_seeds": len(prov["seed_rows"]), "generation": gen.to_dict(),
                    "n_samples": n_samples, "gd_reference": "global-phase IDIs vs random walk",
                    "baseline": {"n_idis": len(baseline), "n_generated": baseline.n_generated}},
    )
    cfg.path("metrics.json").write_text(report.to_json() + "\n")
    print(f"GSR {report.gsr:.4f}, DM-RS {before:.4f}, coverage {report.coverage:.3f}, "
          f"GD {json.dumps(report.to_dict()['gd'])}")
    return EXIT_OK


def cmd_retrain(cfg, args):
    schema, (train, _, test) = _splits(cfg)
    net = _load_model(cfg)
    if not cfg.path("idis.csv").exists():
        raise ConfigError(f"missing {cfg.path('idis.csv')} (run 'generate' first)")
    idis = read_idis(cfg.path("idis.csv"), schema)
    profile = _profile(cfg, net, schema, test)
    m = cfg.metrics
    result = retrain_fairness(net, idis, train.X, train.y, schema, fraction=float(m["fraction"]),
                              repeats=int(m["repeats"]),
                              train_cfg=_train_config(cfg, m["retrain_epochs"]),
                              X_eval=test.X, X_test=test.X, y_test=test.y,
                              n_samples=int(m["n_samples"]), rng_seed=cfg.rng_seed,
                              profile=profile)
    repaired = cfg.path("model_repaired.json")
    nn.save(result.models[0], repaired)
    doc = result.to_dict()
    doc["repaired_model"] = repaired.name
    doc["model_sha256"] = {"before": _file_sha256(cfg.model), "after": _file_sha256(repaired)}
    _dump(doc, cfg.path("retrain_report.json"))
    print(f"DM-RS {result.dm_rs_before:.4f} -> {result.dm_rs_after:.4f}, "
          f"AUC {result.auc_before:.4f} -> {result.auc_after:.4f}")
    return EXIT_OK


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.4f}"
    return str(v)


def render_report(out_dir):
    """Plain-text summary of the JSON artifacts present in ``out_dir``."""
    out_dir = Path(out_dir)
    lines = ["# fairprobe run summary", ""]

    def load(name):
        p = out_dir / name
        return json.loads(p.read_text()) if p.exists() else None

    tr = load("train_report.json")
    if tr:
        acc = tr["accuracy"]
        lines += ["## Model", f"- hidden layers: {tr['train']['hidden']}",
                  f"- accuracy: train {_fmt(acc['train'])}, val {_fmt(acc['val'])}, "
                  f"test {_fmt(acc['test'])}", ""]
    it = load("interpret.json")
    if it:
        lines += ["## Interpretation", f"- most biased layer: {it['most_biased_layer']}",
                  f"- threshold T_d: {_fmt(it['threshold'])}",
                  f"- biased neurons: {it['n_biased']}"]
        lines += [f"- layer {e['layer']} AUC: {_fmt(e['auc'])}" for e in it["layers"]]
        lines.append("")
    pv = load("provenance.json")
    if pv:
        s = pv["summary"]
        lines += ["## Generation", f"- IDIs: {s['global']} global, {s['local']} local, "
                  f"{s['total']} total", f"- distinct generated: {s['n_generated']}",
                  f"- GSR: {_fmt(s['gsr'])}", ""]
    rt = load("retrain_report.json")
    if rt:
        lines += ["## Repair", f"- DM-RS: {_fmt(rt['dm_rs_before'])} -> {_fmt(rt['dm_rs_after'])}",
                  f"- AUC: {_fmt(rt['auc_before'])} -> {_fmt(rt['auc_after'])}",
                  f"- accuracy: {_fmt(rt['accuracy_before'])} -> {_fmt(rt['accuracy_after'])}", ""]
    mt = load("metrics.json")
    if mt:
        lines += ["## Metrics", f"- GSR: {_fmt(mt['gsr'])} (input space {mt['input_space']})",
                  f"- DM-RS before: {_fmt(mt['dm_rs_before'])}",
                  f"- biased-neuron coverage: {_fmt(mt['coverage'])}",
                  f"- Spearman rho_s: {_fmt(mt['rho_s'])}"]
        lines += [f"- GD {k}: {_fmt(v)}" for k, v in sorted(mt["gd"].items())]
        lines += [f"- GD {k}: inf" for k in mt["gd_infinite"]]
        lines += [f"- sigma {k}: {_fmt(v)}" for k, v in sorted(mt["sigma"].items())]
        lines.append("")
    if len(lines) == 2:
        lines.append("no artifacts found")
    return "\n".join(lines).rstrip() + "\n"


def cmd_report(cfg, args):
    text = render_report(cfg.output_dir)
    if cfg.output_dir.exists():
        cfg.path("report.md").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


HELP = {
    "train": "train a classifier on the training split and save it",
    "interpret": "compute AS curves, the most biased layer and its biased neurons",
    "generate": "run the global and local IDI search",
    "evaluate": "compute GSR, GD, DM-RS, coverage and rank statistics",
    "retrain": "retrain with a sample of IDIs and report fairness before/after",
    "report": "print a readable summary of the JSON artifacts",
}

COMMANDS = {"train": cmd_train, "interpret": cmd_interpret, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "retrain": cmd_retrain, "report": cmd_report}

_OVERRIDES = [
    ("--n-clusters", int), ("--num-g", int), ("--max-iter-g", int), ("--max-iter-l", int),
    ("--step-size-g", float), ("--step-size-l", float), ("--mu-g", float), ("--mu-l", float),
    ("--r-step-g", int), ("--r-step-l", int), ("--p-r", float), ("--time-budget", float),
]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", required=True, help="JSON run configuration")
    common.add_argument("--quiet", "-q", action="store_true", help="suppress progress logging")
    common.add_argument("--workers", type=int, default=1,
                        help="threads for seed chunks (results do not depend on it)")
    common.add_argument("--timing", action="store_true", help="also write timing.json")
    common.add_argument("--rng-seed", type=int, help="override rng_seed")
    common.add_argument("--output-dir", help="override output_dir")
    for flag, kind in _OVERRIDES:
        common.add_argument(flag, type=kind, help="override generation." + flag[2:].replace("-", "_"))
    parser = argparse.ArgumentParser(prog="fairprobe",
                                     description="Biased-neuron fairness testing for dense networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    overrides = {flag[2:].replace("-", "_"): getattr(args, flag[2:].replace("-", "_"))
                 for flag, _ in _OVERRIDES}
    overrides["rng_seed"] = args.rng_seed
    overrides["output_dir"] = args.output_dir
    try:
        cfg = load_config(args.config, overrides)
        if args.command != "report":
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, SchemaMismatch, ParseError) as exc:
        print(f"fairprobe: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoDiscrimination as exc:
        print(f"fairprobe: no discrimination found: {exc}", file=sys.stderr)
        return EXIT_ADVISORY
    except (FairProbeError, ValueError, ZeroDivisionError, FloatingPointError) as exc:
        print(f"fairprobe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
