"""Command-line pipeline: synth, train, search, generate, estimate, evaluate,
simulate and verify-gev.

Configuration is one YAML file merged over :data:`DEFAULTS`, with
``--set section.key=value`` overrides.  Relative paths resolve against the
config file's directory.  Exit codes: 0 success, 2 usage/config, 3
data/schema, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, gev
from .choice_sets import DEFAULT_SET_SIZE, build_choice_sets, read_choice_sets, write_choice_sets
from .data import (
    ROUTE_SCHEMA,
    fit_normalization,
    load_csv,
    normalize,
    split,
    synth_corpus,
    write_csv,
    write_metadata,
)
from .errors import ConfigError, VaeChoiceError
from .estimation import FAMILIES, ModelSpec, estimate, evaluate
from .simulation import MODES, ExperimentConfig, run_consistency_experiment
from .vae import checkpoint
from .vae.hyperparams import SEARCH_SPACE, VaeHyperparams
from .vae.iwae import estimate_log_bc
from .vae.model import init_model
from .vae.search import random_search
from .vae.train import train

log = logging.getLogger("vaechoice")

# Purpose tags mixed into the master seed so each stage has its own stream.
SPLIT, INIT, TRAIN, SCORE, SEARCH, GENERATE = range(1, 7)

DEFAULTS: dict = {
    "seed": None,
    "paths": {
        "corpus": "corpus.csv",
        "checkpoint": "out/vae.ckpt",
        "trace": "out/trace.csv",
        "metadata": "out/corpus.meta.json",
        "choice_sets": "out/choice_sets.csv",
        "reports": "out/reports",
    },
    "data": {"train_fraction": 0.8, "synth_rows": 2000},
    "vae": {},
    "search": {
        "trials": 10,
        "caps": {"max_iterations": 1000, "mc_draws": 100, "minibatch_size": 200},
    },
    "generate": {"count": DEFAULT_SET_SIZE, "mc_draws": None, "nest_draws": 100},
    "estimation": {
        "families": list(FAMILIES),
        "attributes": list(ROUTE_SCHEMA.names),
        "mu": 1.0,
        "nest_scales": None,
    },
    "simulation": {
        "modes": list(MODES),
        "threshold_quantile": 0.5,
    },
}


# -- config -------------------------------------------------------------------


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node = nxt
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads "1e4" as a string
        try:
            value = float(value)
        except ValueError:
            pass
    node[parts[-1]] = value


def load_config(path=None, overrides=(), seed=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = deep_merge(cfg, doc)
        base_dir = path.resolve().parent
    for item in overrides:
        apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = seed
    if cfg.get("seed") is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    cfg["_base_dir"] = str(base_dir)
    return cfg


def path_of(cfg: dict, key: str, must_exist: bool = False) -> Path:
    raw = cfg["paths"].get(key)
    if raw is None:
        raise ConfigError(f"paths.{key} is not set")
    p = Path(raw)
    if not p.is_absolute():
        p = (Path(cfg["_base_dir"]) / p).resolve()
    if must_exist and not p.exists():
        raise ConfigError(f"paths.{key}: {p} does not exist")
    return p


def _out(p: Path) -> Path:
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def stream(cfg: dict, purpose: int):
    return np.random.default_rng([cfg["seed"], purpose])


def derived_seed(cfg: dict, purpose: int) -> int:
    return int(np.random.SeedSequence([cfg["seed"], purpose]).generate_state(1)[0])


def hyperparams(cfg: dict) -> VaeHyperparams:
    try:
        return VaeHyperparams.from_dict(cfg.get("vae") or {})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _split_corpus(cfg: dict):
    corpus = load_csv(path_of(cfg, "corpus", must_exist=True))
    if corpus.split is None:
        corpus = split(corpus, cfg["data"]["train_fraction"], seed=derived_seed(cfg, SPLIT))
    return corpus


def _model_spec(cfg: dict, family: str) -> ModelSpec:
    e = cfg["estimation"]
    scales = e.get("nest_scales")
    return ModelSpec(family, tuple(e["attributes"]), float(e.get("mu", 1.0)),
                     None if scales is None else np.asarray(scales, dtype=np.float64))


def _families(cfg: dict) -> list[str]:
    fams = cfg["estimation"]["families"]
    bad = [f for f in fams if f not in FAMILIES]
    if bad or not fams:
        raise ConfigError(f"estimation.families must be a non-empty subset of {FAMILIES}")
    return list(fams)


# -- commands -------------------------------------------------------------------


def cmd_synth(cfg: dict, args) -> int:
    n = args.rows or cfg["data"]["synth_rows"]
    corpus = synth_corpus(int(n), seed=cfg["seed"])
    out = _out(path_of(cfg, "corpus"))
    write_csv(corpus, out)
    print(f"wrote {len(corpus)} rows to {out}")
    return 0


def cmd_train(cfg: dict, args) -> int:
    corpus = _split_corpus(cfg)
    schema = fit_normalization(corpus)
    hp = hyperparams(cfg)
    train_x, test_x = normalize(corpus.train, schema), normalize(corpus.test, schema)
    model = init_model(len(schema), hp, stream(cfg, INIT), lower=schema.lower_bounds, normalization=schema)
    result = train(model, train_x, stream(cfg, TRAIN), log_every=args.log_every)
    ckpt = _out(path_of(cfg, "checkpoint"))
    checkpoint.save(result.model, ckpt)
    checkpoint.write_trace(result.trace, _out(path_of(cfg, "trace")))
    write_metadata(_out(path_of(cfg, "metadata")), schema, seed=cfg["seed"],
                   train_rows=int(len(corpus.train)), test_rows=int(len(corpus.test)),
                   split_seed=corpus.meta.get("split_seed"))
    score = np.random.SeedSequence([cfg["seed"], SCORE]).spawn(2)
    S = hp.mc_draws
    tr = estimate_log_bc(result.model, train_x, S, np.random.default_rng(score[0]), args.workers)
    te = estimate_log_bc(result.model, test_x, S, np.random.default_rng(score[1]), args.workers)
    print(f"checkpoint: {ckpt}")
    print(f"train_sum_ln_bc\t{tr.sum():.6f}\trows={len(tr)}")
    print(f"test_sum_ln_bc\t{te.sum():.6f}\trows={len(te)}")
    return 0


def cmd_search(cfg: dict, args) -> int:
    corpus = _split_corpus(cfg)
    schema = fit_normalization(corpus)
    s = cfg["search"]
    trials = args.trials or s["trials"]
    space = {k: list(v) for k, v in (s.get("space") or SEARCH_SPACE).items()}
    ranked = random_search(
        normalize(corpus.train, schema), normalize(corpus.test, schema), int(trials), stream(cfg, SEARCH),
        space=space, base=hyperparams(cfg), caps=s.get("caps"), lower=schema.lower_bounds, normalization=schema,
    )
    reports = path_of(cfg, "reports")
    reports.mkdir(parents=True, exist_ok=True)
    lines = [f"# trials: {len(ranked)}", f"# seed: {cfg['seed']}", "# score: test-set sum of ln BC",
             "rank\ttrial\tscore\tstatus\thyperparams"]
    for r, t in enumerate(ranked, start=1):
        status = "ok" if t.error is None else "failed: " + t.error.replace("\t", " ").replace("\n", " ")
        hp = json.dumps(t.hyperparams.to_dict(), sort_keys=True)
        lines.append(f"{r}\t{t.index}\t{t.score:.6f}\t{status}\t{hp}")
    (reports / "search_ranking.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    best = ranked[0]
    if best.model is None:
        raise ConfigError("every search trial failed")
    checkpoint.save(best.model, reports / "search_best.ckpt")
    print("\n".join(lines))
    return 0


def cmd_generate(cfg: dict, args) -> int:
    model = checkpoint.load(path_of(cfg, "checkpoint", must_exist=True), n_attributes=len(ROUTE_SCHEMA))
    corpus = _split_corpus(cfg)
    g = cfg["generate"]
    count = args.count or g["count"]
    x, chosen, lbc, alpha = build_choice_sets(
        model, corpus.values, [cfg["seed"], GENERATE], int(count), g.get("mc_draws"), int(g["nest_draws"]),
        args.workers,
    )
    out = _out(path_of(cfg, "choice_sets"))
    write_choice_sets(out, corpus.names, x, chosen, list(corpus.split), lbc, alpha)
    print(f"wrote {len(x)} observations x {x.shape[1]} alternatives to {out}")
    return 0


def _load_sets(cfg):
    sets = read_choice_sets(path_of(cfg, "choice_sets", must_exist=True), cfg["estimation"]["attributes"])
    if "train" not in sets:
        raise ConfigError("choice-set file has no 'train' observations")
    return sets


def cmd_estimate(cfg: dict, args) -> int:
    sets = _load_sets(cfg)
    reports = path_of(cfg, "reports")
    reports.mkdir(parents=True, exist_ok=True)
    for fam in _families(cfg):
        res = estimate(sets["train"], _model_spec(cfg, fam))
        res.meta.update(split="train", seed=cfg["seed"])
        text = res.format_report()
        (reports / f"estimate_{fam}.tsv").write_text(text, encoding="utf-8")
        print(text)
    return 0


def cmd_evaluate(cfg: dict, args) -> int:
    sets = _load_sets(cfg)
    if "test" not in sets:
        raise ConfigError("choice-set file has no 'test' observations")
    tr, te = sets["train"], sets["test"]
    lines = [f"# seed: {cfg['seed']}", "# coefficients estimated on the train split, evaluated on test",
             "family\tn_train\tLL_train\tn_test\tLL0_test\tLL_test"]
    for fam in _families(cfg):
        spec = _model_spec(cfg, fam)
        res = estimate(tr, spec)
        ll0 = evaluate(te, np.zeros(len(spec.attributes)), spec)
        lines.append(f"{fam}\t{len(tr)}\t{res.ll:.6f}\t{len(te)}\t{ll0:.6f}\t{evaluate(te, res.beta, spec):.6f}")
    reports = path_of(cfg, "reports")
    reports.mkdir(parents=True, exist_ok=True)
    (reports / "evaluation.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_simulate(cfg: dict, args) -> int:
    model = checkpoint.load(path_of(cfg, "checkpoint", must_exist=True))
    sim = dict(cfg["simulation"])
    modes = sim.pop("modes", list(MODES))
    sim.setdefault("seed", cfg["seed"])
    sections = []
    for mode in modes:
        d = dict(sim, mode=mode)
        if mode == "random":
            d.pop("threshold_quantile", None)
        report = run_consistency_experiment(model, ExperimentConfig.from_dict(d), workers=args.workers)
        sections.append(report.format())
    text = "\n".join(sections)
    reports = path_of(cfg, "reports")
    reports.mkdir(parents=True, exist_ok=True)
    (reports / "simulation.tsv").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_verify_gev(cfg: dict, args) -> int:
    results = gev.generation_suite(args.instances, seed=cfg["seed"])
    failed = 0
    for i, (J, M, degen, rep) in enumerate(results):
        if args.verbose or not rep.ok:
            print(f"## instance {i}: J={J} M={M} equal_scales={degen}")
            print(rep.format())
        failed += not rep.ok
    print(f"generation_suite\tinstances={len(results)}\tfailed={failed}")
    return 4 if failed else 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "search": cmd_search,
    "generate": cmd_generate,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "verify-gev": cmd_verify_gev,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, default=1, help="parallel workers; 1 gives bit-stable output")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. vae.max_iterations=500")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vaechoice", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    s.add_argument("--rows", type=int)
    s = sub.add_parser("train", parents=[common], help="train the VAE")
    s.add_argument("--log-every", type=int, default=0)
    s = sub.add_parser("search", parents=[common], help="random hyperparameter search")
    s.add_argument("--trials", type=int)
    s = sub.add_parser("generate", parents=[common], help="choice sets with ln BC and nest membership")
    s.add_argument("--count", type=int, help="alternatives per observation, chosen included")
    sub.add_parser("estimate", parents=[common], help="estimate every configured family")
    sub.add_parser("evaluate", parents=[common], help="test-split log-likelihood per family")
    sub.add_parser("simulate", parents=[common], help="simulated-choice consistency experiments")
    s = sub.add_parser("verify-gev", parents=[common], help="generation-function property suite")
    s.add_argument("--instances", type=int, default=200)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config, args.overrides, args.seed)
        return COMMANDS[args.command](cfg, args)
    except VaeChoiceError as exc:
        print(f"vaechoice {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
