"""Command-line entry point.

One run = one output directory holding the resolved config echo
(config.json), the subcommand's artifacts, and a MANIFEST of sha256
checksums.  Configuration comes from an INI file (sections per module)
with flag overrides on top; TAXCL_SEED overrides every config seed.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import analysis, data, losses, model as model_mod
from .batchdecomp import LabeledBatch
from .data import GenSpec
from .losses import LossConfig
from .model import MlpSpec, ProbeConfig, ScheduleConfig, TrainConfig
from .rng import SeededRng

GRADCHECK_TOL = 1e-6

VARIANT_ALIASES = {
    "supcon": "supcon",
    "taxcl": "taxcl_sup",
    "suphcl": "suphcl",
    "combined": "combined",
    "taxcl-unsup": "taxcl_unsup",
}


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_tuple(s: str) -> tuple[int, ...]:
    s = s.strip()
    if not s:
        return ()
    return tuple(int(tok) for tok in s.split(","))


def _float_tuple(s: str) -> tuple[float, ...]:
    s = s.strip()
    if not s:
        return ()
    return tuple(float(tok) for tok in s.split(","))


# section -> key -> (parser, default); the resolved config is the
# full table with file values, then TAXCL_SEED, then flags layered on.
_SCHEMA = {
    "gen": {
        "S": (int, 4), "C": (int, 5), "n_per_class": (int, 50),
        "d": (int, 16), "sigma_super": (float, 5.0), "sigma_sub": (float, 1.0),
        "sigma_noise": (float, 0.2), "seed": (int, 0),
    },
    "model": {
        "hidden": (_int_tuple, (64, 64)), "d_rep": (int, 32),
        "proj": (_int_tuple, (16,)), "rectified_rep": (_parse_bool, False),
    },
    "train": {
        "epochs": (int, 100), "batch_size": (int, 64), "lr": (float, 0.05),
        "momentum": (float, 0.9), "weight_decay": (float, 1e-4),
        "seed": (int, 0), "aug_strength": (float, 1.0),
        "schedule": (str, "cosine_warmup"), "warmup_epochs": (int, 5),
        "milestones": (_int_tuple, (60, 80)), "factor": (float, 0.1),
    },
    "loss": {
        "tau": (float, 0.2), "tau_plus": (float, 0.1), "alpha": (float, 0.5),
        "epsilon": (float, 0.5), "q_mode": (str, "importance_debiased"),
        "variant": (str, "taxcl"), "reduction": (str, "mean"),
        "debias_scale": (str, "tax_size"), "sim_norm": (str, "minmax"),
    },
    "probe": {
        "epochs": (int, 100), "lr": (float, 0.1),
        "milestones": (_int_tuple, (60, 80)), "factor": (float, 0.1),
        "seed": (int, 0),
    },
    "analysis": {
        "k": (int, 5), "split": (str, "test"), "subset": (str, ""),
    },
    "sweep": {
        "alphas": (_float_tuple, (0.0, 0.25, 0.5, 0.75, 1.0)),
        "seeds": (_int_tuple, (0,)),
    },
}


def resolve_config(config_path: str | None, overrides: dict) -> dict:
    """defaults <- INI file <- TAXCL_SEED <- explicit flags."""
    resolved = {sec: {k: d for k, (_, d) in keys.items()}
                for sec, keys in _SCHEMA.items()}
    if config_path:
        ini = configparser.ConfigParser()
        read = ini.read(config_path)
        if not read:
            raise OSError(f"cannot read config file {config_path}")
        for sec in ini.sections():
            if sec not in _SCHEMA:
                raise ValueError(f"unknown config section [{sec}]")
            for key, raw in ini[sec].items():
                if key not in _SCHEMA[sec]:
                    raise ValueError(f"unknown config key {sec}.{key}")
                parser, _ = _SCHEMA[sec][key]
                resolved[sec][key] = parser(raw)
    env_seed = os.environ.get("TAXCL_SEED")
    if env_seed is not None:
        seed = int(env_seed)
        for sec in ("gen", "train", "probe"):
            resolved[sec]["seed"] = seed
    for (sec, key), value in overrides.items():
        if value is not None:
            resolved[sec][key] = value
    return resolved


def config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"),
                      default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:8]


def make_run_dir(args, resolved: dict) -> str:
    if args.out:
        run_dir = args.out
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = os.path.join("runs", f"{stamp}-{config_hash(resolved)}")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w", encoding="ascii") as fh:
        json.dump(resolved, fh, sort_keys=True, indent=2, default=list)
        fh.write("\n")
    return run_dir


def write_manifest(run_dir: str) -> None:
    entries = []
    for name in sorted(os.listdir(run_dir)):
        path = os.path.join(run_dir, name)
        if name == "MANIFEST" or not os.path.isfile(path):
            continue
        digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
        entries.append(f"{digest}  {os.path.getsize(path):>10}  {name}")
    with open(os.path.join(run_dir, "MANIFEST"), "w", encoding="ascii") as fh:
        fh.write("\n".join(entries) + "\n")


# ---------------------------------------------------------------------------
# config -> domain objects
# ---------------------------------------------------------------------------


def _gen_spec(resolved: dict) -> GenSpec:
    return GenSpec(**resolved["gen"])


def _mlp_spec(resolved: dict, d_in: int) -> MlpSpec:
    m = resolved["model"]
    return MlpSpec(d_in=d_in, hidden=m["hidden"], d_rep=m["d_rep"],
                   proj=m["proj"], rectified_rep=m["rectified_rep"])


def _loss_config(resolved: dict) -> LossConfig:
    lo = dict(resolved["loss"])
    alias = lo["variant"]
    if alias not in VARIANT_ALIASES:
        raise ValueError(f"variant must be one of "
                         f"{sorted(VARIANT_ALIASES)}, got {alias!r}")
    lo["variant"] = VARIANT_ALIASES[alias]
    return LossConfig(**lo)


def _train_config(resolved: dict) -> TrainConfig:
    t = resolved["train"]
    schedule = ScheduleConfig(kind=t["schedule"],
                              warmup_epochs=t["warmup_epochs"],
                              milestones=t["milestones"], factor=t["factor"])
    return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"],
                       lr=t["lr"], momentum=t["momentum"],
                       weight_decay=t["weight_decay"], schedule=schedule,
                       loss=_loss_config(resolved), seed=t["seed"],
                       aug_strength=t["aug_strength"])


def _probe_config(resolved: dict) -> ProbeConfig:
    p = resolved["probe"]
    return ProbeConfig(epochs=p["epochs"], lr=p["lr"],
                       milestones=p["milestones"], factor=p["factor"],
                       seed=p["seed"])


def _load_dataset(args, resolved: dict) -> data.TaxonomyDataset:
    if getattr(args, "data", None):
        return data.load_csv(args.data)
    return data.generate(_gen_spec(resolved))


def _analysis_rows(dataset: data.TaxonomyDataset, split: str) -> np.ndarray:
    if split == "train":
        return dataset.train_indices
    if split == "test":
        return dataset.test_indices
    if split == "all":
        return np.arange(dataset.n)
    raise ValueError(f"split must be train|test|all, got {split!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    resolved = resolve_config(args.config, _overrides(args))
    run_dir = make_run_dir(args, resolved)
    spec = _gen_spec(resolved)
    dataset = data.generate(spec)
    data.save_csv(dataset, os.path.join(run_dir, "dataset.csv"))
    with open(os.path.join(run_dir, "genspec.json"), "w", encoding="ascii") as fh:
        json.dump({k: getattr(spec, k) for k in _SCHEMA["gen"]}, fh,
                  sort_keys=True, indent=2)
        fh.write("\n")
    write_manifest(run_dir)
    print(f"wrote {dataset.n} rows to {run_dir}/dataset.csv")
    return 0


def cmd_train(args) -> int:
    resolved = resolve_config(args.config, _overrides(args))
    run_dir = make_run_dir(args, resolved)
    dataset = _load_dataset(args, resolved)
    cfg = _train_config(resolved)
    ckpt = model_mod.pretrain(dataset, cfg, _mlp_spec(resolved, dataset.d))
    model_mod.save_checkpoint(ckpt, os.path.join(run_dir, "checkpoint.bin"))
    model_mod.save_trace_csv(ckpt.trace, os.path.join(run_dir, "trace.csv"))
    write_manifest(run_dir)
    final = ckpt.trace[-1].loss if ckpt.trace else float("nan")
    print(f"trained {ckpt.step_count} steps, final loss {final:.6f}; "
          f"artifacts in {run_dir}")
    return 0


def cmd_probe(args) -> int:
    resolved = resolve_config(args.config, _overrides(args))
    run_dir = make_run_dir(args, resolved)
    ckpt = model_mod.load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args, resolved)
    result = model_mod.linear_probe(ckpt, dataset, _probe_config(resolved))
    report = {
        "accuracy": result.accuracy,
        "train_accuracy": result.train_accuracy,
        "n_classes": result.n_classes,
    }
    with open(os.path.join(run_dir, "probe.json"), "w", encoding="ascii") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    write_manifest(run_dir)
    print(f"probe accuracy {result.accuracy:.4f} "
          f"(train {result.train_accuracy:.4f}) over {result.n_classes} classes")
    return 0


def cmd_analyze(args) -> int:
    resolved = resolve_config(args.config, _overrides(args))
    run_dir = make_run_dir(args, resolved)
    ckpt = model_mod.load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args, resolved)
    rows = _analysis_rows(dataset, resolved["analysis"]["split"])
    if rows.size == 0:
        raise ValueError(f"split {resolved['analysis']['split']!r} is empty")
    X, y_gt, y_tax = dataset.subset(rows)
    R = model_mod.forward(ckpt.model, X).R
    summary: dict = {"which": args.which, "rows": int(rows.size)}

    if args.which == "spectrum":
        subset_raw = resolved["analysis"]["subset"]
        rng = SeededRng(resolved["gen"]["seed"], 7)
        if subset_raw:
            idx = np.array(_int_tuple(subset_raw), dtype=np.int64)
            reports = analysis.spectrum(R, idx, matched_random=True, rng=rng)
        else:
            reports = analysis.taxonomy_spectra(R, y_tax, rng)
        analysis.write_spectrum_csv(reports, os.path.join(run_dir, "spectrum.csv"))
        summary["spectra"] = [
            {"descriptor": r.descriptor, "size": r.size, "trace": r.trace,
             "top_eigenvalue": float(r.eigenvalues[0])}
            for r in reports
        ]
    elif args.which == "cosine":
        report = analysis.cosine_gap(R, y_gt, y_tax)
        analysis.write_cosine_csv(report, os.path.join(run_dir, "cosine.csv"))
        summary.update({
            "tax_aggregate": report.tax_aggregate,
            "reg_aggregate": report.reg_aggregate,
            "gap": report.gap,
        })
    elif args.which == "retrieve":
        report = analysis.retrieve(R, y_tax, resolved["analysis"]["k"])
        analysis.write_retrieval_csv(report, os.path.join(run_dir, "retrieval.csv"))
        summary.update({"k": report.k, "hit_rate": report.hit_rate,
                        "records": len(report.records)})
    else:  # pragma: no cover - argparse choices guard this
        raise ValueError(f"unknown analysis {args.which!r}")

    analysis.write_summary_json(summary, os.path.join(run_dir, "summary.json"))
    write_manifest(run_dir)
    print(json.dumps(summary, sort_keys=True, default=list))
    return 0


def cmd_sweep_alpha(args) -> int:
    resolved = resolve_config(args.config, _overrides(args))
    run_dir = make_run_dir(args, resolved)
    dataset = _load_dataset(args, resolved)
    base_cfg = _train_config(resolved)
    rows = analysis.alpha_sweep(dataset, base_cfg,
                                resolved["sweep"]["alphas"],
                                resolved["sweep"]["seeds"],
                                _mlp_spec(resolved, dataset.d),
                                _probe_config(resolved))
    chash = config_hash(resolved)
    with open(os.path.join(run_dir, "sweep.csv"), "w", encoding="ascii") as fh:
        fh.write("alpha,seed,probe_accuracy,final_loss,config_hash\n")
        for row in rows:
            fh.write(f"{row.alpha:.17g},{row.seed},{row.probe_accuracy:.17g},"
                     f"{row.final_loss:.17g},{chash}\n")
    best = max(rows, key=lambda r: r.probe_accuracy)
    analysis.write_summary_json(
        {"cells": len(rows), "best_alpha": best.alpha, "best_seed": best.seed,
         "best_accuracy": best.probe_accuracy, "config_hash": chash},
        os.path.join(run_dir, "summary.json"))
    write_manifest(run_dir)
    print(f"{len(rows)} sweep cells; best accuracy {best.probe_accuracy:.4f} "
          f"at alpha={best.alpha}")
    return 0


def _gradcheck_batch(seed: int) -> LabeledBatch:
    rng = SeededRng(seed, 11)
    M, d = 12, 6
    Z = np.array(rng.gaussians(M * d)).reshape(M, d)
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    y_gt = np.arange(M) // 2
    y_tax = np.arange(M) // 4
    view_pair = np.arange(M) ^ 1
    return LabeledBatch(Z, y_gt, y_tax, view_pair)


def cmd_gradcheck(args) -> int:
    resolved = resolve_config(args.config, _overrides(args))
    run_dir = make_run_dir(args, resolved)
    batch = _gradcheck_batch(resolved["train"]["seed"])
    perturb = 1e-3 if args.inject_gradient_error else 0.0
    cfg = _loss_config(resolved)
    results = {}
    ok = True
    for variant in losses.VARIANTS:
        err, coord = losses.finite_diff_check(
            variant, batch, cfg, grad_perturbation=perturb)
        passed = err < GRADCHECK_TOL
        ok = ok and passed
        results[variant] = {"max_rel_err": err,
                            "at": list(coord), "pass": passed}
    report = {"tolerance": GRADCHECK_TOL, "all_pass": ok, "variants": results}
    with open(os.path.join(run_dir, "gradcheck.json"), "w", encoding="ascii") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    write_manifest(run_dir)
    for variant, res in results.items():
        status = "ok" if res["pass"] else "FAIL"
        print(f"{variant:12s} max rel err {res['max_rel_err']:.3e} "
              f"at {tuple(res['at'])} [{status}]")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

# flag name -> (section, key, parser); every subcommand shares the pool
_FLAGS = {
    "S": ("gen", "S", int), "C": ("gen", "C", int),
    "n-per-class": ("gen", "n_per_class", int), "d": ("gen", "d", int),
    "sigma-super": ("gen", "sigma_super", float),
    "sigma-sub": ("gen", "sigma_sub", float),
    "sigma-noise": ("gen", "sigma_noise", float),
    "seed": ("gen", "seed", int),
    "hidden": ("model", "hidden", _int_tuple),
    "d-rep": ("model", "d_rep", int), "proj": ("model", "proj", _int_tuple),
    "rectified-rep": ("model", "rectified_rep", _parse_bool),
    "epochs": ("train", "epochs", int),
    "batch-size": ("train", "batch_size", int),
    "lr": ("train", "lr", float), "momentum": ("train", "momentum", float),
    "weight-decay": ("train", "weight_decay", float),
    "train-seed": ("train", "seed", int),
    "aug-strength": ("train", "aug_strength", float),
    "schedule": ("train", "schedule", str),
    "warmup-epochs": ("train", "warmup_epochs", int),
    "milestones": ("train", "milestones", _int_tuple),
    "factor": ("train", "factor", float),
    "tau": ("loss", "tau", float), "tau-plus": ("loss", "tau_plus", float),
    "alpha": ("loss", "alpha", float), "epsilon": ("loss", "epsilon", float),
    "q-mode": ("loss", "q_mode", str), "variant": ("loss", "variant", str),
    "reduction": ("loss", "reduction", str),
    "debias-scale": ("loss", "debias_scale", str),
    "sim-norm": ("loss", "sim_norm", str),
    "probe-epochs": ("probe", "epochs", int),
    "probe-lr": ("probe", "lr", float),
    "probe-seed": ("probe", "seed", int),
    "k": ("analysis", "k", int), "split": ("analysis", "split", str),
    "subset": ("analysis", "subset", str),
    "alphas": ("sweep", "alphas", _float_tuple),
    "seeds": ("sweep", "seeds", _int_tuple),
}

_FLAG_CHOICES = {
    "variant": sorted(VARIANT_ALIASES),
    "q-mode": list(losses.Q_MODES),
    "reduction": list(losses.REDUCTIONS),
    "debias-scale": list(losses.DEBIAS_SCALES),
    "schedule": list(model_mod.SCHEDULE_KINDS),
    "split": ["train", "test", "all"],
    "sim-norm": ["minmax", "affine"],
}

_SUBCOMMAND_FLAGS = {
    "gen-data": ["S", "C", "n-per-class", "d", "sigma-super", "sigma-sub",
                 "sigma-noise", "seed"],
    "train": ["S", "C", "n-per-class", "d", "sigma-super", "sigma-sub",
              "sigma-noise", "seed", "hidden", "d-rep", "proj",
              "rectified-rep", "epochs", "batch-size", "lr", "momentum",
              "weight-decay", "train-seed", "aug-strength", "schedule",
              "warmup-epochs", "milestones", "factor", "tau", "tau-plus",
              "alpha", "epsilon", "q-mode", "variant", "reduction",
              "debias-scale", "sim-norm"],
    "probe": ["probe-epochs", "probe-lr", "probe-seed", "seed",
              "S", "C", "n-per-class", "d"],
    "analyze": ["k", "split", "subset", "seed", "S", "C", "n-per-class", "d"],
    "sweep-alpha": ["S", "C", "n-per-class", "d", "sigma-super", "sigma-sub",
                    "sigma-noise", "seed", "hidden", "d-rep", "proj",
                    "rectified-rep", "epochs", "batch-size", "lr", "momentum",
                    "weight-decay", "train-seed", "aug-strength", "schedule",
                    "warmup-epochs", "milestones", "factor", "tau", "tau-plus",
                    "epsilon", "q-mode", "reduction", "debias-scale",
                    "sim-norm", "alphas", "seeds", "probe-epochs", "probe-lr",
                    "probe-seed"],
    "gradcheck": ["tau", "tau-plus", "alpha", "epsilon", "q-mode",
                  "reduction", "debias-scale", "sim-norm", "train-seed"],
}


def _overrides(args) -> dict:
    out = {}
    for flag, (sec, key, _) in _FLAGS.items():
        dest = flag.replace("-", "_")
        if hasattr(args, dest):
            out[(sec, key)] = getattr(args, dest)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taxcl",
        description="Contrastive representation workbench with "
                    "taxonomy-aware losses.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, needs_data=False, needs_ckpt=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", default=None, help="output directory "
                       "(default: runs/<timestamp>-<confighash>)")
        if needs_data:
            p.add_argument("--data", default=None,
                           help="dataset CSV (default: generate from config)")
        if needs_ckpt:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint file from `train`")
        for flag in _SUBCOMMAND_FLAGS[name]:
            sec, key, typ = _FLAGS[flag]
            kwargs = {"type": typ, "default": None,
                      "help": f"override {sec}.{key}"}
            if flag in _FLAG_CHOICES:
                kwargs["choices"] = _FLAG_CHOICES[flag]
                kwargs.pop("type")
            p.add_argument(f"--{flag}", **kwargs)
        p.set_defaults(func=func)
        return p

    add("gen-data", cmd_gen_data, "generate a synthetic taxonomy dataset")
    add("train", cmd_train, "contrastive pretraining", needs_data=True)
    add("probe", cmd_probe, "linear probe on frozen representations",
        needs_data=True, needs_ckpt=True)
    p_an = add("analyze", cmd_analyze, "representation diagnostics",
               needs_data=True, needs_ckpt=True)
    p_an.add_argument("--which", required=True,
                      choices=["spectrum", "cosine", "retrieve"])
    add("sweep-alpha", cmd_sweep_alpha, "alpha sweep over the combined loss",
        needs_data=True)
    p_gc = add("gradcheck", cmd_gradcheck, "finite-difference gradient audit")
    p_gc.add_argument("--inject-gradient-error", action="store_true",
                      help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
