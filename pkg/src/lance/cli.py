"""Command-line front end: reproducible train / eval / analyze / synth / ablate runs.

Every command writes a resolved_config.json next to its outputs with the
full parameter set needed to replay the run, and every run's randomness
flows from the --seed flag, so identical invocations produce byte-identical
outputs for a fixed thread count.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure during training.
"""

from __future__ import annotations

import os


def _apply_thread_cap() -> None:
    # LANCE_THREADS caps internal parallelism. It must be mapped onto the
    # BLAS knobs before numpy is imported, which is why this runs at module
    # import time, ahead of the imports below.
    value = os.environ.get("LANCE_THREADS")
    if not value:
        return
    try:
        n = int(value)
    except ValueError:
        return
    if n < 1:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, str(n))


_apply_thread_cap()

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .concept_space import build_concept_bank, concept_activations
from .domain_shift import (
    class_domain_gap,
    compute_domain_shifts,
    domain_relevance_scores,
    load_prompt_tensor,
    simulate_domain_specific_activations,
)
from .embedding_io import (
    load_manifest,
    load_text_bank,
    read_array_file,
    write_array_file,
)
from .errors import (
    DegenerateRow,
    DegenerateShift,
    DivergenceError,
    EmptyBank,
    EmptySet,
    FormatError,
    InvalidValue,
    ManifestError,
    ShapeError,
    SpecError,
    TemplateError,
    UnsupportedFormat,
)
from .evaluation import JS_RECIPE, evaluate, js_divergence, top_k_concepts
from .synthetic import SyntheticSpec, generate, save_world, verify_ddo_effect
from .training import TrainConfig, load_classifier, save_classifier, train

CONFIG_ERRORS = (InvalidValue, TemplateError, SpecError)
DATA_ERRORS = (FormatError, UnsupportedFormat, ManifestError, EmptyBank,
               ShapeError, DegenerateRow, DegenerateShift, EmptySet,
               IndexError, FileNotFoundError, IsADirectoryError,
               NotADirectoryError, json.JSONDecodeError)

PRESETS = {
    # lambda = 1 with a 200-descriptor bank is the published default setup.
    "paper-defaults": {"lambda_": 1.0},
}


def _write_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")


def _write_resolved_config(args, outdir, command: str) -> None:
    params = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "command") and not callable(v)}
    _write_json({"command": command, "parameters": params, "format_version": 1},
                Path(outdir) / "resolved_config.json")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_config_sources(args, defaults: dict) -> None:
    """Fill unset (None) options from --config JSON, then preset, then defaults."""
    file_values = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise InvalidValue(f"{args.config}: config file must hold a JSON object")
        file_values = doc
    preset_values = {}
    preset = getattr(args, "preset", None)
    if preset:
        if preset not in PRESETS:
            raise InvalidValue(f"unknown preset {preset!r}")
        preset_values = PRESETS[preset]
    for key, fallback in defaults.items():
        if getattr(args, key, None) is None:
            if key in file_values:
                setattr(args, key, file_values[key])
            elif key in preset_values:
                setattr(args, key, preset_values[key])
            else:
                setattr(args, key, fallback)


TRAIN_DEFAULTS = {
    "lambda_": 1.0, "epochs": 200, "batch_size": 64, "lr": 1e-3,
    "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8, "hidden_dim": None,
}


def _train_config(args) -> TrainConfig:
    if args.lambda_ < 0:
        raise InvalidValue("lambda must be >= 0")
    return TrainConfig(
        lambda_=float(args.lambda_), epochs=int(args.epochs),
        batch_size=int(args.batch_size), lr=float(args.lr),
        beta1=float(args.beta1), beta2=float(args.beta2),
        epsilon=float(args.epsilon), seed=int(args.seed),
        shuffle=not args.no_shuffle, use_bias=args.bias,
        hidden_dim=int(args.hidden_dim) if args.hidden_dim is not None else None)


def _resolve_data_paths(args) -> dict:
    """Resolve input files from --data shorthand and explicit flags."""
    paths = {
        "embeddings": args.embeddings, "manifest": args.manifest,
        "concepts": args.concepts, "concept_embeddings": args.concept_embeddings,
        "prompts": getattr(args, "prompts", None),
        "prompts_meta": getattr(args, "prompts_meta", None),
    }
    if getattr(args, "data", None):
        root = Path(args.data)
        defaults = {
            "embeddings": root / "images.npy", "manifest": root / "manifest.json",
            "concepts": root / "concepts.txt",
            "concept_embeddings": root / "concepts.npy",
            "prompts": root / "prompts.npy", "prompts_meta": root / "prompts.json",
        }
        for key, path in defaults.items():
            if paths.get(key) is None and (key not in ("prompts", "prompts_meta")
                                           or path.exists()):
                paths[key] = path
    return paths


def _require_paths(paths: dict, *keys: str) -> None:
    for key in keys:
        if paths.get(key) is None:
            flag = "--" + key.replace("_", "-")
            raise InvalidValue(f"missing {flag} (or a --data directory providing it)")


def _load_bank(paths):
    _require_paths(paths, "concepts", "concept_embeddings")
    names = load_text_bank(paths["concepts"])
    return build_concept_bank(names, read_array_file(paths["concept_embeddings"]))


def _load_simulated(paths, manifest, bank):
    if paths.get("prompts") is None or paths.get("prompts_meta") is None:
        raise InvalidValue(
            "--prompts/--prompts-meta (or a --data directory containing "
            "prompts.npy and prompts.json) are required when lambda > 0")
    prompts = load_prompt_tensor(paths["prompts"], paths["prompts_meta"])
    if tuple(prompts.class_names) != tuple(manifest.class_names):
        raise ManifestError(
            f"prompt tensor classes {list(prompts.class_names)!r} do not match "
            f"manifest classes {list(manifest.class_names)!r}")
    shifts = compute_domain_shifts(prompts)
    return prompts, simulate_domain_specific_activations(shifts, bank)


def cmd_train(args) -> int:
    _apply_config_sources(args, TRAIN_DEFAULTS)
    config = _train_config(args)
    paths = _resolve_data_paths(args)
    _require_paths(paths, "embeddings", "manifest")
    outdir = _outdir(args)

    embeddings = read_array_file(paths["embeddings"])
    manifest = load_manifest(paths["manifest"])
    manifest.validate_rows(len(embeddings))
    bank = _load_bank(paths)
    if args.preset == "paper-defaults":
        prompts_meta = paths.get("prompts_meta")
        if prompts_meta is not None and Path(prompts_meta).exists():
            n_desc = len(json.loads(Path(prompts_meta).read_text())["descriptors"])
            if n_desc != 200:
                print(f"warning: paper-defaults preset expects 200 descriptors, "
                      f"found {n_desc}", file=sys.stderr)

    sim = None
    if config.lambda_ > 0:
        _, sim = _load_simulated(paths, manifest, bank)

    activations = concept_activations(embeddings, bank)
    train_rows, train_labels = manifest.rows_and_labels(manifest.train_domain)
    if train_rows.size == 0:
        raise ManifestError(f"train domain {manifest.train_domain!r} has no items")
    clf, log = train(activations.values[train_rows], train_labels, sim, config,
                     class_names=manifest.class_names, concept_names=bank.names)

    save_classifier(clf, outdir / "model.json", config=config)
    _write_json({"epochs": [e.to_dict() for e in log]}, outdir / "training_log.json")
    _write_resolved_config(args, outdir, "train")
    print(f"trained {clf.n_classes}-class classifier over {clf.n_concepts} concepts "
          f"-> {outdir / 'model.json'}")
    return 0


def _report_tsv(report, attribution) -> str:
    lines = ["section\tname\tn_items\tvalue"]
    for dom, acc in report.per_domain.items():
        lines.append(f"domain\t{dom}\t{acc.n_items}\t{acc.top1_accuracy:.6f}")
    lines.append(f"summary\tid_accuracy\t\t"
                 f"{'' if report.id_accuracy is None else f'{report.id_accuracy:.6f}'}")
    lines.append(f"summary\tood_accuracy\t\t"
                 f"{'' if report.ood_accuracy is None else f'{report.ood_accuracy:.6f}'}")
    if attribution is not None:
        for cls, ranked in attribution.per_class:
            for concept, weight in ranked:
                lines.append(f"top-{attribution.k}\t{cls} :: {concept}\t\t{weight:.6f}")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    paths = _resolve_data_paths(args)
    _require_paths(paths, "embeddings", "manifest")
    outdir = _outdir(args)
    clf, _ = load_classifier(args.model)
    embeddings = read_array_file(paths["embeddings"])
    manifest = load_manifest(paths["manifest"])
    manifest.validate_rows(len(embeddings))
    bank = _load_bank(paths)
    if bank.size != clf.n_concepts:
        raise ShapeError(f"model was trained over {clf.n_concepts} concepts but the "
                         f"bank has {bank.size}")
    if bank.names != clf.concept_names:
        raise ShapeError("concept bank names do not match the model's concept names")
    if tuple(manifest.class_names) != clf.class_names:
        raise ManifestError(
            f"manifest classes {list(manifest.class_names)!r} do not match the "
            f"model's classes {list(clf.class_names)!r}")

    activations = concept_activations(embeddings, bank)
    report = evaluate(clf, activations, manifest)
    attribution = None
    if args.top_k is not None:
        if not 1 <= args.top_k <= clf.n_concepts:
            raise InvalidValue(f"--top-k must be in [1, {clf.n_concepts}]")
        attribution = top_k_concepts(clf, args.top_k)

    doc = {"domain_report": report.to_dict()}
    if attribution is not None:
        doc["attribution"] = attribution.to_dict()
    if args.format == "json":
        _write_json(doc, outdir / "report.json")
        target = outdir / "report.json"
    else:
        (outdir / "report.tsv").write_text(_report_tsv(report, attribution),
                                           encoding="utf-8")
        target = outdir / "report.tsv"
    _write_resolved_config(args, outdir, "eval")
    id_txt = "n/a" if report.id_accuracy is None else f"{report.id_accuracy:.4f}"
    ood_txt = "n/a" if report.ood_accuracy is None else f"{report.ood_accuracy:.4f}"
    print(f"id_accuracy={id_txt} ood_accuracy={ood_txt} -> {target}")
    return 0


def cmd_analyze(args) -> int:
    outdir = _outdir(args)
    if args.mode == "js":
        bank = _load_bank(_resolve_data_paths(args))
        if args.embeddings_a is None or args.embeddings_b is None:
            raise InvalidValue("analyze js requires --embeddings-a and --embeddings-b")
        emb_a = read_array_file(args.embeddings_a)
        emb_b = read_array_file(args.embeddings_b)
        acts_a = concept_activations(emb_a, bank)
        acts_b = concept_activations(emb_b, bank)
        table = [
            {"concept": bank.names[m],
             "js_divergence": js_divergence(acts_a.values[:, m], acts_b.values[:, m],
                                            n_bins=args.n_bins)}
            for m in range(bank.size)
        ]
        doc = {"recipe": dict(JS_RECIPE, n_bins=args.n_bins), "table": table}
        if args.format == "json":
            _write_json(doc, outdir / "js_divergence.json")
        else:
            lines = ["concept\tjs_divergence"]
            lines += [f"{row['concept']}\t{row['js_divergence']:.9f}" for row in table]
            (outdir / "js_divergence.tsv").write_text("\n".join(lines) + "\n",
                                                      encoding="utf-8")
        _write_resolved_config(args, outdir, "analyze js")
        return 0

    if args.mode == "relevance":
        bank = _load_bank(_resolve_data_paths(args))
        if args.source == "text":
            if args.prompts is None or args.prompts_meta is None:
                raise InvalidValue("--source text requires --prompts and --prompts-meta")
            prompts = load_prompt_tensor(args.prompts, args.prompts_meta)
            shifts = compute_domain_shifts(prompts)
            if len(shifts.shifts) == 0:
                raise EmptySet("prompt tensor has no descriptors")
            shift_row = shifts.shifts.astype(np.float64).mean(axis=0).astype(np.float32)
        else:
            if args.gap is None:
                raise InvalidValue("--source image-gap requires --gap")
            gaps = read_array_file(args.gap)
            if len(gaps) == 0:
                raise EmptySet(f"{args.gap} holds no gap rows")
            shift_row = gaps.astype(np.float64).mean(axis=0).astype(np.float32)
        ranking = domain_relevance_scores(bank, shift_row)
        if args.top is not None:
            ranking = ranking[:args.top]
        doc = {"source": args.source,
               "ranking": [{"concept": c, "score": s} for c, s in ranking]}
        if args.format == "json":
            _write_json(doc, outdir / "relevance.json")
        else:
            lines = ["concept\tscore"] + [f"{c}\t{s:.9f}" for c, s in ranking]
            (outdir / "relevance.tsv").write_text("\n".join(lines) + "\n",
                                                  encoding="utf-8")
        _write_resolved_config(args, outdir, "analyze relevance")
        return 0

    # gap mode: one row of mean-embedding difference per class present on
    # both sides.
    if args.embeddings is None or args.manifest is None:
        raise InvalidValue("analyze gap requires --embeddings and --manifest")
    if args.src_domain is None or args.tgt_domain is None:
        raise InvalidValue("analyze gap requires --src-domain and --tgt-domain")
    embeddings = read_array_file(args.embeddings)
    manifest = load_manifest(args.manifest)
    manifest.validate_rows(len(embeddings))
    for name in (args.src_domain, args.tgt_domain):
        if name not in manifest.domain_names:
            raise ManifestError(f"domain {name!r} not in manifest domains "
                                f"{list(manifest.domain_names)!r}")
    rows = []
    classes = []
    skipped = []
    for label, cls in enumerate(manifest.class_names):
        src = [it.embedding_row for it in manifest.items
               if it.domain == args.src_domain and it.label == label]
        tgt = [it.embedding_row for it in manifest.items
               if it.domain == args.tgt_domain and it.label == label]
        if not src or not tgt:
            skipped.append(cls)
            continue
        rows.append(class_domain_gap(embeddings[src], embeddings[tgt]))
        classes.append(cls)
    if not rows:
        raise EmptySet(f"no class present in both {args.src_domain!r} and "
                       f"{args.tgt_domain!r}")
    write_array_file(np.asarray(rows, dtype=np.float32), outdir / "gap.npy")
    _write_json({"class_names": classes, "src_domain": args.src_domain,
                 "tgt_domain": args.tgt_domain, "skipped_classes": skipped},
                outdir / "gap.json")
    _write_resolved_config(args, outdir, "analyze gap")
    return 0


def _spec_from_args(args) -> SyntheticSpec:
    return SyntheticSpec(
        d=args.d, n_classes=args.classes,
        n_shared_concepts=args.shared_concepts,
        n_specific_concepts=args.specific_concepts,
        domains=tuple(args.domains.split(",")),
        samples_per_class_per_domain=args.samples,
        noise_sigma=args.noise_sigma, style_strength=args.style_strength,
        seed=args.seed,
        descriptors_per_domain=args.descriptors_per_domain,
        n_irrelevant_descriptors=args.irrelevant_descriptors,
        n_offaxis_styles=args.offaxis_styles,
        texture_strength=args.texture_strength,
        prompt_texture_strength=args.prompt_texture_strength,
        concept_style_weight=args.concept_style_weight,
        irrelevant_core_leak=args.irrelevant_core_leak)


def cmd_synth(args) -> int:
    spec = _spec_from_args(args)
    outdir = _outdir(args)
    world = generate(spec)
    save_world(world, outdir)
    _write_json(spec.to_dict(), outdir / "spec.json")
    _write_resolved_config(args, outdir, "synth")
    print(f"synthetic dataset: {len(world.images)} embeddings, "
          f"{world.concept_bank.size} concepts, "
          f"{world.prompts.n_descriptors} descriptors -> {outdir}")
    if args.verify:
        base = TrainConfig(lambda_=0.0, epochs=args.verify_epochs,
                           batch_size=args.verify_batch_size, seed=spec.seed)
        ddo = TrainConfig(lambda_=args.verify_lambda, epochs=args.verify_epochs,
                          batch_size=args.verify_batch_size, seed=spec.seed)
        report = verify_ddo_effect(spec, base, ddo)
        _write_json(report.to_dict(), outdir / "effect_report.json")
        delta_ood = "n/a" if report.delta_ood is None else f"{100 * report.delta_ood:+.2f}"
        print(f"verify: delta_id={100 * report.delta_id:+.2f} points, "
              f"delta_ood={delta_ood} points, "
              f"specific_mass_ratio={report.specific_mass_ratio:.4f}")
    return 0


def _parse_grid(text: str, n_descriptors: int) -> list[int]:
    points = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "all":
            points.append(n_descriptors)
            continue
        try:
            value = int(token)
        except ValueError as exc:
            raise InvalidValue(f"bad grid point {token!r}") from exc
        if value < 0:
            raise InvalidValue(f"grid point {value} must be >= 0")
        if value > n_descriptors:
            raise InvalidValue(f"grid point {value} exceeds descriptor count "
                               f"{n_descriptors}")
        points.append(value)
    if not points:
        raise InvalidValue("empty descriptor-count grid")
    return points


def _with_lambda(config: TrainConfig, value: float) -> TrainConfig:
    doc = config.to_dict()
    doc["lambda"] = value
    return TrainConfig.from_dict(doc)


def _ablate_run(activations, train_rows, train_labels, manifest, bank, prompts,
                descriptor_indices, config):
    if config.lambda_ > 0 and descriptor_indices:
        subset = prompts.subset(descriptor_indices)
        sim = simulate_domain_specific_activations(compute_domain_shifts(subset), bank)
    else:
        sim = None
        config = _with_lambda(config, 0.0)
    clf, _ = train(activations.values[train_rows], train_labels, sim, config,
                   class_names=manifest.class_names, concept_names=bank.names)
    return evaluate(clf, activations, manifest)


def cmd_ablate(args) -> int:
    _apply_config_sources(args, TRAIN_DEFAULTS)
    config = _train_config(args)
    paths = _resolve_data_paths(args)
    _require_paths(paths, "embeddings", "manifest")
    outdir = _outdir(args)

    embeddings = read_array_file(paths["embeddings"])
    manifest = load_manifest(paths["manifest"])
    manifest.validate_rows(len(embeddings))
    bank = _load_bank(paths)
    prompts, _ = _load_simulated(paths, manifest, bank)
    activations = concept_activations(embeddings, bank)
    train_rows, train_labels = manifest.rows_and_labels(manifest.train_domain)

    if args.mode == "count":
        grid = _parse_grid(args.grid, prompts.n_descriptors)
        results = []
        for point_index, count in enumerate(grid):
            id_accs, ood_accs = [], []
            repeats = 1 if count == 0 else args.repeats
            for repeat in range(repeats):
                sub_rng = np.random.default_rng([args.seed, point_index, repeat])
                indices = sorted(sub_rng.choice(prompts.n_descriptors, size=count,
                                                replace=False).tolist())
                report = _ablate_run(activations, train_rows, train_labels,
                                     manifest, bank, prompts, indices, config)
                id_accs.append(report.id_accuracy)
                ood_accs.append(report.ood_accuracy)
            results.append({
                "count": count, "repeats": repeats,
                "id_mean": float(np.mean(id_accs)), "id_sd": float(np.std(id_accs)),
                "ood_mean": float(np.mean(ood_accs)), "ood_sd": float(np.std(ood_accs)),
                "id_runs": id_accs, "ood_runs": ood_accs,
            })
        doc = {"grid": grid, "results": results}
        if args.format == "json":
            _write_json(doc, outdir / "ablation_count.json")
        else:
            lines = ["count\trepeats\tid_mean\tid_sd\tood_mean\tood_sd"]
            lines += [f"{r['count']}\t{r['repeats']}\t{r['id_mean']:.6f}\t"
                      f"{r['id_sd']:.6f}\t{r['ood_mean']:.6f}\t{r['ood_sd']:.6f}"
                      for r in results]
            (outdir / "ablation_count.tsv").write_text("\n".join(lines) + "\n",
                                                       encoding="utf-8")
        _write_resolved_config(args, outdir, "ablate count")
        for r in results:
            print(f"count={r['count']} ood={r['ood_mean']:.4f}±{r['ood_sd']:.4f}")
        return 0

    # subset mode: full set vs keyword-filtered (irrelevant-only) set vs baseline
    keywords = [k.lower() for k in load_text_bank(args.exclude_keywords).entries]
    all_indices = list(range(prompts.n_descriptors))
    kept = [i for i, name in enumerate(prompts.descriptors.entries)
            if not any(k in name.lower() for k in keywords)]
    excluded = [i for i in all_indices if i not in kept]
    baseline = _ablate_run(activations, train_rows, train_labels, manifest, bank,
                           prompts, [], _with_lambda(config, 0.0))
    full = _ablate_run(activations, train_rows, train_labels, manifest, bank,
                       prompts, all_indices, config)
    filtered = _ablate_run(activations, train_rows, train_labels, manifest, bank,
                           prompts, kept, config)
    doc = {
        "keywords": keywords,
        "n_descriptors": prompts.n_descriptors,
        "kept_descriptors": [prompts.descriptors.entries[i] for i in kept],
        "excluded_descriptors": [prompts.descriptors.entries[i] for i in excluded],
        "ood_baseline": baseline.ood_accuracy,
        "ood_full": full.ood_accuracy,
        "ood_filtered": filtered.ood_accuracy,
        "id_baseline": baseline.id_accuracy,
        "id_full": full.id_accuracy,
        "id_filtered": filtered.id_accuracy,
        "delta_ood_full": full.ood_accuracy - baseline.ood_accuracy,
        "delta_ood_filtered": filtered.ood_accuracy - baseline.ood_accuracy,
    }
    if args.format == "json":
        _write_json(doc, outdir / "ablation_subset.json")
    else:
        lines = ["run\tid\tood"]
        lines.append(f"baseline\t{baseline.id_accuracy:.6f}\t{baseline.ood_accuracy:.6f}")
        lines.append(f"filtered\t{filtered.id_accuracy:.6f}\t{filtered.ood_accuracy:.6f}")
        lines.append(f"full\t{full.id_accuracy:.6f}\t{full.ood_accuracy:.6f}")
        (outdir / "ablation_subset.tsv").write_text("\n".join(lines) + "\n",
                                                    encoding="utf-8")
    _write_resolved_config(args, outdir, "ablate subset")
    print(f"ood baseline={baseline.ood_accuracy:.4f} "
          f"filtered={filtered.ood_accuracy:.4f} full={full.ood_accuracy:.4f}")
    return 0


def _add_data_options(p, prompts: bool = True) -> None:
    p.add_argument("--data", help="dataset directory (images.npy, manifest.json, "
                                  "concepts.txt, concepts.npy, prompts.npy, prompts.json)")
    p.add_argument("--embeddings", help="image embedding array file")
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--concepts", help="concept text bank")
    p.add_argument("--concept-embeddings", dest="concept_embeddings",
                   help="concept embedding array file")
    if prompts:
        p.add_argument("--prompts", help="prompt embedding array file")
        p.add_argument("--prompts-meta", dest="prompts_meta",
                       help="prompt tensor sidecar JSON")


def _add_train_options(p) -> None:
    p.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help="orthogonality penalty weight (default 1)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None,
                   help="optional two-layer classifier hidden width")
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--bias", action="store_true", help="train a bias vector")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="JSON file with default option values")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lance",
        description="Concept-bottleneck classifiers over precomputed embeddings, "
                    "with a domain-descriptor orthogonality regularizer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the final linear classifier")
    _add_data_options(p)
    _add_train_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model per domain")
    _add_data_options(p, prompts=False)
    p.add_argument("--model", required=True)
    p.add_argument("--top-k", dest="top_k", type=int, default=None,
                   help="include per-class top-k concept attribution")
    p.add_argument("--format", choices=("json", "tsv"), default="json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="activation-shift analyses")
    p.add_argument("mode", choices=("js", "relevance", "gap"))
    p.add_argument("--concepts")
    p.add_argument("--concept-embeddings", dest="concept_embeddings")
    p.add_argument("--data")
    p.add_argument("--embeddings-a", dest="embeddings_a")
    p.add_argument("--embeddings-b", dest="embeddings_b")
    p.add_argument("--n-bins", dest="n_bins", type=int, default=50)
    p.add_argument("--source", choices=("text", "image-gap"), default="text")
    p.add_argument("--prompts")
    p.add_argument("--prompts-meta", dest="prompts_meta")
    p.add_argument("--gap", help="gap array file from `analyze gap`")
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--embeddings")
    p.add_argument("--manifest")
    p.add_argument("--src-domain", dest="src_domain")
    p.add_argument("--tgt-domain", dest="tgt_domain")
    p.add_argument("--format", choices=("json", "tsv"), default="json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--shared-concepts", dest="shared_concepts", type=int, default=20)
    p.add_argument("--specific-concepts", dest="specific_concepts", type=int, default=20)
    p.add_argument("--domains", default="photo,sketch,clipart",
                   help="comma-separated domain names; first is the training domain")
    p.add_argument("--samples", type=int, default=50,
                   help="samples per class per domain")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.05)
    p.add_argument("--style-strength", dest="style_strength", type=float, default=0.8)
    p.add_argument("--descriptors-per-domain", dest="descriptors_per_domain",
                   type=int, default=4)
    p.add_argument("--irrelevant-descriptors", dest="irrelevant_descriptors",
                   type=int, default=40)
    p.add_argument("--offaxis-styles", dest="offaxis_styles", type=int, default=20)
    p.add_argument("--texture-strength", dest="texture_strength", type=float, default=0.9)
    p.add_argument("--prompt-texture-strength", dest="prompt_texture_strength",
                   type=float, default=1.2)
    p.add_argument("--concept-style-weight", dest="concept_style_weight",
                   type=float, default=2.0)
    p.add_argument("--irrelevant-core-leak", dest="irrelevant_core_leak",
                   type=float, default=0.4)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--verify", action="store_true",
                   help="also run the paired baseline-vs-penalty experiment")
    p.add_argument("--verify-epochs", dest="verify_epochs", type=int, default=1500)
    p.add_argument("--verify-batch-size", dest="verify_batch_size", type=int, default=50)
    p.add_argument("--verify-lambda", dest="verify_lambda", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="descriptor-count and descriptor-subset sweeps")
    p.add_argument("mode", choices=("count", "subset"))
    _add_data_options(p)
    _add_train_options(p)
    p.add_argument("--grid", default="1,2,5,10,all",
                   help="comma-separated descriptor counts; 'all' = every descriptor")
    p.add_argument("--repeats", type=int, default=5,
                   help="random subsets per grid point")
    p.add_argument("--exclude-keywords", dest="exclude_keywords",
                   help="text bank of keywords; matching descriptors are excluded "
                        "in subset mode")
    p.add_argument("--format", choices=("json", "tsv"), default="json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "ablate" and args.mode == "subset" and not args.exclude_keywords:
        print("error: ablate subset requires --exclude-keywords", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
