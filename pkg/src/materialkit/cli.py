"""Command line driver: generate, label, train, eval, analyze, stats.

Every command reads one config document; ``--seed/--jobs/--out`` and
``--set key.path=value`` override its keys. Outputs carry no timestamps;
those go to ``<out>/run.log`` only.
"""
from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import retrieval_classify, run_vlm_baseline, zeroshot_nn_classify
from .classifier import (
    Encoders,
    build_descriptor_bank,
    describe_and_embed,
    extract_features,
    load_checkpoint,
    load_pair,
    predict_features,
    save_checkpoint,
    train,
)
from .config import RunConfig, deep_update, parse_override, resolve_backend
from .dataset import (
    DatasetManifest,
    build_test_split,
    class_stats,
    sample_subset,
    with_splits,
)
from .encoders import DEFAULT_DESCRIPTOR_PROMPT, CachedRegionAdapter
from .errors import MaterialKitError, PreconditionError
from .evaluation import (
    EvalReport,
    comparison_csv,
    comparison_table,
    pca_overlay,
    render_pca,
    render_scale_curve,
    scale_ablation,
    scale_curve_csv,
    write_pca_csv,
)
from .generation import generate_images, read_records, write_records
from .labeling import foreground_fraction, label_records
from .prompts import (
    TABLE_ROW_ORDER,
    DenyList,
    PromptTriplet,
    filter_triplets,
    propose_triplets,
)

log = logging.getLogger("materialkit")

METHODS = ("ours", "zeroshot", "retrieval", "vlm")


def _sidecar(out: Path, command: str, info: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    with (out / "run.log").open("a", encoding="utf-8") as fh:
        fh.write(json.dumps({"time": stamp, "command": command, **info}, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _encoders(cfg: RunConfig, tax, need_descriptor=False) -> Encoders:
    sec = cfg["encoders"]
    params = sec["params"] or {}
    vision = resolve_backend("vision", sec["vision"], tax, params.get("vision"))
    text = resolve_backend("text", sec["text"], tax, params.get("text"))
    descriptor = None
    if need_descriptor and sec["descriptor"]:
        inner = resolve_backend("descriptor", sec["descriptor"], tax, params.get("descriptor"))
        descriptor = CachedRegionAdapter(inner, cfg.out / sec["cache_dir"])
    prompt = sec["descriptor_prompt"] or DEFAULT_DESCRIPTOR_PROMPT
    return Encoders(vision, text, descriptor, prompt)


# ---------------------------------------------------------------- commands

def cmd_generate(cfg: RunConfig, args) -> int:
    tax = cfg.taxonomy()
    p, g = cfg["prompts"], cfg["generation"]
    if p["triplets"] is not None:
        candidates = [PromptTriplet(*t) for t in p["triplets"]]
    else:
        gen = resolve_backend("candidates", p["generator"], tax, p["params"])
        candidates = propose_triplets(tax, p["objects_per_class"], gen, jobs=cfg.jobs)
    deny = DenyList.load(cfg.resolve_path(p["deny_list"])) if p["deny_list"] else DenyList()
    triplets = filter_triplets(candidates, deny)
    if not triplets:
        raise PreconditionError("no triplets left to generate")
    backend = resolve_backend("generation", g["backend"], tax, g["params"])
    out = cfg.out
    records = generate_images(triplets, g["images_per_prompt"], backend, cfg.seed, out,
                              p["template"], g["width"], g["height"], g["retries"], cfg.jobs)
    write_records(out / "records.jsonl", records)
    summary = {"candidates": len(candidates), "triplets": len(triplets),
               "requested": len(triplets) * g["images_per_prompt"], "records": len(records)}
    _write_json(out / "generate_summary.json", summary)
    _sidecar(out, "generate", summary)
    print(f"generated {len(records)} images from {len(triplets)} triplets -> {out / 'records.jsonl'}")
    return 0


def cmd_label(cfg: RunConfig, args) -> int:
    tax = cfg.taxonomy()
    records_path = Path(args.records or cfg.out / "records.jsonl")
    root = records_path.parent
    records = read_records(records_path)
    lab = cfg["labeling"]
    seg = resolve_backend("segmentation", lab["segmenter"], tax, lab["params"])
    samples, rejections = label_records(records, seg, root, lab["min_area_fraction"], cfg.jobs)
    manifest = DatasetManifest(tax, samples, root=root)
    if lab["test_per_class"]:
        test = build_test_split(manifest, lab["test_per_class"], cfg.seed,
                                classes=[c for c in tax.classes if class_stats(manifest).counts[c]])
        manifest = with_splits(manifest, test)
    out_path = Path(args.manifest_out) if args.manifest_out else root / "manifest.jsonl"
    manifest.save(out_path)
    reasons: dict[str, int] = {}
    for r in rejections:
        reasons[r.reason] = reasons.get(r.reason, 0) + 1
    summary = {"records": len(records), "accepted": len(samples),
               "rejected": len(rejections), "rejection_reasons": reasons}
    _write_json(root / "label_summary.json", summary)
    _sidecar(root, "label", summary)
    print(f"labeled {len(samples)} / {len(records)} records ({len(rejections)} rejected) -> {out_path}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    tax = cfg.taxonomy()
    manifest = DatasetManifest.load(args.manifest, tax)
    train_set = manifest.by_split("train", "none")
    tcfg = cfg.train_config()
    encoders = _encoders(cfg, tax, need_descriptor=tcfg.text_mode == "per_image_descriptor")
    bank = build_descriptor_bank(tax, encoders.text, cfg["train"]["descriptors"])
    result = train(train_set, bank, encoders, tcfg, jobs=cfg.jobs, empty_masks=args.empty_masks)
    out = cfg.out
    ckpt = Path(args.checkpoint or out / "checkpoint.zip")
    save_checkpoint(ckpt, result.head, tax, encoders, bank, tcfg, result.log,
                    extra={"head_mode_effective": result.effective_head_mode,
                           "empty_masks": bool(args.empty_masks),
                           "n_train": len(train_set)})
    _write_json(out / "train_log.json", result.log)
    last = result.log[-1] if result.log else {}
    _sidecar(out, "train", {"checkpoint": str(ckpt), "final": last})
    print(f"trained on {len(train_set)} samples, {tcfg.epochs} epochs; final {last} -> {ckpt}")
    return 0


def _test_view(manifest: DatasetManifest, class_set):
    test = manifest.by_split("test")
    if len(test) == 0:
        log.warning("manifest has no test split; evaluating on all %d entries", len(manifest))
        test = manifest
    if class_set is not None:
        test = test.derive(e for e in test.entries if e.material in class_set)
    return test


def evaluate_ours(ckpt, test: DatasetManifest, encoders: Encoders, classes, mode, jobs,
                  area_weighted=False, dump=None):
    feats = extract_features(test, encoders, ckpt.config.pooling, jobs)
    text = describe_and_embed(test, encoders) if mode == "per_image_descriptor" else None
    all_classes = ckpt.bank.classes
    _, scores = predict_features(ckpt.head, feats, ckpt.bank, mode, text)
    # restrict the candidate classes to the evaluation class set
    cols = [all_classes.index(c) for c in classes]
    preds = np.asarray(scores)[:, cols].argmax(axis=1)
    truths = np.array([classes.index(e.material) for e in test.entries])
    weights = _area_weights(test) if area_weighted else None
    if dump:
        np.savez(dump, features=feats, labels=np.array([e.material for e in test.entries]),
                 ids=np.array(test.ids))
    return EvalReport.from_predictions(preds, truths, classes, "ours", weights=weights,
                                       notes=[f"mode={mode}"])


def _area_weights(test):
    from .labeling import load_mask
    return [foreground_fraction(load_mask(test.resolve(e.mask_path))) for e in test.entries]


def cmd_eval(cfg: RunConfig, args) -> int:
    method = args.method
    ev = cfg["eval"]
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        tax = ckpt.taxonomy
    else:
        if method == "ours":
            raise PreconditionError("--checkpoint is required for method 'ours'")
        ckpt, tax = None, cfg.taxonomy()
    manifest = DatasetManifest.load(args.manifest, tax)
    class_set = cfg.class_set()
    classes = list(class_set) if class_set else list(tax.classes)
    test = _test_view(manifest, set(classes))
    if len(test) == 0:
        raise PreconditionError("no test samples for the configured class set")
    truths = [classes.index(e.material) for e in test.entries]
    enc_sec = cfg["encoders"]
    params = enc_sec["params"] or {}
    if method == "ours":
        encoders = _encoders(cfg, tax, need_descriptor=ev["mode"] == "per_image_descriptor")
        report = evaluate_ours(ckpt, test, encoders, classes, ev["mode"], cfg.jobs,
                               ev["area_weighted"], args.dump_features)
    elif method == "zeroshot":
        joint = resolve_backend("joint", enc_sec["joint"], tax, params.get("joint"))
        text_emb = np.stack([joint.embed_text(c) for c in classes])
        preds = [zeroshot_nn_classify(load_pair(test, e)[0], classes, joint, text_emb)
                 for e in test.entries]
        report = EvalReport.from_predictions(preds, truths, classes, "zeroshot",
                                             notes=["cosine nearest neighbour"])
    elif method == "retrieval":
        if args.vectors:
            data = np.load(args.vectors)
            index = {str(i): k for k, i in enumerate(data["ids"])}
            feats = np.stack([data["features"][index[e.id]] for e in test.entries])
        else:
            joint = resolve_backend("joint", enc_sec["joint"], tax, params.get("joint"))
            feats = []
            for e in test.entries:
                image, mask = load_pair(test, e)
                feats.append(joint.embed_image(np.where(mask[..., None], image, 0).astype(np.uint8)))
            feats = np.stack(feats)
        preds = retrieval_classify(feats, truths)
        report = EvalReport.from_predictions(list(preds), truths, classes, "retrieval",
                                             notes=["leave-one-out cosine retrieval"])
    else:
        inner = resolve_backend("vlm", enc_sec["vlm"], tax, params.get("vlm"))
        vlm = CachedRegionAdapter(inner, cfg.out / enc_sec["cache_dir"])
        pairs = (load_pair(test, e) for e in test.entries)
        named, failed = run_vlm_baseline(pairs, vlm, classes)
        kept = [(p, t) for p, t in zip(named, truths) if p is not False]
        preds = [None if p is None else classes.index(p) for p, _ in kept]
        report = EvalReport.from_predictions(preds, [t for _, t in kept], classes, "vlm",
                                             accuracy_only=True, n_unevaluated=failed,
                                             notes=["substring containment rule"])
    report.dataset = args.dataset or Path(args.manifest).stem
    report.class_set = ",".join(classes) if class_set else "taxonomy"
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    stem = f"report_{method}"
    report.save(out / f"{stem}.json")
    order = [c for c in TABLE_ROW_ORDER if c in classes] + [c for c in classes if c not in TABLE_ROW_ORDER]
    table = comparison_table({method: report}, order)
    (out / f"{stem}.txt").write_text(table + f"\nmIoU|mAcc: {report.pair()}\n", encoding="utf-8")
    (out / f"{stem}.csv").write_text(comparison_csv({method: report}, order), encoding="utf-8")
    _sidecar(out, "eval", {"method": method, "macc": report.macc, "miou": report.miou})
    print(table)
    print(f"mIoU|mAcc: {report.pair()}")
    return 0


def cmd_analyze(cfg: RunConfig, args) -> int:
    out = cfg.out / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    axis = tuple(cfg["eval"]["pca_axis_range"])
    did = False
    if args.features:
        dumps = {}
        for item in args.features:
            name, _, path = item.partition("=")
            if not path:
                raise PreconditionError(f"--features expects name=path.npz, got {item!r}")
            dumps[name] = np.load(path)
        classes = args.classes or sorted({str(c) for d in dumps.values() for c in d["labels"]})
        for cls in classes:
            sets = {name: d["features"][np.asarray(d["labels"]) == cls] for name, d in dumps.items()}
            sets = {k: v for k, v in sets.items() if len(v)}
            if not sets:
                continue
            overlay = pca_overlay(sets, cls, axis)
            write_pca_csv(overlay, out)
            if not args.no_render:
                render_pca(overlay, out / f"{cls}_pca.png")
        did = True
    if args.scale_manifest:
        tax = cfg.taxonomy()
        manifest = DatasetManifest.load(args.scale_manifest, tax)
        train_pool = manifest.by_split("train", "none")
        test = _test_view(manifest, None) if len(manifest.by_split("test")) else manifest
        tcfg = cfg.train_config()
        encoders = _encoders(cfg, tax)
        bank = build_descriptor_bank(tax, encoders.text, cfg["train"]["descriptors"])
        classes = list(tax.classes)

        def trainer(sub):
            return train(sub, bank, encoders, tcfg, jobs=cfg.jobs)

        def evaluator(result):
            from .classifier import Checkpoint
            ck = Checkpoint(result.head, tax, bank, tcfg, {})
            return evaluate_ours(ck, test, encoders, classes, "class_bank", cfg.jobs)

        fractions = args.fractions or cfg["eval"]["fractions"]
        points = scale_ablation(train_pool, fractions, trainer, evaluator, cfg.seed,
                                cfg["eval"]["baseline_scale"])
        (out / "scale_curve.csv").write_text(scale_curve_csv(points), encoding="utf-8")
        _write_json(out / "scale_reports.json", [p.report.to_dict() for p in points])
        if not args.no_render:
            render_scale_curve(points, out / "scale_curve.png")
        did = True
    if not did:
        raise PreconditionError("nothing to analyze: pass --features and/or --scale-manifest")
    _sidecar(cfg.out, "analyze", {"features": args.features,
                                  "scale": str(args.scale_manifest) if args.scale_manifest else None})
    print(f"analysis written to {out}")
    return 0


def cmd_stats(cfg: RunConfig, args) -> int:
    tax = cfg.taxonomy()
    manifest = DatasetManifest.load(args.manifest, tax)
    stats = class_stats(manifest)
    width = max(len(c) for c in tax.classes)
    for cls, n in stats.counts.items():
        print(f"{cls.ljust(width)}  {n}")
    print(f"{'total'.ljust(width)}  {stats.total}")
    if args.subset is not None:
        manifest = sample_subset(manifest, fraction=args.subset, seed=cfg.seed)
    if args.test_per_class is not None:
        test = build_test_split(manifest, args.test_per_class, cfg.seed)
        manifest = with_splits(manifest, test)
    if args.write:
        manifest.save(args.write)
        print(f"wrote {len(manifest)} entries -> {args.write}")
    return 0


COMMANDS = {"generate": cmd_generate, "label": cmd_label, "train": cmd_train,
            "eval": cmd_eval, "analyze": cmd_analyze, "stats": cmd_stats}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML/JSON run config")
    common.add_argument("--seed", type=int, help="single source of randomness")
    common.add_argument("--jobs", type=int, help="worker count (default: logical cores)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key, e.g. train.epochs=5")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="materialkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="propose, filter and render triplets")

    p = sub.add_parser("label", parents=[common], help="segment and label generated images")
    p.add_argument("--records", type=Path, help="records.jsonl (default <out>/records.jsonl)")
    p.add_argument("--manifest-out", type=Path)

    p = sub.add_parser("train", parents=[common], help="train the classifier head")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, help="output path (default <out>/checkpoint.zip)")
    p.add_argument("--empty-masks", action="store_true", help="pool over all patches")

    p = sub.add_parser("eval", parents=[common], help="evaluate a method on a test manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--method", choices=METHODS, default="ours")
    p.add_argument("--dataset", help="dataset id recorded in the report")
    p.add_argument("--vectors", type=Path, help="npz of precomputed retrieval descriptors (ids, features)")
    p.add_argument("--dump-features", type=Path, help="write pooled features to this npz")

    p = sub.add_parser("analyze", parents=[common], help="PCA overlays and scale curves")
    p.add_argument("--features", nargs="+", metavar="NAME=PATH", help="feature dumps from eval")
    p.add_argument("--classes", nargs="+")
    p.add_argument("--scale-manifest", type=Path)
    p.add_argument("--fractions", nargs="+", type=float)
    p.add_argument("--no-render", action="store_true", help="write data files only")

    p = sub.add_parser("stats", parents=[common], help="class statistics and splits")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--subset", type=float, help="stratified fraction to keep")
    p.add_argument("--test-per-class", type=int)
    p.add_argument("--write", type=Path, help="write the (split) manifest here")
    return parser


def load_config(args) -> RunConfig:
    overrides: dict = {}
    for item in args.overrides:
        deep_update(overrides, parse_override(item))
    for key in ("seed", "jobs", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = str(value) if key == "out" else value
    return RunConfig.load(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (MaterialKitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
