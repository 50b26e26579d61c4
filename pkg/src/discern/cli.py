"""Command-line entry points for the full pipeline.

Stages are pure functions of their inputs plus explicit seeds: re-running a
stage with identical inputs produces byte-identical artifacts (nothing here
writes wall-clock timestamps or unsorted maps).
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from . import benchmark as bench
from . import corpus, embeddings, metrics, preferences, quantizer, service
from .recommenders import (
    ExternalScorerModel,
    FusionModel,
    MarkovSidModel,
    load_fusion_model,
    save_fusion_model,
    training_code_sequences,
)
from .rqvae import RqVaeConfig
from .sid_index import build_trie


def _cmd_ingest(args) -> int:
    catalog = corpus.ingest_interactions(args.input, format=args.format)
    if args.sub_sample is not None:
        catalog = corpus.sub_sample_users(catalog, args.sub_sample, seed=args.seed)
    if args.five_core:
        catalog = corpus.five_core_filter(catalog, min_user=args.min_user, min_item=args.min_item)
    corpus.save_catalog(catalog, args.out)
    print(f"users={catalog.n_users} items={catalog.n_items} actions={catalog.n_actions}")
    return 0


def _cmd_embed_pack(args) -> int:
    matrix = embeddings.load_embeddings(args.input)
    embeddings.save_embeddings(matrix, args.out)
    print(f"packed {len(matrix)} vectors of dim {matrix.dim}")
    return 0


def _make_client(spec: str):
    if spec.startswith("replay:"):
        return preferences.ReplayClient(spec[len("replay:") :])
    if spec.startswith("http://") or spec.startswith("https://"):
        return preferences.HttpChatClient(spec)
    raise preferences.PreferenceError(f"client must be an http(s) URL or replay:<path>, got {spec!r}")


def _cmd_prefs_generate(args) -> int:
    catalog = corpus.load_catalog(args.catalog)
    template = preferences.load_template(args.template)
    client = _make_client(args.client)
    run = preferences.approximate_preferences(
        catalog, client, template, max_retries=args.retries, review_char_cap=args.review_char_cap
    )
    preferences.save_preference_sets(run.sets, args.out)
    if args.report:
        Path(args.report).write_text(
            json.dumps(run.report(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    print(f"generated={len(run.sets)} missing={len(run.missing)} retries={run.retries}")
    return 0


def _cmd_quantize(args) -> int:
    matrix = embeddings.load_embeddings(args.embeddings)
    if args.kind == "rkmeans":
        model = quantizer.train_residual_kmeans(
            matrix, n_levels=args.levels, k=args.k, seed=args.seed, max_iters=args.max_iters
        )
    else:
        config = RqVaeConfig(
            widths=tuple(int(w) for w in args.widths.split(",")),
            n_levels=args.levels,
            k=args.k,
            dropout=args.dropout,
            weight_decay=args.weight_decay,
            commitment_beta=args.beta,
            lr=args.lr,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
        )
        model = quantizer.train_rqvae(matrix, config)
    quantizer.save_model(model, args.out)
    sid_map = quantizer.assign_semantic_ids(model, matrix)
    sid_out = args.sid_out or f"{args.out}.sids.tsv"
    quantizer.save_sid_map(sid_map, sid_out, model_digest=model.digest())
    coverage = quantizer.codebook_coverage(model, matrix)
    print(f"coverage={[round(float(c), 4) for c in coverage]} sids={len(sid_map)} -> {sid_out}")
    return 0


def _parse_embedding_spec(spec: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for part in spec.split(","):
        if not part:
            continue
        if "=" not in part:
            raise bench.BenchmarkError(f"embedding spec part {part!r} must look like role=path")
        role, path = part.split("=", 1)
        out[role] = path
    return out


def _load_bundle(spec: str) -> bench.EmbeddingBundle:
    paths = _parse_embedding_spec(spec)
    if "item" not in paths or "pref" not in paths:
        raise bench.BenchmarkError("embedding spec needs at least item=<path>,pref=<path>")
    return bench.EmbeddingBundle(
        item=embeddings.load_embeddings(paths["item"]),
        pref=embeddings.load_embeddings(paths["pref"]),
        review=embeddings.load_embeddings(paths["review"]) if "review" in paths else None,
    )


def _cmd_build_benchmark(args) -> int:
    catalog = corpus.load_catalog(args.catalog)
    pref_sets = preferences.load_preference_sets(args.prefs)
    bundle = _load_bundle(args.embeddings)
    sid_digest = ""
    if args.sid_map:
        sid_map, _ = quantizer.load_sid_map(args.sid_map)
        sid_digest = quantizer.sid_map_digest(sid_map)
    suite = bench.build_suite(
        catalog,
        pref_sets,
        bundle,
        max_history=args.max_history,
        inversion_style=args.style,
        sid_digest=sid_digest,
    )
    bench.save_suite(suite, args.out)
    texts = sorted({p for inst in suite.all_instances() for p in inst.preferences})
    (Path(args.out) / "preference_texts.txt").write_text(
        "\n".join(texts) + ("\n" if texts else ""), encoding="utf-8"
    )
    sizes = {axis: suite.size(axis) for axis in bench.AXES}
    print(" ".join(f"{axis}={n}" for axis, n in sizes.items()))
    return 0


def _cmd_train_recommender(args) -> int:
    catalog = corpus.load_catalog(args.catalog)
    sid_map, _ = quantizer.load_sid_map(args.sid_map)
    sequences = training_code_sequences(catalog, sid_map)
    base = MarkovSidModel(order=args.order, alpha=args.alpha).fit(sequences)
    model = FusionModel(
        base=base,
        preference_weight=args.pref_weight,
        negative_penalty=args.negative_penalty,
        sid_digest=quantizer.sid_map_digest(sid_map),
    )
    save_fusion_model(model, args.out)
    print(f"trained on {len(sequences)} sequences; contexts={sum(len(t) for t in base.counts_)}")
    return 0


def _cmd_evaluate(args) -> int:
    suite = bench.load_suite(args.suite)
    digest = bench.suite_digest(args.suite)
    sid_map, _ = quantizer.load_sid_map(args.sid_map)
    trie = build_trie(sid_map)
    paths = _parse_embedding_spec(args.embeddings) if args.embeddings else {}
    item_emb = embeddings.load_embeddings(paths["item"]) if "item" in paths else None
    pref_emb = embeddings.load_embeddings(paths["pref"]) if "pref" in paths else None
    if args.model.startswith("exec:"):
        model = ExternalScorerModel(shlex.split(args.model[len("exec:") :]))
        model_id = args.model_id or "external"
    else:
        model = load_fusion_model(args.model)
        model_id = args.model_id or Path(args.model).name
    ks = tuple(int(k) for k in args.ks.split(","))
    report = metrics.evaluate_suite(
        model,
        suite,
        trie,
        sid_map,
        item_emb,
        pref_emb,
        ks=ks,
        beam_width=args.beam,
        model_id=model_id,
        suite_digest=digest,
        sid_digest=quantizer.sid_map_digest(sid_map),
        use_preferences=not args.no_preferences,
    )
    report.save(args.out)
    sys.stdout.write(metrics.render_report_table(report))
    if isinstance(model, ExternalScorerModel):
        model.close()
    return 0


def _cmd_report(args) -> int:
    report_a = metrics.MetricReport.load(args.a)
    report_b = metrics.MetricReport.load(args.b)
    table = metrics.relative_improvement(report_a, report_b)
    text = metrics.render_improvement_table(table)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _cmd_plot(args) -> int:
    reports = {}
    for spec in args.report:
        if "=" in spec:
            label, path = spec.split("=", 1)
        else:
            label, path = Path(spec).stem, spec
        reports[label] = metrics.MetricReport.load(path)
    paths = metrics.plot_reports(reports, args.out, k=args.k, split=args.split)
    for path in paths:
        print(path)
    return 0


def _cmd_serve(args) -> int:
    config = service.load_config(args.config)
    service.run(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="discern")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read an interaction log into a catalog")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["jsonl", "tsv"], default="jsonl")
    p.add_argument("--five-core", action="store_true")
    p.add_argument("--min-user", type=int, default=5)
    p.add_argument("--min-item", type=int, default=5)
    p.add_argument("--sub-sample", type=float, default=None, help="keep this fraction of users")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("embed-pack", help="pack JSONL embeddings into the binary format")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_embed_pack)

    prefs = sub.add_parser("prefs", help="preference generation")
    prefs_sub = prefs.add_subparsers(dest="prefs_command", required=True)
    p = prefs_sub.add_parser("generate", help="generate preference sets over a catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--template", default="default")
    p.add_argument("--client", required=True, help="http(s) chat endpoint or replay:<fixture>")
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--review-char-cap", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_prefs_generate)

    p = sub.add_parser("quantize", help="train a quantizer and assign semantic IDs")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--kind", choices=["rkmeans", "rqvae"], default="rkmeans")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--widths", default="768,512,256,128")
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out", required=True)
    p.add_argument("--sid-out", default=None)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("build-benchmark", help="construct the five-axis evaluation suite")
    p.add_argument("--catalog", required=True)
    p.add_argument("--prefs", required=True)
    p.add_argument("--embeddings", required=True, help="item=<path>,pref=<path>[,review=<path>]")
    p.add_argument("--max-history", type=int, default=20)
    p.add_argument("--style", choices=["find", "search_for"], default="find")
    p.add_argument("--sid-map", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_benchmark)

    p = sub.add_parser("train-recommender", help="fit the reference sequential model")
    p.add_argument("--catalog", required=True)
    p.add_argument("--sid-map", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--pref-weight", type=float, default=1.0)
    p.add_argument("--negative-penalty", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_recommender)

    p = sub.add_parser("evaluate", help="run a model over a suite and write a metric report")
    p.add_argument("--suite", required=True)
    p.add_argument("--model", required=True, help="fusion model path or exec:<command>")
    p.add_argument("--sid-map", required=True)
    p.add_argument("--embeddings", default="", help="item=<path>,pref=<path>")
    p.add_argument("--ks", default="5,10")
    p.add_argument("--beam", type=int, default=30)
    p.add_argument("--no-preferences", action="store_true", help="ignore instance preferences")
    p.add_argument("--model-id", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="relative improvement of report A over baseline B")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("plot", help="bar charts across axes for one or more reports")
    p.add_argument("--report", action="append", required=True, help="[label=]path, repeatable")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("serve", help="run the read-only steering service")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
