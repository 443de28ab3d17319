"""Operator command line.

Every subcommand is a thin adapter over one library call.  Machine-readable
output goes to stdout; diagnostics go to stderr.  Exit codes: 0 success,
1 validation/usage error, 2 backend failure.

A JSON config file (``--config run.json``) may supply any long flag value
under its flag name with dashes replaced by underscores (for example
``{"s_min": 0.7, "datastore": "stores/base"}``); explicit flags win over
the config file.  Subcommands that sample randomly require a seed, via flag
or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation, pipeline, store as store_mod
from .backend import BackendConfig, HttpTextBackend, MockCaptionDecoder, ReplayBackend
from .errors import BackendError, CaptionEngineError
from .pipeline import DomainProfile, caption_result_json, training_example_json
from .projection import ProjectionConfig, SupportProjector
from .retrieval import RetrievalConfig, RetrievalMode, retrieve_in_range, retrieve_topk
from .vectors import LinearMapper, load_mapper

logger = logging.getLogger("ragcap")


class _Parser(argparse.ArgumentParser):
    # spec'd exit codes: usage/validation errors are 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file with default flag values")


def _load_config(args) -> dict:
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("--config must contain a JSON object")
        return loaded
    return {}


def _get(args, config: dict, name: str, default=None, required=False):
    value = getattr(args, name, None)
    if value is None:
        value = config.get(name, default)
    if required and value is None:
        raise ValueError(f"missing required option --{name.replace('_', '-')}")
    return value


def _out_stream(path: str | None):
    if path and path != "-":
        return open(path, "w", encoding="utf-8")
    return sys.stdout


def _emit(fh, line: str) -> None:
    fh.write(line + "\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="ragcap", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    for name, role in (("build-support", "support"), ("build-datastore", "datastore")):
        p = subs.add_parser(name, help=f"build a {role} store from caption records")
        _add_common(p)
        p.add_argument("--tsv", help="single-file ingest: id, source, vector, text")
        p.add_argument("--meta", help="metadata .tsv (with --bin)")
        p.add_argument("--bin", help="binary embedding file (with --meta)")
        p.add_argument("--out", help="output base path (writes .bin and .tsv)")
        p.add_argument("--label", help="store label")
        p.set_defaults(handler=_cmd_build)

    p = subs.add_parser("merge", help="concatenate two stores")
    _add_common(p)
    p.add_argument("--a", help="first store base path")
    p.add_argument("--b", help="second store base path")
    p.add_argument("--out", help="output base path")
    p.add_argument("--dedup-on-text", action="store_true", default=None,
                   help="drop later entries with byte-identical text")
    p.set_defaults(handler=_cmd_merge)

    p = subs.add_parser("filter", help="drop entries by source tag")
    _add_common(p)
    p.add_argument("--store", help="input store base path")
    p.add_argument("--out", help="output base path")
    p.add_argument("--exclude", action="append",
                   help="source tag to exclude (repeatable)")
    p.set_defaults(handler=_cmd_filter)

    p = subs.add_parser("retrieve", help="retrieve similar captions per query")
    _add_common(p)
    p.add_argument("--datastore", help="datastore base path")
    p.add_argument("--queries", help="query vector table: id TAB v1,...,vd")
    p.add_argument("--mode", choices=["training", "inference"])
    p.add_argument("--k", type=int)
    p.add_argument("--s-min", type=float, dest="s_min")
    p.add_argument("--s-max", type=float, dest="s_max")
    p.add_argument("--seed", type=int, help="required in training mode")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(handler=_cmd_retrieve)

    p = subs.add_parser("project", help="project queries onto a support")
    _add_common(p)
    p.add_argument("--support", help="support store base path")
    p.add_argument("--queries", help="query vector table")
    p.add_argument("--temperature", type=float)
    p.add_argument("--raw", action="store_true", default=None,
                   help="emit the unnormalized convex combination")
    p.add_argument("--out", help="output vector table (default stdout)")
    p.set_defaults(handler=_cmd_project)

    p = subs.add_parser("make-train-data",
                        help="emit training examples for an external trainer")
    _add_common(p)
    p.add_argument("--corpus", help="caption corpus store base path")
    p.add_argument("--datastore", help="datastore base path")
    p.add_argument("--mapper", help="mapper file (default: identity)")
    p.add_argument("--k", type=int)
    p.add_argument("--s-min", type=float, dest="s_min")
    p.add_argument("--s-max", type=float, dest="s_max")
    p.add_argument("--seed", type=int, help="required (sampling is randomized)")
    p.add_argument("--prompt", help="fixed prompt text")
    p.add_argument("--similar-order", choices=["descending", "ascending"],
                   dest="similar_order",
                   help="caption order inside the prompt payload")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(handler=_cmd_make_train_data)

    p = subs.add_parser("caption", help="caption audio-side embeddings")
    _add_common(p)
    p.add_argument("--support", help="support store base path")
    p.add_argument("--datastore", help="datastore base path")
    p.add_argument("--queries", help="audio embedding vector table")
    p.add_argument("--mapper", help="mapper file (default: identity)")
    p.add_argument("--backend", choices=["mock", "http", "replay"])
    p.add_argument("--endpoint", help="http backend URL")
    p.add_argument("--record", help="transcript file to append (http backend)")
    p.add_argument("--transcript", help="transcript file to replay")
    p.add_argument("--timeout-ms", type=int, dest="timeout_ms",
                   help="http request timeout in milliseconds")
    p.add_argument("--max-retries", type=int, dest="max_retries",
                   help="http retry budget for transient failures")
    p.add_argument("--k", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--no-projection", action="store_true", default=None,
                   help="feed the raw audio embedding to the backend")
    p.add_argument("--retrieval-query", choices=["audio", "projected"],
                   dest="retrieval_query")
    p.add_argument("--similar-order", choices=["descending", "ascending"],
                   dest="similar_order",
                   help="caption order inside the prompt payload")
    p.add_argument("--prompt", help="fixed prompt text")
    p.add_argument("--seed", type=int, help="accepted for reproducible run manifests")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(handler=_cmd_caption)

    p = subs.add_parser("adapt", help="replace or augment a domain profile")
    _add_common(p)
    p.add_argument("--support", help="current support base path")
    p.add_argument("--datastore", help="current datastore base path")
    p.add_argument("--new-support", dest="new_support")
    p.add_argument("--new-datastore", dest="new_datastore")
    p.add_argument("--mode", choices=["replace", "augment"])
    p.add_argument("--label")
    p.add_argument("--out-support", dest="out_support")
    p.add_argument("--out-datastore", dest="out_datastore")
    p.set_defaults(handler=_cmd_adapt)

    p = subs.add_parser("gap-stats", help="paired cosine / NN-rank statistics")
    _add_common(p)
    p.add_argument("--store", help="text store base path")
    p.add_argument("--audio", help="paired audio vector table (ids must match)")
    p.add_argument("--synth", action="store_true", default=None,
                   help="generate a synthetic paired corpus instead")
    p.add_argument("--dim", type=int)
    p.add_argument("--pairs", type=int)
    p.add_argument("--offset", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=_cmd_gap_stats)

    p = subs.add_parser("roundtrip",
                        help="own-embedding reconstruction rate per temperature")
    _add_common(p)
    p.add_argument("--corpus", help="store used as both support and datastore")
    p.add_argument("--temperatures", help="comma-separated list, e.g. 1e-6,0.01")
    p.set_defaults(handler=_cmd_roundtrip)

    return parser


# -- handlers ---------------------------------------------------------------


def _cmd_build(args, config):
    tsv = _get(args, config, "tsv")
    meta = _get(args, config, "meta")
    binary = _get(args, config, "bin")
    out = _get(args, config, "out", required=True)
    label = _get(args, config, "label", default=Path(out).name)
    if tsv:
        records = store_mod.read_ingest_tsv(tsv)
        built = store_mod.build_store(records, label=label)
    elif meta and binary:
        # re-save through the engine so validation and the label apply
        tmp_base = Path(binary).with_suffix("")
        if str(tmp_base) + ".bin" != str(binary) or str(
            Path(meta).with_suffix("")
        ) + ".tsv" != str(meta):
            raise ValueError("--bin must end in .bin and --meta in .tsv, "
                             "sharing their base name with their directory")
        built = store_mod.load_store(tmp_base, label=label)
    else:
        raise ValueError("provide --tsv, or --meta together with --bin")
    store_mod.save_store(built, out)
    _emit(sys.stdout, json.dumps(
        {"out": str(out), "count": len(built), "dim": built.dim, "label": label}
    ))
    return 0


def _cmd_merge(args, config):
    a = store_mod.load_store(_get(args, config, "a", required=True))
    b = store_mod.load_store(_get(args, config, "b", required=True))
    out = _get(args, config, "out", required=True)
    dedup = bool(_get(args, config, "dedup_on_text", default=False))
    merged = store_mod.merge_stores(a, b, dedup_on_text=dedup)
    store_mod.save_store(merged, out)
    _emit(sys.stdout, json.dumps({"out": str(out), "count": len(merged)}))
    return 0


def _cmd_filter(args, config):
    src = store_mod.load_store(_get(args, config, "store", required=True))
    out = _get(args, config, "out", required=True)
    excluded = _get(args, config, "exclude", default=[]) or []
    filtered = store_mod.filter_by_source(src, excluded)
    store_mod.save_store(filtered, out)
    _emit(sys.stdout, json.dumps({"out": str(out), "count": len(filtered)}))
    return 0


def _retrieval_config(args, config) -> RetrievalConfig:
    mode = RetrievalMode(_get(args, config, "mode", default="inference"))
    seed = _get(args, config, "seed")
    if mode is RetrievalMode.TRAINING and seed is None:
        raise ValueError("training-mode retrieval samples randomly: --seed is required")
    return RetrievalConfig(
        k=int(_get(args, config, "k", default=3)),
        s_min=_get(args, config, "s_min", default=0.75),
        s_max=_get(args, config, "s_max", default=0.85),
        mode=mode,
        seed=int(seed or 0),
    )


def _cmd_retrieve(args, config):
    ds = store_mod.load_store(_get(args, config, "datastore", required=True))
    ids, queries = store_mod.read_vector_table(
        _get(args, config, "queries", required=True)
    )
    cfg = _retrieval_config(args, config)
    fh = _out_stream(_get(args, config, "out"))
    try:
        for query_id, row in zip(ids, queries):
            if cfg.mode is RetrievalMode.TRAINING:
                hits = retrieve_in_range(row, ds, cfg, salt=query_id)
            else:
                hits = retrieve_topk(row, ds, cfg.k)
            _emit(fh, json.dumps({
                "query_id": query_id,
                "hits": [
                    {"id": h.entry.id, "similarity": h.similarity} for h in hits
                ],
            }, ensure_ascii=False))
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_project(args, config):
    support = store_mod.load_store(_get(args, config, "support", required=True))
    ids, queries = store_mod.read_vector_table(
        _get(args, config, "queries", required=True)
    )
    projector = SupportProjector(
        temperature=float(_get(args, config, "temperature", default=0.01)),
        renormalize_output=not bool(_get(args, config, "raw", default=False)),
    ).fit(support)
    projected = projector.transform(queries)
    fh = _out_stream(_get(args, config, "out"))
    try:
        store_mod.write_vector_table(fh, ids, projected)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _load_mapper_arg(args, config, dim: int) -> LinearMapper:
    path = _get(args, config, "mapper")
    return load_mapper(path) if path else LinearMapper.identity(dim)


def _cmd_make_train_data(args, config):
    corpus = store_mod.load_store(_get(args, config, "corpus", required=True))
    ds = store_mod.load_store(_get(args, config, "datastore", required=True))
    seed = _get(args, config, "seed")
    if seed is None:
        raise ValueError("make-train-data samples randomly: --seed is required")
    cfg = RetrievalConfig(
        k=int(_get(args, config, "k", default=3)),
        s_min=_get(args, config, "s_min", default=0.75),
        s_max=_get(args, config, "s_max", default=0.85),
        mode=RetrievalMode.TRAINING,
        seed=int(seed),
    )
    mapper = _load_mapper_arg(args, config, corpus.dim)
    prompt = _get(args, config, "prompt", default=pipeline.DEFAULT_FIXED_PROMPT)
    fh = _out_stream(_get(args, config, "out"))
    count = 0
    try:
        for example in pipeline.make_training_examples(
            corpus, ds, mapper=mapper, config=cfg, fixed_prompt=prompt,
            similar_order=_get(args, config, "similar_order", default="descending"),
        ):
            _emit(fh, training_example_json(example))
            count += 1
    finally:
        if fh is not sys.stdout:
            fh.close()
    logger.info("wrote %d training examples", count)
    return 0


def _make_backend(args, config, datastore):
    kind = _get(args, config, "backend", default="mock")
    if kind == "mock":
        return MockCaptionDecoder()
    if kind == "replay":
        return ReplayBackend(_get(args, config, "transcript", required=True))
    endpoint = _get(args, config, "endpoint", required=True)
    return HttpTextBackend(
        BackendConfig(
            endpoint=endpoint,
            timeout_ms=int(_get(args, config, "timeout_ms", default=10_000)),
            max_retries=int(_get(args, config, "max_retries", default=3)),
        ),
        transcript_path=_get(args, config, "record"),
    )


def _cmd_caption(args, config):
    support = store_mod.load_store(_get(args, config, "support", required=True))
    ds = store_mod.load_store(_get(args, config, "datastore", required=True))
    profile = DomainProfile(support=support, datastore=ds, label=support.label)
    ids, queries = store_mod.read_vector_table(
        _get(args, config, "queries", required=True)
    )
    backend = _make_backend(args, config, ds)
    results = pipeline.caption_batch(
        zip(ids, queries),
        profile,
        backend=backend,
        mapper=_load_mapper_arg(args, config, support.dim),
        projection=ProjectionConfig(
            temperature=float(_get(args, config, "temperature", default=0.01))
        ),
        retrieval=RetrievalConfig(
            k=int(_get(args, config, "k", default=3)),
            mode=RetrievalMode.INFERENCE,
        ),
        fixed_prompt=_get(args, config, "prompt",
                          default=pipeline.DEFAULT_FIXED_PROMPT),
        use_projection=not bool(_get(args, config, "no_projection", default=False)),
        retrieval_query=_get(args, config, "retrieval_query", default="audio"),
        similar_order=_get(args, config, "similar_order", default="descending"),
        parallelism=int(_get(args, config, "parallelism", default=1)),
    )
    fh = _out_stream(_get(args, config, "out"))
    try:
        for result in results:
            _emit(fh, caption_result_json(result))
    finally:
        if fh is not sys.stdout:
            fh.close()
    failures = sum(1 for r in results if r.error is not None)
    if failures:
        logger.warning("%d/%d items failed", failures, len(results))
    if results and failures == len(results):
        print("ragcap: backend error: every item in the batch failed",
              file=sys.stderr)
        return 2
    return 0


def _cmd_adapt(args, config):
    profile = DomainProfile(
        support=store_mod.load_store(_get(args, config, "support", required=True)),
        datastore=store_mod.load_store(_get(args, config, "datastore", required=True)),
    )
    adapted = pipeline.adapt_domain(
        profile,
        store_mod.load_store(_get(args, config, "new_support", required=True)),
        store_mod.load_store(_get(args, config, "new_datastore", required=True)),
        mode=_get(args, config, "mode", default="replace"),
        label=_get(args, config, "label"),
    )
    out_support = _get(args, config, "out_support", required=True)
    out_datastore = _get(args, config, "out_datastore", required=True)
    store_mod.save_store(adapted.support, out_support)
    store_mod.save_store(adapted.datastore, out_datastore)
    _emit(sys.stdout, json.dumps({
        "label": adapted.label,
        "support": {"out": str(out_support), "count": len(adapted.support)},
        "datastore": {"out": str(out_datastore), "count": len(adapted.datastore)},
    }))
    return 0


def _cmd_gap_stats(args, config):
    if _get(args, config, "synth", default=False):
        spec = evaluation.GapSpec(
            dim=int(_get(args, config, "dim", default=64)),
            n_pairs=int(_get(args, config, "pairs", default=500)),
            offset_norm=float(_get(args, config, "offset", default=0.5)),
            noise_sigma=float(_get(args, config, "noise", default=0.05)),
            seed=int(_get(args, config, "seed", required=True)),
        )
        text_store, audio = evaluation.synth_paired_corpus(spec)
    else:
        text_store = store_mod.load_store(_get(args, config, "store", required=True))
        ids, audio = store_mod.read_vector_table(
            _get(args, config, "audio", required=True)
        )
        index = {entry_id: i for i, entry_id in enumerate(text_store.ids)}
        missing = [i for i in ids if i not in index]
        if missing:
            raise ValueError(f"audio ids missing from the store: {missing[:5]}")
        order = [index[i] for i in ids]
        text_store_matrix = text_store.matrix[order]
        stats = evaluation.modality_gap_stats(text_store_matrix, audio)
        _emit(sys.stdout, json.dumps(stats.__dict__))
        return 0
    stats = evaluation.modality_gap_stats(text_store, audio)
    _emit(sys.stdout, json.dumps(stats.__dict__))
    return 0


def _cmd_roundtrip(args, config):
    corpus = store_mod.load_store(_get(args, config, "corpus", required=True))
    spec = _get(args, config, "temperatures", default="1e-6,0.01,0.1,1")
    temperatures = [float(x) for x in str(spec).split(",") if x]
    table = evaluation.roundtrip_reconstruction(corpus, temperatures)
    for tau, rate in table:
        _emit(sys.stdout, json.dumps({"temperature": tau, "rate": rate}))
    width = max(len(f"{tau:g}") for tau, _ in table)
    print("temperature  rate", file=sys.stderr)
    for tau, rate in table:
        print(f"{tau:<{max(width, 11)}g}  {rate:.3f}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
        return args.handler(args, config)
    except BackendError as exc:
        print(f"ragcap: backend error: {exc}", file=sys.stderr)
        return 2
    except (CaptionEngineError, OSError, ValueError) as exc:
        print(f"ragcap: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
