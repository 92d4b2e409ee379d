"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 malformed or inconsistent input.
Run ``storyseg <command> --help`` for the options and file formats of each
command.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import AnnotationSet, shot_edges
from .embedding import TrainConfig, feature_importance, train
from .evaluate import MODES, EvalVideo, run_evaluation
from .features import SemanticConfig, assemble_video_features, spectral_cluster_terms, stack

log = logging.getLogger("storyseg")

FORMATS = """\
file formats (JSON unless noted):
  video        {"fps": float, "shots": [{"start_frame", "end_frame", "word_count",
                "keyframes"?: [tensor], "audio"?: [float]}]}; frames are half-open
  tensor       {"shape": [int], "data": [float] row-major} or {"npy": path}
  terms        [{"unigram": str, "t_u": frame, "svm_probs"?: [float per shot]}]
  embeddings   text, one "term v1 v2 ..." line per term
  groups       {"K": int, "assignment": {unigram: group}}
  features     {"video": id, "block_map": {name: [lo, hi]}, "features": [[float]]}
  segmentation {"n_shots": int, "boundaries": [first shot of each story]}
  model        {"format": "storyseg-embedding", "version", "layer_dims", "weights",
                "biases", "final_linear", "config", "input_mean"?, "input_scale"?}
  loss CSV     iteration,loss          trace CSV  C,stories,objective
  pairs CSV    story_id,better_keyframe,worse_keyframe
  thumbnails   {"thumbnails": [{"id", "shot", "groups": [[tensor] x 5]} or "tau": [10 floats]}]}
  rank model   {"w_r": [float], "C_r": float, "trace": [float]}
  scores       {"scores": [{"id", "shot", "score"}]}
  manifest     {"videos": [{"id", "video"?, "features", "terms"?, "thumbnails"?,
                "annotations": [segmentation paths]}], "split": {"train": [id], "test": [id]},
                "embeddings"?, "groups"?, "pairs"?}; paths relative to the manifest
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_edges(video_path, n_shots=None):
    if video_path is None:
        return None
    shots, _ = io.read_video(video_path)
    if n_shots is not None and len(shots) != n_shots:
        raise io.DataError(video_path, "shots", f"{len(shots)} shots, expected {n_shots}")
    return shot_edges(shots)


def _ground_truth(paths, edges):
    anns = io.read_annotations(paths, edges)
    if len(anns) == 1:
        return anns.annotations[0]
    from .agreement import max_agreement

    return max_agreement(anns).segmentation


def _manifest_videos(manifest):
    videos = []
    for v in manifest["videos"]:
        if "features" not in v or not v["annotations"]:
            raise io.DataError(v["id"], "features/annotations", "video needs a features file and annotations")
        rows, _ = io.read_features(v["features"])
        edges = _load_edges(v.get("video"), len(rows))
        videos.append(EvalVideo(v["id"], stack(rows), _ground_truth(v["annotations"], edges)))
    return videos


def _parse_grid(text):
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError:
        raise UsageError(f"grid must look like LO:HI:COUNT, got {text!r}") from None
    if not 0 < lo <= hi or count < 1:
        raise UsageError("grid needs 0 < LO <= HI and COUNT >= 1")
    return np.geomspace(lo, hi, count)


def _train_config(args):
    return TrainConfig(iterations=args.iterations, batch_size=args.batch_size, seed=args.seed)


# commands -----------------------------------------------------------------

def cmd_synth(args):
    from .synth import SynthConfig, generate_synthetic_corpus, save_corpus

    overrides = json.loads(args.config) if args.config else {}
    if not isinstance(overrides, dict):
        raise UsageError("--config must be a JSON object")
    overrides.update(seed=args.seed)
    if args.n_videos is not None:
        overrides["n_videos"] = args.n_videos
    try:
        cfg = SynthConfig(**overrides)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    corpus = generate_synthetic_corpus(cfg)
    save_corpus(corpus, args.out, thumbnails=not args.no_thumbnails, thumbnail_size=args.thumbnail_size)
    print(f"wrote {len(corpus.videos)} videos to {args.out}")


def cmd_assemble_features(args):
    shots, fps = io.read_video(args.video)
    terms = io.read_terms(args.terms, len(shots)) if args.terms else []
    if args.groups:
        groups = io.read_groups(args.groups)
    elif args.embeddings:
        vectors = io.read_word_vectors(args.embeddings)
        groups = spectral_cluster_terms(vectors, args.K, seed=args.seed)
    else:
        raise UsageError("give --groups or --embeddings")
    missing = sorted({t.unigram for t in terms} - set(groups.assignment))
    if missing:
        raise io.DataError(args.terms, "unigram", f"terms without a concept group: {missing[:5]}")
    sem = SemanticConfig(args.sigma_seconds * fps, K=groups.K)
    rows = assemble_video_features(shots, terms, groups, sem)
    io.write_features(args.out, rows, args.id or Path(args.video).stem.split(".")[0])
    print(f"wrote {len(rows)} feature vectors of dimension {rows[0].dim} to {args.out}")


def cmd_train_embedding(args):
    manifest = io.read_manifest(args.manifest)
    videos = {v.id: v for v in _manifest_videos(manifest)}
    train_ids = manifest["split"]["train"]
    corpus = [(videos[i].features, videos[i].truth) for i in train_ids]
    model, history = train(corpus, _train_config(args), final_linear=args.final_linear,
                           standardize=not args.no_standardize)
    io.write_model(args.out, model)
    if args.loss_csv:
        io.write_loss_history(args.loss_csv, history)
    last = f"{history[-1]:.5f}" if history else "n/a"
    print(f"trained on {len(corpus)} videos, final loss {last}; model written to {args.out}")


def cmd_segment(args):
    from .segment import auto_segment, segment_video, sweep_trace

    rows, _ = io.read_features(args.features)
    X = stack(rows)
    edges = _load_edges(args.video, len(rows))
    if args.model:
        X = io.read_model(args.model).embed(X)
    if args.C is None:
        res = auto_segment(X, step=args.step, edges=edges)
        seg, C = res.segmentation, res.C
        if res.capped:
            log.warning("C sweep hit its cap; returning the segmentation at the cap")
    else:
        seg, _ = segment_video(X, args.C, edges)
        C = args.C
    out = io.segmentation_to_json(seg)
    out["C"] = C
    io.write_json(args.out, out)
    if args.trace:
        io.write_csv(args.trace, ("C", "stories", "objective"),
                     ((c, m + 1, obj) for c, m, obj in sweep_trace(X, _parse_grid(args.grid))))
    print(f"{len(seg)} stories (C={C:g}) written to {args.out}")


def cmd_evaluate(args):
    manifest = io.read_manifest(args.manifest)
    videos = _manifest_videos(manifest)
    model = io.read_model(args.model) if args.model else None
    test_ids = manifest["split"]["test"] if args.mode != "leave-one-out" else None
    if args.mode == "pretrained" and model is None:
        raise UsageError("--mode pretrained needs --model")
    if args.mode == "pretrained" and not test_ids:
        test_ids = None
    report = run_evaluation(videos, args.mode, _train_config(args), model=model, test_ids=test_ids,
                            workers=args.workers)
    io.write_json(args.out, report.to_json())
    print(report.to_table())


def cmd_agree(args):
    from .agreement import brute_force_agreement, max_agreement

    edges = _load_edges(args.video)
    anns = io.read_annotations(args.annotations, edges)
    if args.oracle:
        result = brute_force_agreement(anns, max_n=args.max_n)
    else:
        result = max_agreement(anns)
    out = io.segmentation_to_json(result.segmentation)
    out["mean_iou"] = result.value
    io.write_json(args.out, out)
    print(f"{len(result.segmentation)} stories, mean IoU {result.value:.6f}; written to {args.out}")


def _taus(paths, size, sigma_b):
    from .retrieval import build_hypercolumns

    out = {}
    for p in paths:
        for item in io.read_thumbnails(p):
            if item["id"] in out:
                raise io.DataError(p, "id", f"duplicate keyframe id {item['id']!r}")
            if "tau" in item:
                tau = item["tau"]
            else:
                try:
                    tau = build_hypercolumns(item["groups"], S=size, sigma_b=sigma_b).tau
                except ValueError as exc:
                    raise io.DataError(p, f"{item['id']}.groups", str(exc)) from None
            out[item["id"]] = (item["shot"], tau)
    return out


def cmd_train_rank(args):
    from .retrieval import swapped_pairs, train_rank_model

    taus = _taus(args.thumbnails, args.size, args.sigma_b)
    pairs = []
    for i, (story, better, worse) in enumerate(io.read_pairs(args.pairs)):
        for kf in (better, worse):
            if kf not in taus:
                raise io.DataError(args.pairs, f"row {i + 1}", f"unknown keyframe {kf!r}")
        pairs.append((taus[better][1], taus[worse][1]))
    if not pairs:
        raise io.DataError(args.pairs, "<rows>", "no preference pairs")
    model = train_rank_model(pairs, C_r=args.C_r, iterations=args.iterations, seed=args.seed)
    io.write_rank_model(args.out, model)
    print(f"trained on {len(pairs)} pairs, training swapped pairs {swapped_pairs(model, pairs):.2f}%")


def cmd_rank_thumbnails(args):
    from .retrieval import aesthetic_score

    model = io.read_rank_model(args.model)
    taus = _taus(args.thumbnails, args.size, args.sigma_b)
    scores = []
    for kid in sorted(taus):
        shot, tau = taus[kid]
        if len(tau) != len(model.w_r):
            raise io.DataError(args.model, "w_r", f"{len(model.w_r)} weights for {len(tau)} statistics")
        scores.append({"id": kid, "shot": shot, "score": aesthetic_score(model, tau)})
    io.write_json(args.out, {"scores": scores})
    print(f"scored {len(scores)} keyframes")


def cmd_retrieve(args):
    from .retrieval import match_query, query_shot_probability, rank_stories

    shots, fps = io.read_video(args.video)
    terms = io.read_terms(args.terms, len(shots))
    seg = io.read_segmentation(args.segmentation, shot_edges(shots))
    vectors = io.read_word_vectors(args.embeddings)
    vocab = {t.unigram: vectors[t.unigram] for t in terms if t.unigram in vectors}
    if not vocab:
        raise io.DataError(args.terms, "unigram", "no transcript term has a word vector")
    try:
        query = match_query(args.query, vocab, vectors)
    except KeyError as exc:
        raise io.DataError(args.embeddings, "query", str(exc.args[0])) from None
    P = query_shot_probability(shots, terms, query.resolved_term, args.sigma_seconds * fps)
    fallback = any(t.unigram == query.resolved_term and t.svm_probs is None for t in terms)
    video_id = Path(args.video).name.split(".")[0]
    keyframes = [dict() for _ in shots]
    if args.scores:
        obj = io.read_json(args.scores)
        for i, rec in enumerate(obj.get("scores", [])):
            try:
                shot, kid, score = int(rec["shot"]), str(rec["id"]), float(rec["score"])
            except (KeyError, TypeError, ValueError) as exc:
                raise io.DataError(args.scores, f"scores[{i}]", str(exc)) from None
            if not 0 <= shot < len(shots):
                raise io.DataError(args.scores, f"scores[{i}].shot", f"shot {shot} outside the video")
            keyframes[shot][kid] = score
    ranked = rank_stories(seg, P, keyframes, alpha=args.alpha)
    results = []
    for rank, r in enumerate(ranked[: args.top], 1):
        results.append({"rank": rank, "video": video_id, "story": r.story_index, "first_shot": r.first_shot, "last_shot": r.last_shot,
                        "start_frame": shots[r.first_shot].start_frame, "end_frame": shots[r.last_shot].end_frame,
                        "keyframe": r.keyframe, "score": r.score, "no_keyframes": r.no_keyframes})
    io.write_json(args.out, {"query": args.query, "matched_term": query.resolved_term,
                             "similarity": query.similarity, "gaussian_fallback": fallback,
                             "results": results})
    print(f"query {args.query!r} matched {query.resolved_term!r}; {len(results)} stories written to {args.out}")


def cmd_feature_importance(args):
    model = io.read_model(args.model)
    rows = []
    block_map = None
    for p in args.features:
        r, _ = io.read_features(p)
        if block_map is not None and r[0].block_map != block_map:
            raise io.DataError(p, "block_map", "differs from the other feature files")
        block_map = r[0].block_map
        rows.extend(r)
    X = stack(rows)
    if X.shape[1] != model.input_dim:
        raise io.DataError(args.features[0], "features", f"dimension {X.shape[1]}, model expects {model.input_dim}")
    weights = feature_importance(model, X, block_map)
    io.write_json(args.out, {"importance": weights, "n_shots": len(rows)})
    for name, w in weights.items():
        print(f"{name:<18} {w:.4f}")


# parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser = _Parser(prog="storyseg", description="Story detection, agreement and retrieval for broadcast video.",
                     epilog=FORMATS, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_, epilog=FORMATS,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    def training(p):
        p.add_argument("--iterations", type=int, default=100)
        p.add_argument("--batch-size", type=int, default=500)

    p = add("synth", cmd_synth, "write a synthetic corpus with ground truth and a manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-videos", type=int)
    p.add_argument("--config", help='JSON object of generator overrides, e.g. \'{"noise": 0.5}\'')
    p.add_argument("--no-thumbnails", action="store_true", help="skip keyframe maps and preference pairs")
    p.add_argument("--thumbnail-size", type=int, default=224)

    p = add("assemble-features", cmd_assemble_features, "build per-shot feature vectors for one video")
    p.add_argument("--video", required=True)
    p.add_argument("--terms")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--groups", help="concept groups file")
    g.add_argument("--embeddings", help="word vectors to cluster into --K concept groups")
    p.add_argument("--K", type=int, default=50)
    p.add_argument("--sigma-seconds", type=float, default=20.0, help="Gaussian std in seconds (default 20)")
    p.add_argument("--id", help="video id stored in the features file")
    p.add_argument("--out", required=True)

    p = add("train-embedding", cmd_train_embedding, "train the shot embedding on the manifest's training split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="model checkpoint")
    p.add_argument("--loss-csv", help="per-iteration loss history")
    p.add_argument("--final-linear", action="store_true", help="no rectifier on the output layer")
    p.add_argument("--no-standardize", action="store_true", help="train on unstandardized features")
    training(p)

    p = add("segment", cmd_segment, "segment one video into stories")
    p.add_argument("--features", required=True)
    p.add_argument("--model", help="embedding checkpoint; without it raw features are clustered")
    p.add_argument("--video", help="video file, for frame-accurate story intervals")
    p.add_argument("--C", type=float, help="fixed penalty weight (default: automatic sweep)")
    p.add_argument("--step", type=float, default=0.001, help="sweep increment")
    p.add_argument("--trace", help="write a C sweep trace CSV")
    p.add_argument("--grid", default="0.001:1000:61", help="trace grid LO:HI:COUNT, log-spaced")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "held-out segmentation IoU, embedding vs raw features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=MODES, default="leave-one-out")
    p.add_argument("--model", help="checkpoint for --mode pretrained")
    p.add_argument("--workers", type=int, default=1, help="parallel leave-one-out folds")
    p.add_argument("--out", required=True, help="JSON report")
    training(p)

    p = add("agree", cmd_agree, "maximum-agreement segmentation of several annotations")
    p.add_argument("--annotations", nargs="+", required=True)
    p.add_argument("--video", help="video file, for frame-accurate story intervals")
    p.add_argument("--oracle", action="store_true", help="exhaustive search instead of the longest-path solver")
    p.add_argument("--max-n", type=int, default=20, help="largest video the exhaustive search accepts")
    p.add_argument("--out", required=True)

    p = add("train-rank", cmd_train_rank, "learn the thumbnail ranking model from preference pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--thumbnails", nargs="+", required=True)
    p.add_argument("--C-r", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=1000, help="maximum solver epochs")
    p.add_argument("--size", type=int, default=224, help="hypercolumn map size")
    p.add_argument("--sigma-b", type=float, default=0.3)
    p.add_argument("--out", required=True)

    p = add("rank-thumbnails", cmd_rank_thumbnails, "score keyframes with a ranking model")
    p.add_argument("--model", required=True)
    p.add_argument("--thumbnails", nargs="+", required=True)
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--sigma-b", type=float, default=0.3)
    p.add_argument("--out", required=True)

    p = add("retrieve", cmd_retrieve, "rank the stories of a video for a text query")
    p.add_argument("--query", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--terms", required=True)
    p.add_argument("--segmentation", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--scores", help="keyframe scores from rank-thumbnails")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--sigma-seconds", type=float, default=20.0)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", required=True)

    p = add("feature-importance", cmd_feature_importance, "relative importance of each feature block")
    p.add_argument("--model", required=True)
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"storyseg: error: {exc}", file=sys.stderr)
        return 1
    except io.DataError as exc:
        print(f"storyseg: data error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"storyseg: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
