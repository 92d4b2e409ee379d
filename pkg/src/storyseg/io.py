"""Readers and writers for every on-disk format.

All structured files are JSON, traces and reports CSV. Readers raise
:class:`DataError` naming the offending file and field instead of letting
``KeyError``/``TypeError`` escape.
"""

from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import AnnotationSet, FeatureVector, Segmentation, ShotRecord
from .embedding import EmbeddingModel
from .features import ConceptGroups, TranscriptTerm
from .retrieval import RankModel

MODEL_FORMAT = "storyseg-embedding"
MODEL_VERSION = 1


class DataError(Exception):
    def __init__(self, path, field: str, message: str):
        self.path = str(path)
        self.field = field
        super().__init__(f"{self.path}: {field}: {message}")


@contextmanager
def _fields(path, field: str):
    try:
        yield
    except DataError:
        raise
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise DataError(path, field, f"{type(exc).__name__}: {exc}") from exc


def read_json(path):
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(path, "<file>", "no such file") from None
    except json.JSONDecodeError as exc:
        raise DataError(path, "<json>", f"malformed JSON at line {exc.lineno}") from None


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _floats(x) -> list:
    return np.asarray(x, dtype=float).tolist()


# tensors ------------------------------------------------------------------

def tensor_to_json(t) -> dict:
    t = np.asarray(t, dtype=float)
    return {"shape": list(t.shape), "data": t.ravel().tolist()}


def tensor_from_json(obj, base: Path | None = None, path="<tensor>", field="tensor") -> np.ndarray:
    with _fields(path, field):
        if "npy" in obj:
            src = Path(obj["npy"])
            if base is not None and not src.is_absolute():
                src = base / src
            try:
                return np.load(src, allow_pickle=False).astype(float)
            except FileNotFoundError:
                raise DataError(src, "<file>", "no such file") from None
        shape = [int(s) for s in obj["shape"]]
        data = np.asarray(obj["data"], dtype=float)
        if data.size != int(np.prod(shape)):
            raise ValueError(f"{data.size} values for shape {shape}")
        return data.reshape(shape)


# videos and segmentations -------------------------------------------------

def video_to_json(shots: Sequence[ShotRecord], fps: float) -> dict:
    out = []
    for s in shots:
        rec = {"start_frame": s.start_frame, "end_frame": s.end_frame, "word_count": s.word_count}
        if s.keyframe_tensors:
            rec["keyframes"] = [tensor_to_json(t) for t in s.keyframe_tensors]
        if s.audio_vector is not None:
            rec["audio"] = _floats(s.audio_vector)
        out.append(rec)
    return {"fps": fps, "shots": out}


def read_video(path) -> tuple[list[ShotRecord], float]:
    path = Path(path)
    obj = read_json(path)
    with _fields(path, "fps"):
        fps = float(obj["fps"])
    with _fields(path, "shots"):
        raw_shots = list(obj["shots"])
        if not raw_shots:
            raise ValueError("video has no shots")
    shots = []
    for i, rec in enumerate(raw_shots):
        with _fields(path, f"shots[{i}]"):
            keyframes = tuple(tensor_from_json(t, path.parent, path, f"shots[{i}].keyframes")
                              for t in rec.get("keyframes", ()))
            audio = rec.get("audio")
            shots.append(ShotRecord(i, int(rec["start_frame"]), int(rec["end_frame"]),
                                    int(rec.get("word_count", 0)), fps, keyframes,
                                    None if audio is None else np.asarray(audio, dtype=float)))
    with _fields(path, "shots"):
        from .core import check_contiguous
        check_contiguous(shots)
    return shots, fps


def write_video(path, shots, fps) -> None:
    write_json(path, video_to_json(shots, fps))


def segmentation_to_json(seg: Segmentation) -> dict:
    return {"n_shots": seg.n_shots, "boundaries": list(seg.boundaries)}


def read_segmentation(path, edges=None) -> Segmentation:
    obj = read_json(path)
    with _fields(path, "n_shots"):
        n = int(obj["n_shots"])
    with _fields(path, "boundaries"):
        if edges is not None and len(edges) != n + 1:
            raise ValueError(f"segmentation has {n} shots, video has {len(edges) - 1}")
        return Segmentation.from_boundaries(obj["boundaries"], n, edges)


def write_segmentation(path, seg: Segmentation) -> None:
    write_json(path, segmentation_to_json(seg))


def read_annotations(paths: Iterable, edges=None) -> AnnotationSet:
    anns = tuple(read_segmentation(p, edges) for p in paths)
    if not anns:
        raise DataError("<annotations>", "annotations", "no annotation files given")
    try:
        return AnnotationSet(anns)
    except ValueError as exc:
        raise DataError("<annotations>", "n_shots", str(exc)) from None


# transcript terms and word vectors -----------------------------------------

def terms_to_json(terms: Sequence[TranscriptTerm]) -> list:
    out = []
    for t in terms:
        rec = {"unigram": t.unigram, "t_u": t.t_u}
        if t.svm_probs is not None:
            rec["svm_probs"] = _floats(t.svm_probs)
        out.append(rec)
    return out


def read_terms(path, n_shots: int | None = None) -> list[TranscriptTerm]:
    obj = read_json(path)
    if not isinstance(obj, list):
        raise DataError(path, "<root>", "expected a list of terms")
    terms = []
    for i, rec in enumerate(obj):
        with _fields(path, f"[{i}]"):
            probs = rec.get("svm_probs")
            if probs is not None and n_shots is not None and len(probs) != n_shots:
                raise ValueError(f"svm_probs has {len(probs)} entries for {n_shots} shots")
            terms.append(TranscriptTerm(str(rec["unigram"]), float(rec["t_u"]), probs))
    return terms


def write_terms(path, terms) -> None:
    write_json(path, terms_to_json(terms))


def read_word_vectors(path) -> dict:
    """Text format: one ``term v1 v2 ...`` line per term."""
    path = Path(path)
    out, dim = {}, None
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise DataError(path, "<file>", "no such file") from None
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts:
            continue
        with _fields(path, f"line {lineno}"):
            vec = np.array([float(v) for v in parts[1:]])
            if vec.size == 0:
                raise ValueError(f"term {parts[0]!r} has no values")
            if dim is not None and vec.size != dim:
                raise ValueError(f"expected {dim} values, got {vec.size}")
            dim = vec.size
            out[parts[0]] = vec
    return out


def write_word_vectors(path, vectors: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for term in sorted(vectors):
            fh.write(term + " " + " ".join(repr(float(v)) for v in vectors[term]) + "\n")


def read_groups(path) -> ConceptGroups:
    """Concept groups: ``{"K": int, "assignment": {unigram: group}}``."""
    obj = read_json(path)
    with _fields(path, "K"):
        K = int(obj["K"])
    with _fields(path, "assignment"):
        return ConceptGroups(K, {str(t): int(g) for t, g in obj["assignment"].items()})


def write_groups(path, groups: ConceptGroups) -> None:
    write_json(path, {"K": groups.K, "assignment": {t: int(g) for t, g in sorted(groups.assignment.items())}})


# feature corpora ----------------------------------------------------------

def features_to_json(vectors: Sequence[FeatureVector], video_id: str = "") -> dict:
    return {
        "video": video_id,
        "block_map": {k: list(v) for k, v in vectors[0].block_map.items()},
        "features": [fv.values.tolist() for fv in vectors],
    }


def read_features(path) -> tuple[list[FeatureVector], str]:
    obj = read_json(path)
    with _fields(path, "block_map"):
        block_map = {str(k): (int(v[0]), int(v[1])) for k, v in obj["block_map"].items()}
    rows = []
    with _fields(path, "features"):
        feats = obj["features"]
        if not feats:
            raise ValueError("no feature rows")
    for i, row in enumerate(feats):
        with _fields(path, f"features[{i}]"):
            rows.append(FeatureVector(np.asarray(row, dtype=float), block_map))
    return rows, str(obj.get("video", ""))


def write_features(path, vectors, video_id: str = "") -> None:
    write_json(path, features_to_json(vectors, video_id))


# models -------------------------------------------------------------------

def model_to_json(model: EmbeddingModel) -> dict:
    out = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_dims": list(model.layer_dims),
        "final_linear": model.final_linear,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "config": model.config,
    }
    if model.input_mean is not None:
        out["input_mean"] = model.input_mean.tolist()
        out["input_scale"] = model.input_scale.tolist()
    return out


def model_from_json(obj, path="<model>") -> EmbeddingModel:
    with _fields(path, "format"):
        if obj.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} checkpoint")
        if int(obj.get("version", 0)) > MODEL_VERSION:
            raise ValueError(f"checkpoint version {obj['version']} is newer than {MODEL_VERSION}")
    with _fields(path, "layers"):
        return EmbeddingModel(obj["layer_dims"], obj["weights"], obj["biases"],
                              bool(obj.get("final_linear", False)), dict(obj.get("config", {})),
                              obj.get("input_mean"), obj.get("input_scale"))


def read_model(path) -> EmbeddingModel:
    return model_from_json(read_json(path), path)


def write_model(path, model: EmbeddingModel) -> None:
    write_json(path, model_to_json(model))


def read_rank_model(path) -> RankModel:
    obj = read_json(path)
    with _fields(path, "w_r"):
        return RankModel(np.asarray(obj["w_r"], dtype=float), float(obj.get("C_r", 1.0)),
                         list(obj.get("trace", [])))


def write_rank_model(path, model: RankModel) -> None:
    write_json(path, {"w_r": model.w_r.tolist(), "C_r": model.C_r, "trace": list(model.trace)})


# CSV ----------------------------------------------------------------------

def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_csv(path, required: Sequence[str]) -> list[dict]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in required if c not in (reader.fieldnames or [])]
            if missing:
                raise DataError(path, missing[0], "missing column")
            return list(reader)
    except FileNotFoundError:
        raise DataError(path, "<file>", "no such file") from None


def write_loss_history(path, history: Sequence[float]) -> None:
    write_csv(path, ("iteration", "loss"), ((i + 1, float(v)) for i, v in enumerate(history)))


def read_loss_history(path) -> list[float]:
    rows = read_csv(path, ("iteration", "loss"))
    out = []
    for i, r in enumerate(rows):
        with _fields(path, f"row {i + 1}"):
            out.append(float(r["loss"]))
    return out


def read_pairs(path) -> list[tuple[str, str, str]]:
    """Preference annotations: ``story_id, better_keyframe, worse_keyframe``."""
    rows = read_csv(path, ("story_id", "better_keyframe", "worse_keyframe"))
    return [(r["story_id"], r["better_keyframe"], r["worse_keyframe"]) for r in rows]


def write_pairs(path, pairs) -> None:
    write_csv(path, ("story_id", "better_keyframe", "worse_keyframe"), pairs)


# thumbnails ---------------------------------------------------------------

def read_thumbnails(path) -> list[dict]:
    """``{"thumbnails": [{"id", "shot", "groups": [[tensor, ...] x 5]} | "tau": [...]}]}``."""
    path = Path(path)
    obj = read_json(path)
    out = []
    with _fields(path, "thumbnails"):
        items = list(obj["thumbnails"])
    for i, rec in enumerate(items):
        with _fields(path, f"thumbnails[{i}]"):
            entry = {"id": str(rec["id"]), "shot": int(rec.get("shot", -1))}
            if "tau" in rec:
                entry["tau"] = np.asarray(rec["tau"], dtype=float)
            else:
                entry["groups"] = [[tensor_from_json(t, path.parent, path, f"thumbnails[{i}].groups")
                                    for t in group] for group in rec["groups"]]
            out.append(entry)
    return out


def write_thumbnails(path, items) -> None:
    out = []
    for it in items:
        rec = {"id": it["id"], "shot": it.get("shot", -1)}
        if "tau" in it:
            rec["tau"] = _floats(it["tau"])
        else:
            rec["groups"] = [[tensor_to_json(t) for t in group] for group in it["groups"]]
        out.append(rec)
    write_json(path, {"thumbnails": out})


# manifests ----------------------------------------------------------------

def read_manifest(path) -> dict:
    """Resolve a corpus manifest; relative paths are taken from the manifest's directory."""
    path = Path(path)
    obj = read_json(path)
    base = path.parent
    videos = []
    with _fields(path, "videos"):
        entries = list(obj["videos"])
    for i, v in enumerate(entries):
        with _fields(path, f"videos[{i}]"):
            entry = {"id": str(v["id"])}
            for key in ("video", "features", "terms", "thumbnails"):
                if key in v:
                    p = base / v[key]
                    if not p.exists():
                        raise DataError(path, f"videos[{i}].{key}", f"referenced file {p} does not exist")
                    entry[key] = p
            entry["annotations"] = []
            for j, a in enumerate(v.get("annotations", [])):
                p = base / a
                if not p.exists():
                    raise DataError(path, f"videos[{i}].annotations[{j}]", f"referenced file {p} does not exist")
                entry["annotations"].append(p)
            videos.append(entry)
    ids = [v["id"] for v in videos]
    if len(set(ids)) != len(ids):
        raise DataError(path, "videos", "duplicate video ids")
    split = obj.get("split", {})
    train, test = list(split.get("train", ids)), list(split.get("test", []))
    if set(train) & set(test):
        raise DataError(path, "split", "train and test ids overlap")
    unknown = (set(train) | set(test)) - set(ids)
    if unknown:
        raise DataError(path, "split", f"unknown video ids {sorted(unknown)}")
    out = {"videos": videos, "split": {"train": train, "test": test}}
    for key in ("embeddings", "groups", "pairs"):
        if key in obj:
            p = base / obj[key]
            if not p.exists():
                raise DataError(path, key, f"referenced file {p} does not exist")
            out[key] = p
    if "thumbnail_size" in obj:
        with _fields(path, "thumbnail_size"):
            out["thumbnail_size"] = int(obj["thumbnail_size"])
    return out
