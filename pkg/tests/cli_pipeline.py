"""Runs every CLI command once over a small synthetic corpus."""

import json
from pathlib import Path

from storyseg.cli import main

SYNTH_CONFIG = {"shots_per_video": [12, 16], "stories_per_video": [2, 3]}


def run(*argv) -> int:
    return main([str(a) for a in argv])


def run_pipeline(root: Path, seed: int = 0) -> dict:
    """Execute all ten commands under ``root``; returns {command: exit code}."""
    data, out = root / "data", root / "out"
    out.mkdir(parents=True, exist_ok=True)
    codes = {}
    codes["synth"] = run("synth", "--out", data, "--n-videos", 3, "--config", json.dumps(SYNTH_CONFIG),
                         "--thumbnail-size", 32, "--seed", seed)
    manifest = json.loads((data / "manifest.json").read_text())
    v0 = manifest["videos"][0]
    test = manifest["videos"][-1]
    codes["assemble-features"] = run("assemble-features", "--video", data / v0["video"], "--terms",
                                     data / v0["terms"], "--groups", data / "groups.json", "--K", 6,
                                     "--out", out / "features.json", "--seed", seed)
    codes["train-embedding"] = run("train-embedding", "--manifest", data / "manifest.json", "--out",
                                   out / "model.json", "--loss-csv", out / "loss.csv", "--iterations", 5,
                                   "--batch-size", 32, "--seed", seed)
    codes["segment"] = run("segment", "--features", data / test["features"], "--model", out / "model.json",
                           "--video", data / test["video"], "--trace", out / "trace.csv", "--grid", "0.01:100:7",
                           "--out", out / "segmentation.json", "--seed", seed)
    codes["evaluate"] = run("evaluate", "--manifest", data / "manifest.json", "--iterations", 3,
                            "--batch-size", 32, "--out", out / "report.json", "--seed", seed)
    codes["agree"] = run("agree", "--annotations", data / test["annotations"][0], out / "segmentation.json",
                         "--video", data / test["video"], "--out", out / "consensus.json", "--seed", seed)
    thumbs = [data / v["thumbnails"] for v in manifest["videos"]]
    codes["train-rank"] = run("train-rank", "--pairs", data / "pairs.csv", "--thumbnails", *thumbs, "--size", 32,
                              "--iterations", 50, "--out", out / "rank.json", "--seed", seed)
    codes["rank-thumbnails"] = run("rank-thumbnails", "--model", out / "rank.json", "--thumbnails",
                                   data / test["thumbnails"], "--size", 32, "--out", out / "scores.json",
                                   "--seed", seed)
    query = json.loads((data / test["terms"]).read_text())[0]["unigram"]
    codes["retrieve"] = run("retrieve", "--query", query, "--video", data / test["video"], "--terms",
                            data / test["terms"], "--segmentation", out / "segmentation.json", "--embeddings",
                            data / "words.txt", "--scores", out / "scores.json", "--out", out / "results.json",
                            "--seed", seed)
    codes["feature-importance"] = run("feature-importance", "--model", out / "model.json", "--features",
                                      data / test["features"], "--out", out / "importance.json", "--seed", seed)
    return codes


def snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
