"""Fine-grained ranking and coarse retrieval evaluation.

Vocabulary benchmarks report the mean rank of the positive caption among
its K = N + 1 candidates, ties counted against the positive (a head that
scores every candidate equally lands at rank K, not at 1).
Coarse retrieval reports Recall@k in both directions with score ties
broken by ascending candidate id so results never depend on row order.

Scoring is chunked; set FGMATCH_THREADS > 1 to spread chunks over a
thread pool.  Chunk results are merged in submission order, so the
output is identical at any thread count.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UsageError
from .heads import Head, score_batch, score_pairs
from .store import CoarsePairs, VocabDataset, coarse_digest, embedding_matrix, vocab_digest

RECALL_KS = (1, 5, 10)
_CHUNK = 256


def rank_positive(positive: float, negatives) -> int:
    """1-based rank of the positive among positive + negatives."""
    negs = np.asarray(negatives, dtype=np.float64)
    if negs.ndim != 1 or negs.size < 1:
        raise UsageError("rank_positive expects a flat, nonempty array of negative scores")
    return int(1 + np.sum(negs > positive) + np.sum(negs == positive))


def _thread_count() -> int:
    raw = os.environ.get("FGMATCH_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"FGMATCH_THREADS must be an integer, got '{raw}'") from None
    if n < 1:
        raise UsageError(f"FGMATCH_THREADS must be >= 1, got {n}")
    return n


def _map_chunks(fn, chunks: list):
    threads = _thread_count()
    if threads == 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


@dataclass
class BenchmarkResult:
    benchmark: str
    k: int
    n_items: int
    mean_rank: float
    ranks: list[int] = field(repr=False, default_factory=list)


def evaluate_vocab(head: Head, vocab: VocabDataset, tables,
                   normalize: bool = True) -> BenchmarkResult:
    """Mean rank of the positive caption over the item's candidate set."""
    if not vocab.items:
        raise UsageError("vocabulary dataset has no items to evaluate")
    images, texts = tables
    n = vocab.n_negatives
    crop_rows = embedding_matrix(images, [it.crop_id for it in vocab.items], normalize)
    cap_ids = []
    for it in vocab.items:
        cap_ids.append(it.positive_id)
        cap_ids.extend(it.negative_ids)
    cap_rows = embedding_matrix(texts, cap_ids, normalize)

    def ranks_for(chunk: range) -> list[int]:
        idx = np.arange(chunk.start, chunk.stop)
        v = np.repeat(crop_rows[idx], n + 1, axis=0)
        cap_idx = (idx[:, None] * (n + 1) + np.arange(n + 1)[None, :]).ravel()
        grid = score_pairs(head, v, cap_rows[cap_idx]).reshape(len(idx), n + 1)
        pos, negs = grid[:, 0], grid[:, 1:]
        return (1 + np.sum(negs > pos[:, None], axis=1)
                + np.sum(negs == pos[:, None], axis=1)).astype(int).tolist()

    chunks = [range(s, min(s + _CHUNK, len(vocab.items)))
              for s in range(0, len(vocab.items), _CHUNK)]
    ranks = [r for part in _map_chunks(ranks_for, chunks) for r in part]
    return BenchmarkResult(benchmark=vocab.benchmark, k=n + 1, n_items=len(ranks),
                           mean_rank=float(np.mean(ranks)), ranks=ranks)


@dataclass
class RetrievalResult:
    direction: str
    n_queries: int
    recalls: dict[int, float]


def _id_ranks(ids: list[str]) -> np.ndarray:
    """Lexicographic rank of each id, for deterministic tie-breaking."""
    order = {cid: r for r, cid in enumerate(sorted(ids))}
    return np.array([order[cid] for cid in ids], dtype=np.int64)


def _positions(scores: np.ndarray, tiebreak: np.ndarray, col: int) -> np.ndarray:
    """0-based retrieval position of column `col` within each row of `scores`:
    candidates scoring higher come first, equal scores are ordered by
    ascending id."""
    s = scores[:, col][:, None]
    t = tiebreak[col]
    return (np.sum(scores > s, axis=1)
            + np.sum((scores == s) & (tiebreak[None, :] < t), axis=1))


def evaluate_retrieval(head: Head, pairs: CoarsePairs, tables, ks=RECALL_KS,
                       normalize: bool = True) -> dict[str, RetrievalResult]:
    """Recall@k for image-to-text and text-to-image over coarse pairs."""
    if not pairs.items:
        raise UsageError("coarse dataset has no pairs to evaluate")
    images, texts = tables
    image_ids = [img for img, _ in pairs.items]
    caption_ids = pairs.caption_ids()
    v_all = embedding_matrix(images, image_ids, normalize)
    t_all = embedding_matrix(texts, caption_ids, normalize)
    img_tie = _id_ranks(image_ids)
    cap_tie = _id_ranks(caption_ids)
    cap_owner = np.concatenate([np.full(len(caps), i, dtype=np.int64)
                                for i, (_, caps) in enumerate(pairs.items)])
    cap_slices = []
    offset = 0
    for _, caps in pairs.items:
        cap_slices.append(range(offset, offset + len(caps)))
        offset += len(caps)

    def i2t_hits(chunk: range) -> np.ndarray:
        s = score_batch(head, v_all[chunk.start:chunk.stop], t_all)
        counts = np.zeros(len(ks), dtype=np.int64)
        for local, img in enumerate(chunk):
            best = min(int(_positions(s[local:local + 1], cap_tie, c)[0])
                       for c in cap_slices[img])
            for ki, k in enumerate(ks):
                counts[ki] += best < k
        return counts

    def t2i_hits(chunk: range) -> np.ndarray:
        s = score_batch(head, v_all, t_all[chunk.start:chunk.stop]).T  # (chunk, n_images)
        counts = np.zeros(len(ks), dtype=np.int64)
        for local, cap in enumerate(chunk):
            pos = int(_positions(s[local:local + 1], img_tie, int(cap_owner[cap]))[0])
            for ki, k in enumerate(ks):
                counts[ki] += pos < k
        return counts

    results = {}
    for direction, fn, n_queries in (("i2t", i2t_hits, len(image_ids)),
                                     ("t2i", t2i_hits, len(caption_ids))):
        chunks = [range(s, min(s + _CHUNK, n_queries)) for s in range(0, n_queries, _CHUNK)]
        total = np.sum(_map_chunks(fn, chunks), axis=0)
        results[direction] = RetrievalResult(
            direction=direction, n_queries=n_queries,
            recalls={k: float(total[ki]) / n_queries for ki, k in enumerate(ks)})
    return results


def head_digest(head: Head) -> str:
    h = hashlib.sha256()
    h.update(f"{head.kind.value}:{head.dim}:{head.hidden}:{head.n_heads}".encode())
    for name in sorted(head.params):
        h.update(name.encode())
        h.update(head.params[name].tobytes())
    return h.hexdigest()


@dataclass
class EvalReport:
    head: str
    config_digest: str
    benchmarks: dict[str, dict]
    retrieval: dict[str, dict]
    datasets: dict[str, str]

    def to_dict(self) -> dict:
        return {"head": self.head, "config_digest": self.config_digest,
                "benchmarks": self.benchmarks, "retrieval": self.retrieval,
                "datasets": self.datasets}

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalReport":
        for key in ("head", "config_digest", "benchmarks", "retrieval", "datasets"):
            if key not in raw:
                raise UsageError(f"report is missing '{key}'")
        return cls(head=raw["head"], config_digest=raw["config_digest"],
                   benchmarks=raw["benchmarks"], retrieval=raw["retrieval"],
                   datasets=raw["datasets"])

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def build_report(head: Head, vocab_results: list[BenchmarkResult],
                 retrieval: dict[str, RetrievalResult] | None,
                 dataset_digests: dict[str, str]) -> EvalReport:
    benchmarks = {r.benchmark: {"mean_rank": r.mean_rank, "k": r.k, "n_items": r.n_items}
                  for r in vocab_results}
    ret = {}
    if retrieval:
        ret = {d: {f"r{k}": res.recalls[k] for k in sorted(res.recalls)}
               for d, res in retrieval.items()}
    return EvalReport(head=head.kind.value, config_digest=head_digest(head),
                      benchmarks=benchmarks, retrieval=ret, datasets=dict(dataset_digests))


def dataset_digests(vocab: VocabDataset | None, pairs: CoarsePairs | None,
                    tables) -> dict[str, str]:
    images, texts = tables
    out = {}
    if vocab is not None:
        out["vocab"] = vocab_digest(vocab, images, texts)
    if pairs is not None:
        out["coarse"] = coarse_digest(pairs, images, texts)
    return out


def _check_baseline(report: EvalReport, baseline: EvalReport) -> None:
    for name, digest in report.datasets.items():
        if baseline.datasets.get(name) != digest:
            raise UsageError(f"baseline report was computed on different '{name}' data")


def report_deltas(report: EvalReport, baseline: EvalReport) -> dict:
    """Differences vs a baseline computed on identical datasets."""
    _check_baseline(report, baseline)
    deltas: dict = {"benchmarks": {}, "retrieval": {}}
    for name, entry in report.benchmarks.items():
        if name in baseline.benchmarks:
            deltas["benchmarks"][name] = (entry["mean_rank"]
                                          - baseline.benchmarks[name]["mean_rank"])
    for direction, entry in report.retrieval.items():
        if direction in baseline.retrieval:
            deltas["retrieval"][direction] = {
                key: entry[key] - baseline.retrieval[direction][key]
                for key in entry if key in baseline.retrieval[direction]}
    return deltas


def emit_report(report: EvalReport, path, baseline: EvalReport | None = None,
                config: dict | None = None) -> str:
    """Write the JSON report (with deltas when a baseline is given) and
    return the rendered text table."""
    doc = report.to_dict()
    if config is not None:
        doc["config"] = config
    if report.benchmarks:
        doc["benchmark_mean"] = float(np.mean(
            [e["mean_rank"] for e in report.benchmarks.values()]))
    if baseline is not None:
        doc["deltas"] = report_deltas(report, baseline)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return render_table(report, baseline)


def _cell(value: float, baseline: float | None, decimals: int) -> str:
    text = f"{value:.{decimals}f}"
    if baseline is not None:
        text += f" ({value - baseline:+.{decimals}f})"
    return text


def render_table(report: EvalReport, baseline: EvalReport | None = None) -> str:
    """Plain-text summary; with a baseline, each cell carries its delta.

    The baseline must describe the same datasets (matching digests), so a
    delta never compares numbers from different data.
    """
    if baseline is not None:
        _check_baseline(report, baseline)
    lines = [f"head: {report.head}"]
    if report.benchmarks:
        rows = []
        for name, entry in report.benchmarks.items():
            base = None
            if baseline is not None and name in baseline.benchmarks:
                base = baseline.benchmarks[name]["mean_rank"]
            rows.append((name, str(entry["k"]), str(entry["n_items"]),
                         _cell(entry["mean_rank"], base, 2)))
        if len(report.benchmarks) >= 2:
            mean_val = float(np.mean([e["mean_rank"] for e in report.benchmarks.values()]))
            base = None
            if baseline is not None and set(report.benchmarks) <= set(baseline.benchmarks):
                base = float(np.mean([baseline.benchmarks[n]["mean_rank"]
                                      for n in report.benchmarks]))
            rows.append(("mean", "", "", _cell(mean_val, base, 2)))
        header = ("benchmark", "k", "items", "mean rank")
        widths = [max(len(r[i]) for r in rows + [header]) for i in range(4)]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    if report.retrieval:
        lines.append("")
        names = {"i2t": "image-to-text", "t2i": "text-to-image"}
        ks = sorted({int(key[1:]) for entry in report.retrieval.values() for key in entry})
        rows = []
        for direction, entry in report.retrieval.items():
            cells = [names.get(direction, direction)]
            for k in ks:
                base = None
                if baseline is not None and direction in baseline.retrieval:
                    base = baseline.retrieval[direction].get(f"r{k}")
                    base = None if base is None else 100 * base
                cells.append(_cell(100 * entry[f"r{k}"], base, 1))
            rows.append(cells)
        header = ["retrieval"] + [f"R@{k}" for k in ks]
        widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"
