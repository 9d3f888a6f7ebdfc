"""ABX discriminability: item files, angle distance, DTW alignment, and
within/across-speaker triphone scoring."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ._kernels import dtw_core
from .errors import AbxError, ItemFileError
from .featio import read_features, segment_frames

HALF_PI = math.pi / 2.0


@dataclass(frozen=True)
class ItemRecord:
    """One scored segment: a triphone span inside an utterance."""

    file_id: str
    onset: float
    offset: float
    center: str
    prev: str
    next: str
    speaker: str


def load_items(path) -> list[ItemRecord]:
    """Parse an item file: header line, then
    ``file onset offset center-phone prev-phone next-phone speaker`` rows."""
    lines = Path(path).read_text().splitlines()
    records = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if lineno == 1 and stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 7:
            raise ItemFileError(f"{path}:{lineno}: expected 7 fields, got {len(fields)}")
        file_id, onset_s, offset_s, center, prev, nxt, speaker = fields
        try:
            onset, offset = float(onset_s), float(offset_s)
        except ValueError as exc:
            raise ItemFileError(f"{path}:{lineno}: bad onset/offset: {exc}") from exc
        if not onset < offset:
            raise ItemFileError(f"{path}:{lineno}: onset {onset} must precede offset {offset}")
        records.append(ItemRecord(file_id, onset, offset, center, prev, nxt, speaker))
    return records


def frame_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Angle between two frames: arccos of the clipped cosine similarity.

    Computed through the chord form 2*arcsin(|u^ - v^| / 2) of the same
    quantity, which is exact at zero angle (identical frames give exactly
    0.0, so aligned self-distances vanish).  A zero vector is treated as
    orthogonal to everything (pi/2) so silent frames cannot produce NaNs.
    """
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return HALF_PI
    chord = float(np.linalg.norm(u / nu - v / nv))
    return 2.0 * math.asin(min(1.0, chord / 2.0))


def _angle_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    x_hat = np.divide(x, nx[:, None], out=np.zeros_like(x), where=nx[:, None] > 0)
    y_hat = np.divide(y, ny[:, None], out=np.zeros_like(y), where=ny[:, None] > 0)
    chord = np.linalg.norm(x_hat[:, None, :] - y_hat[None, :, :], axis=-1)
    angles = 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
    zero = (nx[:, None] == 0.0) | (ny[None, :] == 0.0)
    if zero.any():
        angles = np.where(zero, HALF_PI, angles)
    return angles


def dtw_distance(x: np.ndarray, y: np.ndarray, normalize: str = "path") -> float:
    """DTW-realigned average frame angle between two feature sequences.

    ``normalize`` chooses the denominator: the optimal path length
    (default) or max(len(x), len(y)).
    """
    x = np.atleast_2d(np.asarray(x))
    y = np.atleast_2d(np.asarray(y))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise AbxError("dtw_distance of an empty sequence")
    if normalize not in ("path", "max_len"):
        raise ValueError(f"normalize must be 'path' or 'max_len', got {normalize!r}")
    total, path_len = dtw_core(_angle_matrix(x, y))
    if normalize == "path":
        return float(total / path_len)
    return float(total / max(x.shape[0], y.shape[0]))


@dataclass(frozen=True)
class CellScore:
    """Average triple score inside one (phone pair, context, speaker cell)."""

    phone_pair: tuple[str, str]
    context: tuple[str, str]
    speakers: tuple[str, ...]
    score: float
    n_triples: int


@dataclass(frozen=True)
class AbxReport:
    mode: str
    error_rate: float
    n_triples: int
    cells: tuple[CellScore, ...]

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "error_rate": self.error_rate,
            "n_triples": self.n_triples,
            "cells": [
                {
                    "phone_pair": list(c.phone_pair),
                    "context": list(c.context),
                    "speakers": list(c.speakers),
                    "score": c.score,
                    "n_triples": c.n_triples,
                }
                for c in self.cells
            ],
        }


def _collect_triples(records: Sequence[ItemRecord], mode: str):
    """Group triple index sets by (phone pair, context, speaker cell).

    A triple is (a, b, x): a and x share the full triphone, b shares the
    context with a different center.  Within mode keeps one speaker and
    requires a != x; across mode draws A and B from one speaker and X from
    another.  Both pair directions pool into the same unordered-pair cell.
    """
    classes: dict[tuple, list[int]] = {}
    for idx, rec in enumerate(records):
        classes.setdefault((rec.speaker, rec.prev, rec.next, rec.center), []).append(idx)

    cells: dict[tuple, list[tuple[int, int, int]]] = {}
    if mode == "within":
        by_group: dict[tuple, dict[str, list[int]]] = {}
        for (spk, prev, nxt, center), idxs in classes.items():
            by_group.setdefault((spk, prev, nxt), {})[center] = idxs
        for (spk, prev, nxt), centers in by_group.items():
            for c1, c2 in combinations(sorted(centers), 2):
                triples = []
                for first, second in ((c1, c2), (c2, c1)):
                    for a in centers[first]:
                        for x in centers[first]:
                            if a == x:
                                continue
                            for b in centers[second]:
                                triples.append((a, b, x))
                if triples:
                    pair = (c1, c2)
                    cells.setdefault((pair, (prev, nxt), (spk,)), []).extend(triples)
    elif mode == "across":
        by_context: dict[tuple, dict[tuple, list[int]]] = {}
        for (spk, prev, nxt, center), idxs in classes.items():
            by_context.setdefault((prev, nxt), {})[(spk, center)] = idxs
        for (prev, nxt), spk_centers in by_context.items():
            speakers = sorted({spk for spk, _ in spk_centers})
            centers = sorted({c for _, c in spk_centers})
            for s_ab in speakers:
                for s_x in speakers:
                    if s_ab == s_x:
                        continue
                    for c1, c2 in combinations(centers, 2):
                        triples = []
                        for first, second in ((c1, c2), (c2, c1)):
                            a_pool = spk_centers.get((s_ab, first), [])
                            b_pool = spk_centers.get((s_ab, second), [])
                            x_pool = spk_centers.get((s_x, first), [])
                            for a in a_pool:
                                for b in b_pool:
                                    for x in x_pool:
                                        triples.append((a, b, x))
                        if triples:
                            pair = (c1, c2)
                            cells.setdefault((pair, (prev, nxt), (s_ab, s_x)), []).extend(triples)
    else:
        raise ValueError(f"mode must be 'within' or 'across', got {mode!r}")
    return cells


def abx_score(
    segment_features: Sequence[np.ndarray],
    records: Sequence[ItemRecord],
    mode: str,
    normalize: str = "path",
    threads: int = 1,
) -> AbxReport:
    """Score every valid triple and aggregate the hierarchy of averages.

    Triple credit: 1 if d(X, A) < d(X, B), 0.5 on ties, else 0.  Scores are
    averaged within each (phone pair, context, speaker cell), then across
    contexts, speaker cells, and phone pairs; error = 1 - final score.
    Sums use math.fsum so the merge is exact regardless of grouping order.
    """
    if len(segment_features) != len(records):
        raise AbxError(
            f"{len(segment_features)} feature sets for {len(records)} records"
        )
    cells = _collect_triples(records, mode)
    if not cells:
        raise AbxError(f"no valid {mode}-speaker triples in the item set")

    needed: set[tuple[int, int]] = set()
    for triples in cells.values():
        for a, b, x in triples:
            needed.add((min(x, a), max(x, a)))
            needed.add((min(x, b), max(x, b)))
    pair_list = sorted(needed)

    def distance(pair: tuple[int, int]) -> float:
        i, j = pair
        return dtw_distance(segment_features[i], segment_features[j], normalize)

    if threads > 1 and len(pair_list) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(distance, pair_list))
    else:
        values = [distance(p) for p in pair_list]
    dist = dict(zip(pair_list, values))

    cell_scores: list[CellScore] = []
    for (pair, context, speakers), triples in sorted(cells.items()):
        credits = []
        for a, b, x in triples:
            da = dist[(min(x, a), max(x, a))]
            db = dist[(min(x, b), max(x, b))]
            credits.append(1.0 if da < db else (0.5 if da == db else 0.0))
        cell_scores.append(
            CellScore(pair, context, speakers, math.fsum(credits) / len(credits), len(credits))
        )

    by_pair_speaker: dict[tuple, list[float]] = {}
    for cell in cell_scores:
        by_pair_speaker.setdefault((cell.phone_pair, cell.speakers), []).append(cell.score)
    by_pair: dict[tuple, list[float]] = {}
    for (pair, _speakers), scores in sorted(by_pair_speaker.items()):
        by_pair.setdefault(pair, []).append(math.fsum(scores) / len(scores))
    pair_scores = [math.fsum(scores) / len(scores) for _, scores in sorted(by_pair.items())]
    final_score = math.fsum(pair_scores) / len(pair_scores)

    return AbxReport(
        mode=mode,
        error_rate=1.0 - final_score,
        n_triples=sum(c.n_triples for c in cell_scores),
        cells=tuple(cell_scores),
    )


def score_item_file(
    features_dir,
    items_path,
    mode: str,
    normalize: str = "path",
    threads: int = 1,
    level: Optional[str] = None,
) -> AbxReport:
    """Slice per-utterance feature files into item segments and score them."""
    records = load_items(items_path)
    if not records:
        raise AbxError(f"{items_path}: no records to score")
    features: Mapping[str, object] = {}
    segments = []
    for rec in records:
        if rec.file_id not in features:
            features[rec.file_id] = read_features(features_dir, rec.file_id)
        segments.append(segment_frames(features[rec.file_id], rec.onset, rec.offset))
    return abx_score(segments, records, mode, normalize=normalize, threads=threads)


def write_report_json(report: AbxReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")


def write_report_csv(report: AbxReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["phone_a", "phone_b", "prev", "next", "speakers", "score", "n_triples"]
        )
        for cell in report.cells:
            writer.writerow(
                [
                    cell.phone_pair[0],
                    cell.phone_pair[1],
                    cell.context[0],
                    cell.context[1],
                    "|".join(cell.speakers),
                    f"{cell.score:.12f}",
                    cell.n_triples,
                ]
            )
        writer.writerow(["TOTAL", "", "", "", "", f"{1.0 - report.error_rate:.12f}", report.n_triples])
