"""Parsing of play logs, artist catalogs and interest tables, and construction
of per-user category proportion matrices."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

PLAYS_HEADER = ["user_id", "artist_id", "play_count"]
LEVELS = ("genre", "subgenre")


class ParseError(ValueError):
    """Malformed input file. ``line`` is 1-based and counts the header."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class PlayRecord:
    user_id: str
    artist_id: str
    play_count: int

    def __post_init__(self):
        if self.play_count < 0:
            raise ValueError(f"negative play_count {self.play_count}")


@dataclass(frozen=True)
class ArtistEntry:
    artist_id: str
    name: str
    genres: tuple[str, ...] = ()
    subgenres: tuple[str, ...] = ()

    def __post_init__(self):
        for level in LEVELS:
            labels = getattr(self, level + "s")
            if any(not isinstance(x, str) or not x.strip() for x in labels):
                raise ValueError(f"artist {self.artist_id}: empty {level} label")
            if len(set(labels)) != len(labels):
                raise ValueError(f"artist {self.artist_id}: duplicate {level} label")

    def labels(self, level: str) -> tuple[str, ...]:
        if level not in LEVELS:
            raise ValueError(f"unknown level {level!r}")
        return self.genres if level == "genre" else self.subgenres

    @property
    def classified(self) -> bool:
        return bool(self.genres)


@dataclass(frozen=True)
class FilterPolicy:
    top_k: int = 50
    min_plays_per_artist: int = 100
    drop_incomplete_users: bool = True
    # strict: play_count must exceed the threshold rather than reach it
    strict_min_plays: bool = False

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.min_plays_per_artist < 0:
            raise ValueError("min_plays_per_artist must be >= 0")

    def passes(self, play_count: int) -> bool:
        if self.strict_min_plays:
            return play_count > self.min_plays_per_artist
        return play_count >= self.min_plays_per_artist


@dataclass
class ConsumptionMatrix:
    """Row-stochastic user x category matrix."""

    users: list[str]
    categories: list[str]
    proportions: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.proportions = np.asarray(self.proportions, dtype=float)
        m, n = len(self.users), len(self.categories)
        if self.proportions.shape != (m, n):
            if not (m == 0 and self.proportions.size == 0):
                raise ValueError(
                    f"proportions shape {self.proportions.shape} != ({m}, {n})"
                )
            self.proportions = np.zeros((0, n))
        if len(set(self.users)) != m:
            raise ValueError("duplicate user ids")
        if len(set(self.categories)) != n:
            raise ValueError("duplicate category labels")

    def row(self, user_id: str) -> np.ndarray:
        return self.proportions[self.users.index(user_id)]


@dataclass(frozen=True)
class DroppedUser:
    user_id: str
    reason: str


def parse_plays(path) -> list[PlayRecord]:
    path = Path(path)
    records = []
    seen = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, "missing header")
        if [h.strip() for h in header] != PLAYS_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(PLAYS_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(path, line, f"expected 3 fields, got {len(row)}")
            user_id, artist_id, raw = (x.strip() for x in row)
            if not user_id or not artist_id:
                raise ParseError(path, line, "empty user_id or artist_id")
            try:
                count = int(raw)
            except ValueError:
                raise ParseError(path, line, f"non-integer play_count {raw!r}") from None
            if count < 0:
                raise ParseError(path, line, f"negative play_count {count}")
            if (user_id, artist_id) in seen:
                raise ParseError(path, line, f"duplicate pair ({user_id}, {artist_id})")
            seen.add((user_id, artist_id))
            records.append(PlayRecord(user_id, artist_id, count))
    return records


def _jsonl(path: Path):
    with path.open(encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, "record is not an object")
            yield lineno, obj


def parse_catalog(path) -> dict[str, ArtistEntry]:
    path = Path(path)
    catalog: dict[str, ArtistEntry] = {}
    for lineno, obj in _jsonl(path):
        try:
            artist_id = obj["artist_id"]
            genres, subgenres = obj["genres"], obj["subgenres"]
        except KeyError as exc:
            raise ParseError(path, lineno, f"missing key {exc.args[0]!r}") from None
        if not isinstance(genres, list) or not isinstance(subgenres, list):
            raise ParseError(path, lineno, "genres and subgenres must be arrays")
        if artist_id in catalog:
            raise ParseError(path, lineno, f"duplicate artist_id {artist_id!r}")
        try:
            entry = ArtistEntry(
                str(artist_id), str(obj.get("name", "")), tuple(genres), tuple(subgenres)
            )
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        catalog[entry.artist_id] = entry
    return catalog


def parse_interests(path) -> dict[str, list[tuple[str, float]]]:
    path = Path(path)
    out: dict[str, list[tuple[str, float]]] = {}
    for lineno, obj in _jsonl(path):
        user_id = obj.get("user_id")
        topics = obj.get("topics")
        if not user_id or not isinstance(topics, list):
            raise ParseError(path, lineno, "expected user_id and topics array")
        if user_id in out:
            raise ParseError(path, lineno, f"duplicate user_id {user_id!r}")
        pairs = []
        for t in topics:
            try:
                label, weight = str(t["label"]), float(t["weight"])
            except (KeyError, TypeError, ValueError):
                raise ParseError(path, lineno, "topic needs label and numeric weight") from None
            if not label.strip():
                raise ParseError(path, lineno, "empty topic label")
            if weight < 0 or not np.isfinite(weight):
                raise ParseError(path, lineno, f"invalid topic weight {weight}")
            pairs.append((label, weight))
        out[str(user_id)] = pairs
    return out


def select_top_artists(
    plays: Iterable[PlayRecord],
    policy: FilterPolicy,
    catalog: Mapping[str, ArtistEntry],
) -> tuple[dict[str, list[tuple[str, int]]], list[DroppedUser]]:
    """Keep each user's ``top_k`` qualifying artists.

    An artist qualifies when it is in the catalog with at least one genre and
    its play count passes the policy threshold. Ranking is by play count
    descending, then artist_id ascending. Returns the selection keyed by user
    (sorted user ids) and the users dropped for having fewer than ``top_k``
    qualifying artists.
    """
    per_user: dict[str, list[tuple[str, int]]] = defaultdict(list)
    users = set()
    for rec in plays:
        users.add(rec.user_id)
        entry = catalog.get(rec.artist_id)
        if entry is None or not entry.classified or not policy.passes(rec.play_count):
            continue
        per_user[rec.user_id].append((rec.artist_id, rec.play_count))

    selected: dict[str, list[tuple[str, int]]] = {}
    dropped: list[DroppedUser] = []
    for user_id in sorted(users):
        ranked = sorted(per_user.get(user_id, ()), key=lambda t: (-t[1], t[0]))
        top = ranked[: policy.top_k]
        if len(top) < policy.top_k and policy.drop_incomplete_users:
            dropped.append(
                DroppedUser(user_id, f"only-{len(top)}-of-{policy.top_k}-qualifying-artists")
            )
            continue
        if not top:
            dropped.append(DroppedUser(user_id, "no-qualifying-artists"))
            continue
        selected[user_id] = top
    return selected, dropped


def category_weights(
    selected: Mapping[str, Sequence[tuple[str, int]]],
    catalog: Mapping[str, ArtistEntry],
    level: str,
) -> dict[str, dict[str, float]]:
    """Per-user category mass: each artist's plays split equally over its labels."""
    weights: dict[str, dict[str, float]] = {}
    for user_id, artists in selected.items():
        acc: dict[str, float] = defaultdict(float)
        for artist_id, count in artists:
            labels = catalog[artist_id].labels(level)
            if not labels:
                continue
            share = count / len(labels)
            for label in labels:
                acc[label] += share
        weights[user_id] = dict(acc)
    return weights


def matrix_from_weights(
    weights: Mapping[str, Mapping[str, float]],
) -> tuple[ConsumptionMatrix, list[DroppedUser]]:
    """Normalize per-user category weights into a ConsumptionMatrix.

    Users with zero total mass are dropped; categories with zero mass across
    all users are omitted. Users keep the mapping's order, categories are
    sorted.
    """
    dropped = []
    kept = []
    for user_id, row in weights.items():
        if any(w < 0 for w in row.values()):
            raise ValueError(f"user {user_id}: negative category weight")
        if sum(row.values()) > 0:
            kept.append(user_id)
        else:
            dropped.append(DroppedUser(user_id, "no-category-mass"))
    categories = sorted({c for u in kept for c, w in weights[u].items() if w > 0})
    col = {c: j for j, c in enumerate(categories)}
    mat = np.zeros((len(kept), len(categories)))
    for i, user_id in enumerate(kept):
        for c, w in weights[user_id].items():
            if w > 0:
                mat[i, col[c]] += w
    if len(kept):
        mat /= mat.sum(axis=1, keepdims=True)
    return ConsumptionMatrix(kept, categories, mat), dropped


def build_consumption_matrix(
    selected: Mapping[str, Sequence[tuple[str, int]]],
    catalog: Mapping[str, ArtistEntry],
    level: str,
) -> tuple[ConsumptionMatrix, list[DroppedUser]]:
    cm, dropped = matrix_from_weights(category_weights(selected, catalog, level))
    dropped = [DroppedUser(d.user_id, f"unclassified-at-{level}") for d in dropped]
    return cm, dropped


def interest_matrix(
    interests: Mapping[str, Sequence[tuple[str, float]]],
) -> tuple[ConsumptionMatrix, list[DroppedUser]]:
    """Topic-share matrix for interest diversity (topics play the role of genres)."""
    weights = {}
    for user_id in sorted(interests):
        acc: dict[str, float] = defaultdict(float)
        for label, w in interests[user_id]:
            acc[label] += w
        weights[user_id] = dict(acc)
    return matrix_from_weights(weights)


def music_interest_share(
    interests: Mapping[str, Sequence[tuple[str, float]]],
) -> dict[str, float]:
    """Weighted share of each user's topics whose label mentions "music"."""
    out = {}
    for user_id, topics in interests.items():
        total = 0.0
        music = 0.0
        for label, weight in topics:
            if weight < 0:
                raise ValueError(f"user {user_id}: negative weight for topic {label!r}")
            total += weight
            if "music" in label.casefold():
                music += weight
        if total <= 0:
            raise ValueError(f"user {user_id}: all topic weights are zero")
        out[user_id] = music / total
    return out


def write_dropped(path, dropped: Iterable[DroppedUser]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "reason"])
        for d in dropped:
            w.writerow([d.user_id, d.reason])
