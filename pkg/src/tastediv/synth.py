"""Deterministic synthetic corpus covering every pipeline input.

``python -m tastediv.synth OUTDIR`` writes plays, catalog, pings, ZIP and
census tables, interests, profiles, ratings and a ``tastediv.cfg`` that
points at them. The bundled fixture under ``tastediv/fixtures`` was made
this way with the defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .divcore import cosine_distance_matrix, diversity_batch
from .geo import RACE_GROUPS
from .ingest import FilterPolicy, PlayRecord, ArtistEntry, build_consumption_matrix, select_top_artists

GENRES = {
    "blues": ["chicago blues", "delta blues", "electric blues"],
    "classical": ["baroque", "opera", "romantic"],
    "country": ["bluegrass", "honky tonk", "outlaw country"],
    "electronic": ["house", "techno", "trance"],
    "folk": ["american folk", "contemporary folk", "traditional folk"],
    "jazz": ["bebop", "cool jazz", "fusion"],
    "latin": ["bossa nova", "salsa", "tango"],
    "pop/rock": ["alternative", "heavy metal", "indie rock", "punk"],
    "r&b": ["funk", "neo-soul", "soul"],
    "rap": ["east coast rap", "southern rap", "west coast rap"],
}
TOPICS = [
    "music", "indie music", "music festivals", "musicians", "politics", "technology",
    "sports", "science", "movies", "photography", "food", "travel", "fashion", "gaming",
    "economics", "literature", "art", "health", "news", "comedy",
]
PROFILE_COLUMNS = [
    "age", "gender", "news_reader", "event_attendance", "loved_tracks", "days_registered",
    "lastfm_friends", "twitter_friends", "timezone_diversity",
]


def make_catalog(rng: np.random.Generator, n_artists: int = 400) -> dict[str, ArtistEntry]:
    names = sorted(GENRES)
    catalog = {}
    for i in range(n_artists):
        aid = f"ar{i:04d}"
        if rng.random() < 0.03:
            catalog[aid] = ArtistEntry(aid, f"Artist {i}", (), ())
            continue
        primary = names[int(rng.integers(len(names)))]
        genres = [primary]
        if rng.random() < 0.25:
            other = names[int(rng.integers(len(names)))]
            if other != primary:
                genres.append(other)
        subs = list(rng.choice(GENRES[primary], size=int(rng.integers(1, 3)), replace=False))
        if len(genres) > 1:
            subs.append(str(rng.choice(GENRES[genres[1]])))
        catalog[aid] = ArtistEntry(aid, f"Artist {i}", tuple(genres), tuple(dict.fromkeys(subs)))
    return catalog


def make_plays(
    rng: np.random.Generator,
    catalog: dict[str, ArtistEntry],
    n_users: int,
    incomplete_every: int = 0,
) -> list[PlayRecord]:
    """Users favor a few genres; some are given too few qualifying artists."""
    names = sorted(GENRES)
    by_genre = {g: [a for a, e in catalog.items() if e.genres and e.genres[0] == g] for g in names}
    unclassified = [a for a, e in catalog.items() if not e.genres]
    plays = []
    for u in range(n_users):
        uid = f"user{u:03d}"
        k = int(rng.integers(1, 6))
        favored = list(rng.choice(names, size=k, replace=False))
        weights = rng.dirichlet(np.full(k, 1.0))
        pool = sorted({a for g in favored for a in by_genre[g]})
        if len(pool) < 60:
            extra = [g for g in names if g not in favored]
            favored.append(extra[int(rng.integers(len(extra)))])
            weights = np.append(weights * 0.9, 0.1)
            k += 1
            pool = sorted({a for g in favored for a in by_genre[g]})
        chosen: set[str] = set()
        while len(chosen) < min(60, len(pool)):
            g = favored[int(rng.choice(k, p=weights))]
            chosen.add(str(rng.choice(by_genre[g])))
        if unclassified and rng.random() < 0.3:
            chosen.add(str(rng.choice(unclassified)))
        short = incomplete_every and u % incomplete_every == incomplete_every - 1
        for i, aid in enumerate(sorted(chosen)):
            count = int(100 + rng.lognormal(5.0, 1.0))
            if short and i % 3 == 0:
                count = int(rng.integers(1, 100))
            plays.append(PlayRecord(uid, aid, count))
    return plays


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _zip_tables(rng: np.random.Generator, n_zips: int = 30, n_fips: int = 8):
    zips = []
    for i in range(n_zips):
        lat = round(float(rng.uniform(30.0, 46.0)), 4)
        lon = round(float(rng.uniform(-120.0, -72.0)), 4)
        zips.append((f"{10000 + 317 * i:05d}", lat, lon, f"{36001 + 2 * (i % n_fips):05d}"))
    census = []
    for i, (z, *_rest) in enumerate(zips):
        if i in (7, 19):  # deliberately absent from the census table
            continue
        race = rng.dirichlet([6, 1.5, 0.2, 1, 1.5, 0.1, 0.4, 0.3])
        race = np.round(race, 4)
        race[0] += round(1.0 - race.sum(), 4)
        census.append(
            [z, int(rng.integers(25000, 150000)), round(float(rng.uniform(10, 80)), 1)]
            + [f"{v:.4f}" for v in race]
        )
    fips = sorted({z[3] for z in zips})
    urban = [(f, 1 + i % 6) for i, f in enumerate(fips)]
    return zips, census, urban


def _pings(rng: np.random.Generator, users: list[str], zips):
    t0 = datetime(2014, 1, 6, tzinfo=timezone.utc)
    rows = []
    for idx, uid in enumerate(users):
        home, work = rng.choice(len(zips), size=2, replace=False)
        offset = int(rng.choice([-300, -360, -420, -480]))
        kind = idx % 12
        if kind == 5:  # too few pings
            plan = [(home, True, int(d)) for d in rng.integers(0, 30, size=9)]
        elif kind == 9:  # traveler: days at one place, nights elsewhere briefly
            plan = [(work, False, int(d)) for d in rng.integers(0, 30, size=14)]
            plan += [(home, True, int(d)) for d in rng.integers(0, 3, size=4)]
        else:
            n_night = int(rng.integers(8, 16))
            plan = [(home, True, int(d)) for d in rng.integers(0, 40, size=n_night)]
            plan += [(home, False, int(d)) for d in rng.integers(0, 40, size=4)]
            plan += [(work, False, int(d)) for d in rng.integers(0, 40, size=int(rng.integers(3, 8)))]
        for z, night, day in plan:
            local_hour = int(rng.choice([22, 23, 0, 1, 2, 3, 4])) if night else int(rng.integers(8, 20))
            local = t0 + timedelta(days=day, hours=local_hour, minutes=int(rng.integers(0, 60)))
            utc = local - timedelta(minutes=offset)
            lat = zips[z][1] + float(rng.normal(0, 0.02))
            lon = zips[z][2] + float(rng.normal(0, 0.02))
            rows.append([uid, utc.strftime("%Y-%m-%dT%H:%M:%SZ"), offset, f"{lat:.5f}", f"{lon:.5f}"])
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def _interests(rng: np.random.Generator, users: list[str]):
    out = []
    for idx, uid in enumerate(users):
        if idx % 31 == 30:
            continue
        k = int(rng.integers(2, 9))
        labels = rng.choice(TOPICS, size=k, replace=False)
        topics = [{"label": str(t), "weight": int(rng.integers(1, 20))} for t in labels]
        out.append({"user_id": uid, "topics": topics})
    return out


def _profiles(rng: np.random.Generator, users: list[str]):
    rows = []
    for idx, uid in enumerate(users):
        row = [
            int(rng.integers(18, 53)),
            int(rng.random() < 0.6),
            int(rng.random() < 0.2),
            int(rng.poisson(40)),
            int(rng.lognormal(5, 1.2)),
            int(rng.integers(30, 4300)),
            int(rng.poisson(25)),
            int(rng.lognormal(5.5, 1)),
            int(rng.integers(1, 32)),
        ]
        if idx % 29 == 3:
            row[0] = ""
        if idx % 37 == 11:
            row[1] = ""
        if idx % 41 == 17:
            row[7] = ""
        rows.append([uid, *row])
    return rows


def _ratings(rng: np.random.Generator, catalog, plays, n_subjects: int = 25):
    selected, _ = select_top_artists(plays, FilterPolicy(), catalog)
    cm, _ = build_consumption_matrix(selected, catalog, "genre")
    reports = diversity_batch(cm, cosine_distance_matrix(cm))
    picks = sorted(rng.choice(len(reports), size=min(n_subjects, len(reports)), replace=False))
    top = max(r.rao_stirling for r in reports) or 1.0
    rows = []
    for i in picks:
        r = reports[i]
        base = 5.0 * r.rao_stirling / top
        scores = [int(np.clip(round(base + rng.normal(0, s)), 0, 5)) for s in (0.4, 0.7, 1.0)]
        rows.append([r.user_id, *scores])
    return rows


CONFIG = """\
# synthetic 100-user corpus
plays = plays.csv
catalog = catalog.jsonl
pings = pings.csv
zips = zips.csv
census = census.csv
urbanness = urbanness.csv
interests = interests.jsonl
profiles = profiles.csv
ratings = ratings.csv
level = both
seed = {seed}
"""


def write_corpus(out_dir, n_users: int = 100, seed: int = 2015) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    catalog = make_catalog(rng)
    plays = make_plays(rng, catalog, n_users, incomplete_every=17)
    users = sorted({p.user_id for p in plays})

    with (out / "catalog.jsonl").open("w", encoding="utf-8") as fh:
        for e in catalog.values():
            rec = {"artist_id": e.artist_id, "name": e.name, "genres": list(e.genres), "subgenres": list(e.subgenres)}
            fh.write(json.dumps(rec) + "\n")
    _write_csv(out / "plays.csv", ["user_id", "artist_id", "play_count"],
               [[p.user_id, p.artist_id, p.play_count] for p in plays])

    zips, census, urban = _zip_tables(rng)
    _write_csv(out / "zips.csv", ["zip", "centroid_lat", "centroid_lon", "fips"], zips)
    _write_csv(out / "census.csv",
               ["zip", "median_household_income", "pct_bachelor"] + ["p_" + g for g in RACE_GROUPS], census)
    _write_csv(out / "urbanness.csv", ["fips", "urbanness"], urban)
    _write_csv(out / "pings.csv", ["user_id", "timestamp_iso8601", "utc_offset_minutes", "lat", "lon"],
               _pings(rng, users, zips))

    with (out / "interests.jsonl").open("w", encoding="utf-8") as fh:
        for rec in _interests(rng, users):
            fh.write(json.dumps(rec) + "\n")
    _write_csv(out / "profiles.csv", ["user_id", *PROFILE_COLUMNS], _profiles(rng, users))
    _write_csv(out / "ratings.csv", ["subject_id", "expert", "fan", "casual"], _ratings(rng, catalog, plays))
    (out / "tastediv.cfg").write_text(CONFIG.format(seed=seed), encoding="utf-8")
    return out / "tastediv.cfg"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m tastediv.synth", description=__doc__.splitlines()[0])
    parser.add_argument("out_dir")
    parser.add_argument("--users", type=int, default=100)
    parser.add_argument("--seed", type=int, default=2015)
    args = parser.parse_args(argv)
    print(write_corpus(args.out_dir, args.users, args.seed))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
