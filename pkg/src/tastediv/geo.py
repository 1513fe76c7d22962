"""Home-location inference from geotagged pings and census enrichment.

Pings are reverse geocoded to the nearest ZIP centroid, three candidate sets
are built (overall plurality, night-time plurality, long-span ZIPs) and the
home is their intersection.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import AbstractSet as Set
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

EARTH_RADIUS_KM = 6371.0088
RACE_GROUPS = (
    "white",
    "black",
    "native",
    "asian",
    "hispanic",
    "pacific",
    "two_or_more",
    "other",
)
PINGS_HEADER = ["user_id", "timestamp_iso8601", "utc_offset_minutes", "lat", "lon"]
ZIPS_HEADER = ["zip", "centroid_lat", "centroid_lon", "fips"]
CENSUS_HEADER = ["zip", "median_household_income", "pct_bachelor"] + [
    "p_" + g for g in RACE_GROUPS
]
URBANNESS_HEADER = ["fips", "urbanness"]
HOMES_HEADER = [
    "user_id",
    "zip",
    "fips",
    "resolved",
    "reason",
    "plurality_set",
    "night_set",
    "ndays_set",
]


@dataclass(frozen=True)
class GeoPing:
    user_id: str
    timestamp: datetime
    utc_offset_minutes: Optional[int]
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of range")
        if self.timestamp.tzinfo is None:
            object.__setattr__(self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc))

    def local_time(self, default_offset_minutes: int = 0) -> datetime:
        offset = self.utc_offset_minutes
        if offset is None:
            offset = default_offset_minutes
        utc = self.timestamp.astimezone(timezone.utc).replace(tzinfo=None)
        return utc + timedelta(minutes=offset)


@dataclass(frozen=True)
class ZipRecord:
    zip: str
    centroid_lat: float
    centroid_lon: float
    fips: str


class Located(NamedTuple):
    """A ping together with the ZIP it was geocoded to."""

    ping: GeoPing
    zip: str


@dataclass(frozen=True)
class HomeLocation:
    user_id: str
    zip: Optional[str]
    fips: Optional[str]
    plurality: frozenset = frozenset()
    night: frozenset = frozenset()
    n_days: frozenset = frozenset()
    resolved: bool = False
    reason: str = ""


@dataclass(frozen=True)
class CensusRow:
    """One row of the census lookup table."""

    zip: str
    median_household_income: float
    pct_bachelor: float
    race_proportions: dict = field(hash=False)


@dataclass(frozen=True)
class CensusRecord:
    user_id: str
    zip: str
    fips: str
    median_household_income: float
    pct_bachelor: float
    race_proportions: dict = field(hash=False)
    urbanness: int

    @property
    def racial_diversity(self) -> float:
        return simple_racial_diversity(self.race_proportions["white"])

    @property
    def ethnic_diversity_index(self) -> float:
        return racial_diversity_index(self.race_proportions)


@dataclass(frozen=True)
class Exclusion:
    user_id: str
    reason: str


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; broadcasts over numpy arrays."""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = (
        np.sin((lat2 - lat1) / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


class ZipTable:
    """Immutable nearest-centroid lookup over ZIP records."""

    def __init__(self, records: Iterable[ZipRecord]):
        recs = sorted(records, key=lambda r: r.zip)
        if not recs:
            raise ValueError("empty ZIP lookup table")
        zips = [r.zip for r in recs]
        if len(set(zips)) != len(zips):
            raise ValueError("duplicate zip in lookup table")
        self.records = {r.zip: r for r in recs}
        self._zips = zips
        self._lat = np.array([r.centroid_lat for r in recs])
        self._lon = np.array([r.centroid_lon for r in recs])

    def __len__(self):
        return len(self._zips)

    def fips(self, zip_code: str) -> Optional[str]:
        rec = self.records.get(zip_code)
        return rec.fips if rec else None

    def nearest(self, lat: float, lon: float, max_km: float = 30.0) -> Optional[str]:
        dist = haversine_km(lat, lon, self._lat, self._lon)
        best = float(dist.min())
        if best > max_km:
            return None
        # zips are sorted, so the first minimum is the lexicographically smallest
        return self._zips[int(np.flatnonzero(dist <= best + 1e-9)[0])]


def _as_table(zips) -> ZipTable:
    return zips if isinstance(zips, ZipTable) else ZipTable(zips)


def reverse_geocode(
    ping: GeoPing, zips: Union[ZipTable, Sequence[ZipRecord]], max_km: float = 30.0
) -> Optional[str]:
    return _as_table(zips).nearest(ping.lat, ping.lon, max_km)


def _modes(zips: Iterable[str]) -> set[str]:
    counts = Counter(zips)
    if not counts:
        return set()
    top = max(counts.values())
    return {z for z, c in counts.items() if c == top}


def plurality_zips(located: Iterable[Located]) -> set[str]:
    return _modes(loc.zip for loc in located)


def in_night_window(local: datetime, start_hour: int = 22, end_hour: int = 6) -> bool:
    """Half-open window [start, end) that may wrap past midnight."""
    minutes = local.hour * 60 + local.minute + local.second / 60.0 + local.microsecond / 6e7
    start, end = start_hour * 60, end_hour * 60
    if start <= end:
        return start <= minutes < end
    return minutes >= start or minutes < end


def night_plurality_zips(
    located: Iterable[Located],
    default_offset_minutes: int = 0,
    start_hour: int = 22,
    end_hour: int = 6,
) -> set[str]:
    return _modes(
        loc.zip
        for loc in located
        if in_night_window(loc.ping.local_time(default_offset_minutes), start_hour, end_hour)
    )


def n_days_zips(
    located: Iterable[Located],
    min_days: float = 10.0,
    distinct_days: bool = False,
    default_offset_minutes: int = 0,
) -> set[str]:
    """ZIPs the user posted from over at least ``min_days`` days.

    By default this is the span between the first and last ping in the ZIP.
    With ``distinct_days`` it is the number of distinct local calendar days.
    """
    by_zip: dict[str, list[GeoPing]] = defaultdict(list)
    for loc in located:
        by_zip[loc.zip].append(loc.ping)
    out = set()
    for z, pings in by_zip.items():
        if distinct_days:
            days = len({p.local_time(default_offset_minutes).date() for p in pings})
        else:
            stamps = [p.timestamp for p in pings]
            days = (max(stamps) - min(stamps)).total_seconds() / 86400.0
        if days >= min_days:
            out.add(z)
    return out


def geocode_pings(
    pings: Iterable[GeoPing], zips: Union[ZipTable, Sequence[ZipRecord]], max_km: float = 30.0
) -> list[Located]:
    table = _as_table(zips)
    out = []
    for p in pings:
        z = table.nearest(p.lat, p.lon, max_km)
        if z is not None:
            out.append(Located(p, z))
    return out


def resolve_home(
    user_id: str,
    pings: Sequence[GeoPing],
    zips: Union[ZipTable, Sequence[ZipRecord]],
    *,
    max_km: float = 30.0,
    min_pings: int = 10,
    min_days: float = 10.0,
    distinct_days: bool = False,
    default_offset_minutes: int = 0,
    night_start_hour: int = 22,
    night_end_hour: int = 6,
) -> HomeLocation:
    """Intersect the three candidate ZIP sets into a single home ZIP.

    A multi-ZIP intersection is broken by the user's total ping count per
    ZIP, then by ZIP string. ``reason`` records how the outcome was reached.
    """
    table = _as_table(zips)
    located = geocode_pings(pings, table, max_km)
    if len(located) < min_pings:
        return HomeLocation(user_id, None, None, reason="too-few-pings")

    plural = frozenset(plurality_zips(located))
    night = frozenset(
        night_plurality_zips(located, default_offset_minutes, night_start_hour, night_end_hour)
    )
    ndays = frozenset(n_days_zips(located, min_days, distinct_days, default_offset_minutes))
    home, reason = choose_home(plural, night, ndays, Counter(loc.zip for loc in located))
    if home is None:
        return HomeLocation(user_id, None, None, plural, night, ndays, False, reason)
    return HomeLocation(user_id, home, table.fips(home), plural, night, ndays, True, reason)


def infer_homes(pings: Iterable[GeoPing], zips, **options) -> list[HomeLocation]:
    """Run :func:`resolve_home` for every user, in user_id order."""
    table = _as_table(zips)
    by_user: dict[str, list[GeoPing]] = defaultdict(list)
    for p in pings:
        by_user[p.user_id].append(p)
    return [resolve_home(u, by_user[u], table, **options) for u in sorted(by_user)]


def choose_home(
    plurality: Set[str], night: Set[str], n_days: Set[str], counts: Mapping[str, int]
) -> tuple[Optional[str], str]:
    """Pick one ZIP from the intersection of the three candidate sets.

    Several survivors are ranked by ping count, then by ZIP string.
    """
    common = set(plurality) & set(night) & set(n_days)
    if not common:
        return None, "empty-intersection"
    if len(common) == 1:
        return next(iter(common)), "intersection"
    ranked = sorted(common, key=lambda z: (-counts.get(z, 0), z))
    if counts.get(ranked[0], 0) == counts.get(ranked[1], 0):
        return ranked[0], "tie-break-lexicographic"
    return ranked[0], "tie-break-ping-count"


def racial_diversity_index(race_proportions: Mapping[str, float]) -> float:
    """One minus the sum of squared group proportions."""
    values = np.array(list(race_proportions.values()), dtype=float)
    if ((values < 0) | (values > 1)).any():
        raise ValueError("race proportions must lie in [0, 1]")
    if abs(values.sum() - 1.0) > 0.01:
        raise ValueError(f"race proportions sum to {values.sum():.4f}, expected 1")
    return float(1.0 - (values**2).sum())


def simple_racial_diversity(white_fraction: float) -> float:
    if not 0.0 <= white_fraction <= 1.0:
        raise ValueError(f"white fraction {white_fraction} out of [0, 1]")
    return 1.0 - white_fraction


def join_census(
    home: HomeLocation,
    census: Mapping[str, CensusRow],
    urbanness: Mapping[str, int],
) -> Union[CensusRecord, Exclusion]:
    if not home.resolved or home.zip is None:
        return Exclusion(home.user_id, "no-home")
    row = census.get(home.zip)
    if row is None:
        return Exclusion(home.user_id, "zip-not-in-census")
    if home.fips is None or home.fips not in urbanness:
        return Exclusion(home.user_id, "fips-not-in-urbanness")
    return CensusRecord(
        home.user_id,
        home.zip,
        home.fips,
        row.median_household_income,
        row.pct_bachelor,
        dict(row.race_proportions),
        urbanness[home.fips],
    )


# --- file formats -----------------------------------------------------------


def _reader(path: Path, header: list[str]):
    fh = path.open(newline="", encoding="utf-8")
    reader = csv.reader(fh)
    first = next(reader, None)
    if first is None or [h.strip() for h in first] != header:
        fh.close()
        raise ValueError(f"{path}: expected header {','.join(header)}")
    return fh, reader


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_pings(path) -> list[GeoPing]:
    path = Path(path)
    fh, reader = _reader(path, PINGS_HEADER)
    out = []
    with fh:
        for row in reader:
            if not row:
                continue
            try:
                user_id, ts, offset, lat, lon = (x.strip() for x in row)
                out.append(
                    GeoPing(
                        user_id,
                        parse_timestamp(ts),
                        int(offset) if offset else None,
                        float(lat),
                        float(lon),
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{reader.line_num}: {exc}") from None
    return out


def parse_zips(path) -> ZipTable:
    path = Path(path)
    fh, reader = _reader(path, ZIPS_HEADER)
    recs = []
    with fh:
        for row in reader:
            if not row:
                continue
            try:
                z, lat, lon, fips = (x.strip() for x in row)
                recs.append(ZipRecord(z, float(lat), float(lon), fips))
            except ValueError as exc:
                raise ValueError(f"{path}:{reader.line_num}: {exc}") from None
    return ZipTable(recs)


def parse_census(path) -> dict[str, CensusRow]:
    path = Path(path)
    fh, reader = _reader(path, CENSUS_HEADER)
    out = {}
    with fh:
        for row in reader:
            if not row:
                continue
            try:
                if len(row) != len(CENSUS_HEADER):
                    raise ValueError(f"expected {len(CENSUS_HEADER)} fields")
                z = row[0].strip()
                race = {g: float(v) for g, v in zip(RACE_GROUPS, row[3:])}
                racial_diversity_index(race)
                if z in out:
                    raise ValueError(f"duplicate zip {z}")
                out[z] = CensusRow(z, float(row[1]), float(row[2]), race)
            except ValueError as exc:
                raise ValueError(f"{path}:{reader.line_num}: {exc}") from None
    return out


def parse_urbanness(path) -> dict[str, int]:
    path = Path(path)
    fh, reader = _reader(path, URBANNESS_HEADER)
    out = {}
    with fh:
        for row in reader:
            if not row:
                continue
            fips, level = row[0].strip(), int(row[1])
            if not 1 <= level <= 6:
                raise ValueError(f"{path}:{reader.line_num}: urbanness {level} not in 1..6")
            out[fips] = level
    return out


def write_homes(path, homes: Iterable[HomeLocation]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HOMES_HEADER)
        for h in homes:
            w.writerow(
                [
                    h.user_id,
                    h.zip or "",
                    h.fips or "",
                    "true" if h.resolved else "false",
                    h.reason,
                    ";".join(sorted(h.plurality)),
                    ";".join(sorted(h.night)),
                    ";".join(sorted(h.n_days)),
                ]
            )


def read_homes(path) -> list[HomeLocation]:
    def zset(text):
        return frozenset(z for z in text.split(";") if z)

    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                HomeLocation(
                    row["user_id"],
                    row["zip"] or None,
                    row["fips"] or None,
                    zset(row["plurality_set"]),
                    zset(row["night_set"]),
                    zset(row["ndays_set"]),
                    row["resolved"] == "true",
                    row["reason"],
                )
            )
    return out
