"""``tastediv`` command line: runs the pipeline from input files to reports.

Settings come from a flat ``key = value`` file (``--config``) and are
overridden by command-line flags. Relative paths in the file are resolved
against the file's directory. Exit status: 0 success, 1 computation error,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import divcore, geo, ingest, stats
from .svg import write_scatter

log = logging.getLogger("tastediv")

INPUT_KEYS = ("plays", "catalog", "pings", "zips", "census", "urbanness", "interests", "ratings", "profiles")
LEVEL_CHOICES = ("genre", "subgenre", "both")
PROFILE_KINDS = {
    "age": stats.CONTINUOUS,
    "gender": stats.FACTOR,
    "news_reader": stats.FACTOR,
    "event_attendance": stats.CONTINUOUS,
    "loved_tracks": stats.CONTINUOUS,
    "days_registered": stats.CONTINUOUS,
    "lastfm_friends": stats.CONTINUOUS,
    "twitter_friends": stats.CONTINUOUS,
    "timezone_diversity": stats.CONTINUOUS,
}
FEATURE_COLUMNS = [
    ("income", stats.CONTINUOUS),
    ("education", stats.CONTINUOUS),
    ("racial_diversity", stats.CONTINUOUS),
    ("news_reader", stats.FACTOR),
    ("urbanness", stats.CONTINUOUS),
    ("age", stats.CONTINUOUS),
    ("gender", stats.FACTOR),
    ("event_attendance", stats.CONTINUOUS),
    ("loved_tracks", stats.CONTINUOUS),
    ("days_registered", stats.CONTINUOUS),
    ("lastfm_friends", stats.CONTINUOUS),
    ("music_interest", stats.CONTINUOUS),
    ("twitter_friends", stats.CONTINUOUS),
    ("timezone_diversity", stats.CONTINUOUS),
    ("interest_diversity", stats.CONTINUOUS),
]


class ConfigError(Exception):
    """Bad or missing configuration; maps to exit status 2."""


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class PipelineConfig:
    inputs: dict[str, Optional[Path]] = field(default_factory=dict)
    out: Path = Path("tastediv-out")
    level: str = "both"
    seed: int = 0
    top_k: int = 50
    min_plays: int = 100
    strict_min_plays: bool = False
    drop_incomplete_users: bool = True
    max_km: float = 30.0
    min_days: float = 10.0
    distinct_days: bool = False
    min_pings: int = 10
    night_start: int = 22
    night_end: int = 6
    default_utc_offset: int = 0
    max_missing_frac: float = 0.10
    impute_noise: bool = False

    SCALARS = {
        "level": str, "seed": int, "top_k": int, "min_plays": int, "strict_min_plays": _bool,
        "drop_incomplete_users": _bool, "max_km": float, "min_days": float,
        "distinct_days": _bool, "min_pings": int, "night_start": int, "night_end": int,
        "default_utc_offset": int, "max_missing_frac": float, "impute_noise": _bool,
    }

    @property
    def levels(self) -> list[str]:
        return ["genre", "subgenre"] if self.level == "both" else [self.level]

    @property
    def policy(self) -> ingest.FilterPolicy:
        return ingest.FilterPolicy(self.top_k, self.min_plays, self.drop_incomplete_users, self.strict_min_plays)

    def path(self, key: str) -> Path:
        p = self.inputs.get(key)
        if p is None:
            raise ConfigError(f"missing required input '{key}' (set it in the config file or with --{key})")
        if not p.is_file():
            raise ConfigError(f"input '{key}' not found: {p}")
        return p

    def optional(self, key: str) -> Optional[Path]:
        return self.path(key) if self.inputs.get(key) is not None else None


def load_config(args: argparse.Namespace) -> PipelineConfig:
    raw: dict[str, str] = {}
    base = Path.cwd()
    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise ConfigError(f"config file not found: {cfg_path}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        try:
            parser.read_string("[tastediv]\n" + cfg_path.read_text(encoding="utf-8"))
        except configparser.Error as exc:
            raise ConfigError(f"{cfg_path}: {exc}") from None
        raw = dict(parser["tastediv"])
        base = cfg_path.resolve().parent

    cfg = PipelineConfig()
    known = set(INPUT_KEYS) | set(PipelineConfig.SCALARS) | {"out"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    for key in INPUT_KEYS:
        flag = getattr(args, key, None)
        if flag:
            cfg.inputs[key] = Path(flag)
        elif raw.get(key):
            cfg.inputs[key] = base / raw[key]
    if getattr(args, "out", None):
        cfg.out = Path(args.out)
    elif raw.get("out"):
        cfg.out = base / raw["out"]

    overrides = {"level": "level", "seed": "seed", "top_k": "top_k", "min_plays": "min_plays"}
    for key, conv in PipelineConfig.SCALARS.items():
        value = None
        if key in overrides and getattr(args, overrides[key], None) is not None:
            value = getattr(args, overrides[key])
        elif key in raw:
            try:
                value = conv(raw[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
        if value is not None:
            setattr(cfg, key, value)
    if cfg.level not in LEVEL_CHOICES:
        raise ConfigError(f"level must be one of {', '.join(LEVEL_CHOICES)}, got {cfg.level!r}")
    if cfg.top_k < 1 or cfg.min_plays < 0:
        raise ConfigError("top_k must be >= 1 and min_plays >= 0")
    return cfg


@contextmanager
def staged_outputs(out_dir: Path):
    """Yield a function mapping output names to temporary paths.

    Files are renamed into place only when the block finishes without error,
    so a failed command never leaves torn outputs behind.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    staged: list[tuple[Path, Path]] = []

    def target(name: str) -> Path:
        final = out_dir / name
        tmp = out_dir / f".{name}.partial-{os.getpid()}"
        staged.append((tmp, final))
        return tmp

    try:
        yield target
    except BaseException:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


# --- commands -----------------------------------------------------------------


def cmd_diversity(cfg: PipelineConfig) -> None:
    plays_path, catalog_path = cfg.path("plays"), cfg.path("catalog")
    plays = ingest.parse_plays(plays_path)
    catalog = ingest.parse_catalog(catalog_path)
    selected, dropped = ingest.select_top_artists(plays, cfg.policy, catalog)
    with staged_outputs(cfg.out) as target:
        for level in cfg.levels:
            cm, lost = ingest.build_consumption_matrix(selected, catalog, level)
            dropped.extend(lost)
            if not cm.users:
                raise ValueError(f"no users left at {level} level")
            dist = divcore.cosine_distance_matrix(cm)
            reports = divcore.diversity_batch(cm, dist)
            divcore.write_distances(target(f"distances_{level}.csv"), dist)
            divcore.write_diversity(target(f"diversity_{level}.csv"), reports)
            log.info("%s: %d users, %d categories", level, len(cm.users), len(cm.categories))
        ingest.write_dropped(target("dropped_users.csv"), sorted(dropped, key=lambda d: (d.user_id, d.reason)))


def _map_level(cfg: PipelineConfig) -> str:
    return "subgenre" if cfg.level == "subgenre" else "genre"


def cmd_map(cfg: PipelineConfig) -> None:
    level = _map_level(cfg)
    existing = cfg.out / f"distances_{level}.csv"
    if existing.is_file():
        dist = divcore.read_distances(existing)
    else:
        plays = ingest.parse_plays(cfg.path("plays"))
        catalog = ingest.parse_catalog(cfg.path("catalog"))
        selected, _ = ingest.select_top_artists(plays, cfg.policy, catalog)
        cm, _ = ingest.build_consumption_matrix(selected, catalog, level)
        dist = divcore.cosine_distance_matrix(cm)
    if len(dist) < 3:
        raise ValueError(f"a map needs at least 3 categories; {level} level has {len(dist)}")
    emb = divcore.classical_mds(dist)
    if emb.degenerate:
        log.warning("fewer than 2 positive eigenvalues; map is one-dimensional")
    with staged_outputs(cfg.out) as target:
        divcore.write_mds(target("mds.csv"), emb)
        write_scatter(target("mds.svg"), emb, f"{level} distances (classical MDS)")


def _geo_options(cfg: PipelineConfig) -> dict:
    return dict(
        max_km=cfg.max_km,
        min_pings=cfg.min_pings,
        min_days=cfg.min_days,
        distinct_days=cfg.distinct_days,
        default_offset_minutes=cfg.default_utc_offset,
        night_start_hour=cfg.night_start,
        night_end_hour=cfg.night_end,
    )


def cmd_homeloc(cfg: PipelineConfig) -> None:
    pings = geo.parse_pings(cfg.path("pings"))
    table = geo.parse_zips(cfg.path("zips"))
    homes = geo.infer_homes(pings, table, **_geo_options(cfg))
    with staged_outputs(cfg.out) as target:
        geo.write_homes(target("homes.csv"), homes)
    log.info("homes: %d of %d users resolved", sum(h.resolved for h in homes), len(homes))


def _upstream(cfg: PipelineConfig, name: str) -> Path:
    p = cfg.out / name
    if not p.is_file():
        raise ValueError(f"{p} is missing; run the command that produces it first")
    return p


def _read_profiles(path: Path) -> dict[str, dict[str, float]]:
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("user_id", *PROFILE_KINDS) if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for row in reader:
            out[row["user_id"]] = {
                c: float(row[c]) if row[c].strip() else math.nan for c in PROFILE_KINDS
            }
    return out


def _interest_features(path: Optional[Path]) -> tuple[dict[str, float], dict[str, float]]:
    if path is None:
        return {}, {}
    interests = ingest.parse_interests(path)
    interests = {u: t for u, t in interests.items() if sum(w for _, w in t) > 0}
    share = ingest.music_interest_share(interests)
    cm, _ = ingest.interest_matrix(interests)
    diversity = {}
    if cm.users:
        dist = divcore.cosine_distance_matrix(cm)
        diversity = {r.user_id: r.rao_stirling for r in divcore.diversity_batch(cm, dist)}
    return share, diversity


def cmd_features(cfg: PipelineConfig) -> None:
    div = {lvl: divcore.read_diversity(_upstream(cfg, f"diversity_{lvl}.csv")) for lvl in cfg.levels}
    homes = geo.read_homes(_upstream(cfg, "homes.csv"))
    census = geo.parse_census(cfg.path("census"))
    urban = geo.parse_urbanness(cfg.path("urbanness"))
    profiles = _read_profiles(cfg.path("profiles"))
    share, interest_div = _interest_features(cfg.optional("interests"))

    home_by_user = {h.user_id: h for h in homes}
    candidates = sorted(set().union(*(set(d) for d in div.values())) | set(home_by_user))
    rows, users, excluded = [], [], []
    for uid in candidates:
        reason = next((f"no-diversity-{lvl}" for lvl in cfg.levels if uid not in div[lvl]), None)
        record = None
        if reason is None:
            home = home_by_user.get(uid, geo.HomeLocation(uid, None, None))
            record = geo.join_census(home, census, urban)
            if isinstance(record, geo.Exclusion):
                reason = record.reason
        if reason is None and uid not in profiles:
            reason = "no-profile"
        if reason is not None:
            excluded.append((uid, reason))
            continue
        prof = profiles[uid]
        values = {
            "income": record.median_household_income,
            "education": record.pct_bachelor,
            "racial_diversity": record.racial_diversity,
            "urbanness": float(record.urbanness),
            "music_interest": share.get(uid, math.nan),
            "interest_diversity": interest_div.get(uid, math.nan),
            **prof,
        }
        row = [values[name] for name, _ in FEATURE_COLUMNS]
        row += [div[lvl][uid].rao_stirling for lvl in cfg.levels]
        rows.append(row)
        users.append(uid)

    columns = [name for name, _ in FEATURE_COLUMNS] + [f"diversity_{lvl}" for lvl in cfg.levels]
    kinds = {name: kind for name, kind in FEATURE_COLUMNS}
    kinds.update({f"diversity_{lvl}": stats.CONTINUOUS for lvl in cfg.levels})
    table = stats.FeatureTable(users, columns, kinds, np.array(rows, dtype=float).reshape(len(users), len(columns)))
    with staged_outputs(cfg.out) as target:
        stats.write_features(target("features.csv"), target("features.schema.json"), table)
        ingest.write_dropped(target("features_excluded.csv"), [ingest.DroppedUser(u, r) for u, r in excluded])
    log.info("features: %d users kept, %d excluded", len(users), len(excluded))


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def cmd_regress(cfg: PipelineConfig) -> None:
    out = cfg.out
    table = stats.read_features(_upstream(cfg, "features.csv"), _upstream(cfg, "features.schema.json"))
    responses = [c for c in table.columns if c.startswith("diversity_")]
    predictors = [c for c in table.columns if c not in responses]
    if not responses:
        raise ValueError("features.csv has no diversity_* response column")
    filled = stats.impute_missing(table, cfg.max_missing_frac, noise=cfg.impute_noise, seed=cfg.seed)
    z = stats.standardize(filled)
    x = z.select(predictors).values
    report = {}
    for col in responses:
        rep = stats.ols_regress(z.column(col), x, predictors)
        report[col.removeprefix("diversity_")] = rep.to_dict()
    with staged_outputs(out) as target:
        _dump_json(target("regression_report.json"), report)


def _pearson_dict(x, y) -> dict:
    try:
        r, t, p = stats.pearson(x, y)
    except ValueError as exc:
        return {"r": None, "t": None, "p": None, "error": str(exc)}
    return {"r": stats._jsonable(r), "t": stats._jsonable(t), "p": stats._jsonable(p)}


def cmd_agreement(cfg: PipelineConfig) -> None:
    ratings = stats.read_ratings(cfg.path("ratings"))
    fleiss = stats.fleiss_kappa(ratings)
    cohen = stats.cohen_kappa_avg(ratings)
    means = dict(zip(ratings.subjects, ratings.mean_scores()))
    report = {
        "subjects": len(ratings.subjects),
        "raters": list(ratings.raters),
        "fleiss_kappa": fleiss.value,
        "fleiss_degenerate": fleiss.degenerate,
        "cohen_kappa_avg": cohen.value,
        "cohen_degenerate": cohen.degenerate,
        "pearson": {},
    }
    for lvl in cfg.levels:
        div = divcore.read_diversity(_upstream(cfg, f"diversity_{lvl}.csv"))
        rated = [s for s in ratings.subjects if s in div]
        rater_mean = [means[s] for s in rated]
        report["pearson"][lvl] = {
            "n": len(rated),
            "missing_subjects": [s for s in ratings.subjects if s not in div],
            **{
                measure: _pearson_dict(rater_mean, [getattr(div[s], measure) for s in rated])
                for measure in ("rao_stirling", "entropy", "volume")
            },
        }
    with staged_outputs(cfg.out) as target:
        _dump_json(target("agreement_report.json"), report)


def cmd_all(cfg: PipelineConfig) -> None:
    for key in ("plays", "catalog", "pings", "zips", "census", "urbanness", "profiles"):
        cfg.path(key)
    cmd_diversity(cfg)
    cmd_map(cfg)
    cmd_homeloc(cfg)
    cmd_features(cfg)
    cmd_regress(cfg)
    if cfg.inputs.get("ratings") is not None:
        cmd_agreement(cfg)


COMMANDS = {
    "diversity": (cmd_diversity, "diversity scores and category distances"),
    "map": (cmd_map, "2-D MDS map of category distances (mds.csv, mds.svg)"),
    "homeloc": (cmd_homeloc, "infer home ZIPs from geotagged pings"),
    "features": (cmd_features, "assemble the per-user feature table"),
    "regress": (cmd_regress, "impute, standardize and fit one model per level"),
    "agreement": (cmd_agreement, "rater agreement and correlation with computed scores"),
    "all": (cmd_all, "run every step in order"),
}


def _add_common(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--config", default=default, help="flat key = value settings file")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--level", choices=LEVEL_CHOICES, default=default)
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--top-k", dest="top_k", type=int, default=default)
    p.add_argument("--min-plays", dest="min_plays", type=int, default=default)
    for key in INPUT_KEYS:
        p.add_argument(f"--{key}", default=default, help=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tastediv", description=__doc__.splitlines()[0])
    _add_common(parser, None)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        _add_common(sp, argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="tastediv: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args)
        COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"tastediv: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, KeyError, OSError) as exc:
        print(f"tastediv: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
