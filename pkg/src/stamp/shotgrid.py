"""Court and shot-type taxonomy, play-by-play ingestion and cell aggregation.

The half court is divided into 13 zones. Left/right mirror zones share one
merged area, and each zone carries a coarse side label, so every observation
cell is ``(team, season, area, side, shot_type)`` restricted to the 13
(area, side) combinations that correspond to a real zone.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyData, ExposureError, InvalidEvent, InvalidZone, UnknownLabel

ZONE_NAMES = {
    1: "under basket",
    2: "in the paint",
    3: "inside right wing",
    4: "inside right",
    5: "inside center",
    6: "inside left",
    7: "inside left wing",
    8: "outside right wing",
    9: "outside right",
    10: "outside center",
    11: "outside left",
    12: "outside left wing",
    13: "backcourt",
}

# merged area ids are 1-based; names drop the left/right qualifier
AREAS = (
    "under_basket",
    "paint",
    "inside_wing",
    "inside",
    "inside_center",
    "outside_wing",
    "outside",
    "outside_center",
    "backcourt",
)

SIDES = ("Left", "Center", "Right")
CENTER = SIDES.index("Center")

ZONE_TO_AREA = {1: 1, 2: 2, 3: 3, 7: 3, 4: 4, 6: 4, 5: 5, 8: 6, 12: 6, 9: 7, 11: 7, 10: 8, 13: 9}
ZONE_TO_SIDE = {
    **{z: "Left" for z in (6, 7, 11, 12)},
    **{z: "Center" for z in (1, 2, 5, 10, 13)},
    **{z: "Right" for z in (3, 4, 8, 9)},
}

SHOT_TYPES = ("jump_shot", "step_pull", "lay_up", "floater", "rim_finishes", "fade_turn")

RAW_SHOT_LABELS = {
    "jump shot": "jump_shot",
    "step-back jump shot": "step_pull",
    "pull-up jump shot": "step_pull",
    "layup": "lay_up",
    "driving layup": "lay_up",
    "floating jump shot": "floater",
    "dunk": "rim_finishes",
    "tip-in": "rim_finishes",
    "alley-oop": "rim_finishes",
    "hook shot": "rim_finishes",
    "fadeaway": "fade_turn",
    "turnaround jump shot": "fade_turn",
}

EVENT_KINDS = ("field_goal_attempt", "offensive_rebound", "turnover", "other")
PHASES = ("regular", "post")


@dataclass(frozen=True)
class AreaPartition:
    zones: Mapping[int, str]
    merged_area: Mapping[int, int]
    side: Mapping[int, str]

    @classmethod
    def default(cls) -> "AreaPartition":
        return cls(dict(ZONE_NAMES), dict(ZONE_TO_AREA), dict(ZONE_TO_SIDE))

    def valid_pairs(self) -> list[tuple[int, int]]:
        """(area index, side index) pairs, both 0-based, in lexicographic order."""
        pairs = {(self.merged_area[z] - 1, SIDES.index(self.side[z])) for z in self.zones}
        return sorted(pairs)

    def zone_of(self, area: int, side: int) -> int:
        for z in self.zones:
            if self.merged_area[z] - 1 == area and SIDES.index(self.side[z]) == side:
                return z
        raise KeyError((area, side))


PARTITION = AreaPartition.default()
VALID_AD = tuple(PARTITION.valid_pairs())
AD_INDEX = {ad: j for j, ad in enumerate(VALID_AD)}
N_AREAS = len(AREAS)
N_SIDES = len(SIDES)
N_SHOT_TYPES = len(SHOT_TYPES)
N_AD = len(VALID_AD)


def classify_shot(raw_label: str) -> str:
    """Map a raw play-by-play action label onto one of the six merged categories."""
    key = raw_label.strip().lower() if isinstance(raw_label, str) else raw_label
    try:
        return RAW_SHOT_LABELS[key]
    except (KeyError, TypeError):
        raise UnknownLabel(raw_label) from None


def zone_to_cell_axes(zone_id: int) -> tuple[str, str]:
    """Return ``(merged area name, side name)`` for a court zone."""
    try:
        z = int(zone_id)
    except (TypeError, ValueError):
        raise InvalidZone(zone_id) from None
    if z != zone_id or z not in ZONE_TO_AREA:
        raise InvalidZone(zone_id)
    return AREAS[ZONE_TO_AREA[z] - 1], ZONE_TO_SIDE[z]


def _zone_axes_idx(zone_id: int) -> tuple[int, int]:
    area, side = zone_to_cell_axes(zone_id)
    return AREAS.index(area), SIDES.index(side)


class CellIndex:
    """Dense enumeration of valid cells ``(i, s, a, d, k)``.

    Cells are ordered lexicographically by (team, season, area, side,
    shot type) using the positional indices of each axis, so the cell id is
    ``((i * S + s) * 13 + ad) * K + k`` where ``ad`` enumerates ``VALID_AD``.
    """

    def __init__(self, teams: Sequence, seasons: Sequence):
        self.teams = tuple(teams)
        self.seasons = tuple(seasons)
        if len(set(self.teams)) != len(self.teams) or len(set(self.seasons)) != len(self.seasons):
            raise ValueError("duplicate team or season identifiers")
        self._team_pos = {t: i for i, t in enumerate(self.teams)}
        self._season_pos = {s: i for i, s in enumerate(self.seasons)}
        I, S, K = self.n_teams, self.n_seasons, N_SHOT_TYPES
        n = I * S * N_AD * K
        ids = np.arange(n)
        k = ids % K
        ad = (ids // K) % N_AD
        s = (ids // (K * N_AD)) % S if S else ids
        i = ids // (K * N_AD * S) if S else ids
        ad_arr = np.array(VALID_AD, dtype=np.int64).reshape(-1, 2)
        self.team = i.astype(np.int64)
        self.season = s.astype(np.int64)
        self.area = ad_arr[ad, 0] if n else np.zeros(0, np.int64)
        self.side = ad_arr[ad, 1] if n else np.zeros(0, np.int64)
        self.shot = k.astype(np.int64)
        self.ad = ad.astype(np.int64)

    @classmethod
    def from_dims(cls, n_teams: int, n_seasons: int) -> "CellIndex":
        return cls([f"T{i + 1:02d}" for i in range(n_teams)], [f"S{s + 1}" for s in range(n_seasons)])

    @property
    def n_teams(self) -> int:
        return len(self.teams)

    @property
    def n_seasons(self) -> int:
        return len(self.seasons)

    @property
    def n_cells(self) -> int:
        return self.n_teams * self.n_seasons * N_AD * N_SHOT_TYPES

    def __len__(self):
        return self.n_cells

    def __eq__(self, other):
        return isinstance(other, CellIndex) and self.teams == other.teams and self.seasons == other.seasons

    def __hash__(self):
        return hash((self.teams, self.seasons))

    def __repr__(self):
        return f"CellIndex(I={self.n_teams}, S={self.n_seasons}, cells={self.n_cells})"

    def team_pos(self, team) -> int:
        return self._team_pos[team]

    def season_pos(self, season) -> int:
        return self._season_pos[season]

    def lookup(self, i: int, s: int, a: int, d: int, k: int) -> int:
        """Dense cell id for positional indices; raises KeyError on invalid (a, d)."""
        ad = AD_INDEX[(a, d)]
        if not (0 <= i < self.n_teams and 0 <= s < self.n_seasons and 0 <= k < N_SHOT_TYPES):
            raise KeyError((i, s, a, d, k))
        return ((i * self.n_seasons + s) * N_AD + ad) * N_SHOT_TYPES + k

    def cell(self, c: int) -> tuple[int, int, int, int, int]:
        return (int(self.team[c]), int(self.season[c]), int(self.area[c]), int(self.side[c]), int(self.shot[c]))

    def valid_cells(self) -> list[tuple[int, int, int, int, int]]:
        return [self.cell(c) for c in range(self.n_cells)]


@dataclass
class CountsAndExposure:
    """Per-cell counts ``y`` and per team-season exposures ``E`` for one phase."""

    index: CellIndex
    y: np.ndarray
    E: np.ndarray
    phase: str = "regular"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        self.E = np.asarray(self.E, dtype=float).reshape(self.index.n_teams, self.index.n_seasons)
        if self.y.shape != (self.index.n_cells,):
            raise ValueError(f"y has shape {self.y.shape}, expected ({self.index.n_cells},)")
        if np.any(self.y < 0):
            raise ValueError("negative counts")
        if np.any(self.E < 0) or not np.all(np.isfinite(self.E)):
            raise ValueError("exposures must be finite and nonnegative")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}")

    @property
    def cell_exposure(self) -> np.ndarray:
        return self.E[self.index.team, self.index.season]

    @property
    def total(self) -> int:
        return int(self.y.sum())

    def slice_totals(self) -> np.ndarray:
        """Counts summed over (area, side, shot type) for each (team, season)."""
        out = np.zeros((self.index.n_teams, self.index.n_seasons))
        np.add.at(out, (self.index.team, self.index.season), self.y)
        return out

    def check_exposure(self):
        bad = (self.slice_totals() > 0) & (self.E <= 0)
        if np.any(bad):
            i, s = np.argwhere(bad)[0]
            raise ExposureError(
                f"team {self.index.teams[i]!r} season {self.index.seasons[s]!r} has shots but no possessions"
            )

    def __eq__(self, other):
        return (
            isinstance(other, CountsAndExposure)
            and self.index == other.index
            and self.phase == other.phase
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.E, other.E)
        )


@dataclass(frozen=True)
class PlayByPlayEvent:
    game_id: str
    team_id: str
    season_id: str
    order_key: object
    event_kind: str
    raw_shot_label: str | None = None
    zone_id: int | None = None
    phase: str = "regular"

    def __post_init__(self):
        if self.event_kind not in EVENT_KINDS:
            raise InvalidEvent(f"unknown event kind {self.event_kind!r}")
        if self.phase not in PHASES:
            raise InvalidEvent(f"unknown phase {self.phase!r}")
        is_fga = self.event_kind == "field_goal_attempt"
        has_shot = self.raw_shot_label is not None or self.zone_id is not None
        if is_fga and (self.raw_shot_label is None or self.zone_id is None):
            raise InvalidEvent(f"field goal attempt without label/zone in game {self.game_id!r}")
        if not is_fga and has_shot:
            raise InvalidEvent(f"{self.event_kind} event carries shot fields in game {self.game_id!r}")


def _sort_key(ev: PlayByPlayEvent):
    k = ev.order_key
    if isinstance(k, (int, float)):
        return (str(ev.game_id), 0, float(k), "")
    return (str(ev.game_id), 1, 0.0, str(k))


def count_possessions(events: Iterable[PlayByPlayEvent], team, season) -> float:
    """Possessions for one team-season under the shot-terminated rule.

    Every field goal attempt and every turnover by the team closes a
    possession. An offensive rebound opens a new possession, which is closed
    (and counted) by the next attempt or turnover, so a rebounded miss and its
    put-back count twice.
    """
    n = 0
    for ev in events:
        if ev.team_id != team or ev.season_id != season:
            continue
        if ev.event_kind in ("field_goal_attempt", "turnover"):
            n += 1
    return float(n)


def infer_index(events: Iterable[PlayByPlayEvent]) -> CellIndex:
    teams, seasons = set(), set()
    for ev in events:
        teams.add(ev.team_id)
        seasons.add(ev.season_id)
    return CellIndex(sorted(teams), sorted(seasons))


def aggregate(
    events: Sequence[PlayByPlayEvent],
    phase: str = "regular",
    cell_index: CellIndex | None = None,
    possessions: Mapping[tuple, float] | None = None,
) -> CountsAndExposure:
    """Aggregate one phase of a play-by-play stream into cell counts and exposures.

    ``possessions`` maps ``(team, season)`` to a precomputed possession count
    and overrides the event-based count for the pairs it covers.
    """
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}")
    events = sorted(events, key=_sort_key)
    index = cell_index if cell_index is not None else infer_index(events)
    y = np.zeros(index.n_cells, dtype=np.int64)
    by_slice = defaultdict(list)
    for ev in events:
        if ev.phase != phase:
            continue
        by_slice[(ev.team_id, ev.season_id)].append(ev)
        if ev.event_kind != "field_goal_attempt":
            continue
        ctx = f"game {ev.game_id!r}, order {ev.order_key!r}"
        try:
            k = SHOT_TYPES.index(classify_shot(ev.raw_shot_label))
        except UnknownLabel as exc:
            raise UnknownLabel(ev.raw_shot_label, ctx) from exc
        try:
            a, d = _zone_axes_idx(ev.zone_id)
        except InvalidZone as exc:
            raise InvalidZone(ev.zone_id, ctx) from exc
        i, s = index.team_pos(ev.team_id), index.season_pos(ev.season_id)
        y[index.lookup(i, s, a, d, k)] += 1
    E = np.zeros((index.n_teams, index.n_seasons))
    for (team, season), evs in by_slice.items():
        E[index.team_pos(team), index.season_pos(season)] = count_possessions(evs, team, season)
    for (team, season), val in (possessions or {}).items():
        if team in index._team_pos and season in index._season_pos:
            E[index.team_pos(team), index.season_pos(season)] = float(val)
    out = CountsAndExposure(index, y, E, phase)
    out.check_exposure()
    return out


# -- file formats -------------------------------------------------------------

EVENT_COLUMNS = ("game_id", "team_id", "season", "order_key", "event_kind", "raw_shot_label", "zone_id", "phase")
CELL_COLUMNS = ("team", "season", "area", "side", "shot_type", "count", "possessions", "phase")


def _parse_order_key(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def read_events(path) -> list[PlayByPlayEvent]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(EVENT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise InvalidEvent(f"event file lacks columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            label = row["raw_shot_label"] or None
            zone = row["zone_id"] or None
            try:
                zone = int(zone) if zone is not None else None
            except ValueError:
                raise InvalidZone(zone, f"line {line}") from None
            out.append(
                PlayByPlayEvent(
                    game_id=row["game_id"],
                    team_id=row["team_id"],
                    season_id=row["season"],
                    order_key=_parse_order_key(row["order_key"]),
                    event_kind=row["event_kind"],
                    raw_shot_label=label,
                    zone_id=zone,
                    phase=row["phase"] or "regular",
                )
            )
    return out


def write_events(path, events: Iterable[PlayByPlayEvent]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for ev in events:
            w.writerow(
                [
                    ev.game_id,
                    ev.team_id,
                    ev.season_id,
                    ev.order_key,
                    ev.event_kind,
                    ev.raw_shot_label or "",
                    "" if ev.zone_id is None else ev.zone_id,
                    ev.phase,
                ]
            )


def read_possessions(path) -> dict[tuple[str, str, str], float]:
    """Precomputed possessions file: ``team,season,phase,possessions``."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[(row["team"], row["season"], row.get("phase") or "regular")] = float(row["possessions"])
    return out


def _fmt_num(x: float) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def write_cells(path, *datasets: CountsAndExposure):
    """Write one or more phases sharing a cell index in the aggregated-cell format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELL_COLUMNS)
        for data in datasets:
            idx = data.index
            E = data.cell_exposure
            for c in range(idx.n_cells):
                i, s, a, d, k = idx.cell(c)
                w.writerow(
                    [idx.teams[i], idx.seasons[s], AREAS[a], SIDES[d], SHOT_TYPES[k], int(data.y[c]), _fmt_num(E[c]), data.phase]
                )


def read_cells(path) -> dict[str, CountsAndExposure]:
    """Read an aggregated-cell file; returns a dict keyed by phase.

    All phases share one cell index built from the union of teams and
    seasons in the file. Missing cells count as zero; a team-season absent
    from a phase gets zero exposure there.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CELL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"cell file lacks columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise EmptyData(f"no rows in {path}")
    teams = sorted({r["team"] for r in rows})
    seasons = sorted({r["season"] for r in rows})
    index = CellIndex(teams, seasons)
    y = defaultdict(lambda: np.zeros(index.n_cells, dtype=np.int64))
    E = defaultdict(lambda: np.zeros((index.n_teams, index.n_seasons)))
    seen_E = defaultdict(dict)
    for line, r in enumerate(rows, start=2):
        phase = r["phase"] or "regular"
        i, s = index.team_pos(r["team"]), index.season_pos(r["season"])
        try:
            a, d, k = AREAS.index(r["area"]), SIDES.index(r["side"]), SHOT_TYPES.index(r["shot_type"])
        except ValueError:
            raise ValueError(f"line {line}: unknown area/side/shot_type") from None
        try:
            c = index.lookup(i, s, a, d, k)
        except KeyError:
            raise ValueError(f"line {line}: invalid (area, side) pair {r['area']}/{r['side']}") from None
        y[phase][c] += int(r["count"])
        e = float(r["possessions"])
        prev = seen_E[phase].get((i, s))
        if prev is not None and not math.isclose(prev, e, rel_tol=1e-12):
            raise ValueError(f"line {line}: inconsistent possessions for {r['team']}/{r['season']}")
        seen_E[phase][(i, s)] = e
        E[phase][i, s] = e
    out = {}
    for phase in sorted(y):
        data = CountsAndExposure(index, y[phase], E[phase], phase)
        data.check_exposure()
        out[phase] = data
    return out


def event_kind_counts(events: Iterable[PlayByPlayEvent]) -> Counter:
    return Counter(ev.event_kind for ev in events)
