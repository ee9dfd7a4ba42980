"""Building typology, damage states and casualty-rate lookup."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .geom import DomainError

MAX_MEAN_DAMAGE = 4.0
# lower edges of Slight..Complete on the mean-damage scale
DAMAGE_EDGES = (0.5, 1.5, 2.5, 3.5)


class ConfigurationError(ValueError):
    """Raised with every problem found in a configuration source."""

    def __init__(self, errors: list[str] | str):
        self.errors = [errors] if isinstance(errors, str) else list(errors)
        super().__init__("; ".join(self.errors))


class Typology(str, enum.Enum):
    MASONRY = "Masonry"
    NON_DESIGNED_RC = "NonDesignedRC"
    LOW_DUCTILITY_RC = "LowDuctilityRC"


class DamageState(enum.IntEnum):
    NONE = 0
    SLIGHT = 1
    MODERATE = 2
    EXTENSIVE = 3
    COMPLETE = 4

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> DamageState:
        return cls[label.strip().upper()]


SETTINGS = ("indoor", "outdoor")


def classify_typology(year: int, floors: int) -> Typology:
    if year < 1950:
        return Typology.MASONRY if floors < 4 else Typology.NON_DESIGNED_RC
    if year <= 2005:
        return Typology.NON_DESIGNED_RC
    return Typology.LOW_DUCTILITY_RC


def _check_mean_damage(mu_ds: float) -> None:
    if not 0.0 <= mu_ds <= MAX_MEAN_DAMAGE:
        raise DomainError(f"mean damage must lie in [0, 4], got {mu_ds}")


def normalize_mean_damage(mu_ds: float) -> float:
    _check_mean_damage(mu_ds)
    return mu_ds / MAX_MEAN_DAMAGE


def bin_damage_state(mu_ds: float) -> DamageState:
    """Nearest damage grade, half-way points rounding up."""
    _check_mean_damage(mu_ds)
    # compare against the edges; mu + 0.5 can round up across an edge
    return DamageState(sum(mu_ds >= edge for edge in DAMAGE_EDGES))


@dataclass(frozen=True)
class CasualtyTable:
    """Severity-4 (killed) rates per typology, damage state and setting."""

    rates: Mapping[tuple[Typology, DamageState, str], float]

    def __post_init__(self):
        errors = validate_rates(self.rates)
        if errors:
            raise ConfigurationError(errors)

    def rows(self) -> list[tuple[str, str, str, float]]:
        return [
            (t.value, ds.label, s, self.rates[(t, ds, s)])
            for t in Typology
            for s in SETTINGS
            for ds in DamageState
        ]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["typology", "damage_state", "setting", "rate"])
        w.writerows(self.rows())
        return out.getvalue()

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping[str, str]], source: str = "<rows>") -> CasualtyTable:
        errors = []
        rates = {}
        for lineno, row in enumerate(rows, start=2):
            try:
                key = (
                    Typology(row["typology"].strip()),
                    DamageState.from_label(row["damage_state"]),
                    row["setting"].strip(),
                )
                if key[2] not in SETTINGS:
                    raise ValueError(f"setting {key[2]!r}")
                rate = float(row["rate"])
            except (KeyError, ValueError, AttributeError) as exc:
                errors.append(f"{source}:{lineno}: bad row {dict(row)} ({exc})")
                continue
            if key in rates:
                errors.append(f"{source}:{lineno}: duplicate entry for {key[0].value},{key[1].label},{key[2]}")
            rates[key] = rate
        if errors:
            raise ConfigurationError(errors + validate_rates(rates))
        try:
            return cls(rates)
        except ConfigurationError as exc:
            raise ConfigurationError([f"{source}: {e}" for e in exc.errors]) from None

    @classmethod
    def from_csv(cls, path: str | Path) -> CasualtyTable:
        with open(path, newline="") as fh:
            return cls.from_rows(csv.DictReader(fh), source=str(path))

    @classmethod
    def default(cls) -> CasualtyTable:
        text = resources.files("qevac.data").joinpath("casualty_rates.csv").read_text()
        return cls.from_rows(csv.DictReader(io.StringIO(text)), source="default casualty table")


def validate_rates(rates: Mapping) -> list[str]:
    errors = []
    for t in Typology:
        for s in SETTINGS:
            prev = None
            for ds in DamageState:
                v = rates.get((t, ds, s))
                if v is None:
                    errors.append(f"missing rate for {t.value},{ds.label},{s}")
                    continue
                if not 0.0 <= v <= 1.0:
                    errors.append(f"rate {v} for {t.value},{ds.label},{s} outside [0, 1]")
                if ds is DamageState.NONE and v != 0.0:
                    errors.append(f"rate for {t.value},None,{s} must be 0, got {v}")
                if prev is not None and v < prev:
                    errors.append(f"rates for {t.value},{s} decrease at {ds.label}")
                prev = v
    expected = len(Typology) * len(DamageState) * len(SETTINGS)
    if len(rates) != expected and not any(e.startswith("missing") for e in errors):
        errors.append(f"expected {expected} rates, got {len(rates)}")
    return errors


def casualty_rate(table: CasualtyTable, typology: Typology, ds: DamageState, setting: str) -> float:
    return table.rates[(typology, ds, setting)]
