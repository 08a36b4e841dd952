"""Multi-study interval-censored dose data.

Each observation is an interval [t1, t2] known to contain the subject's
failure dose; t1 = 0 means left-censored, t2 = inf means right-censored.
Doses are rescaled to [0, 1] before fitting (division by the largest finite
endpoint) so that the shared priors stay meaningful across datasets.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["IntervalObservation", "StudyDataset", "load_csv", "write_csv"]

CSV_HEADER = ["study", "dose_low", "dose_high"]


@dataclass(frozen=True)
class IntervalObservation:
    study: str
    t1: float
    t2: float  # math.inf encodes right-censoring

    def __post_init__(self):
        if not (0 <= self.t1 < self.t2):
            raise ValueError(
                "invalid interval [%r, %r]: need 0 <= t1 < t2" % (self.t1, self.t2)
            )


@dataclass(frozen=True)
class StudyDataset:
    observations: tuple
    scale_factor: float = 1.0
    studies: tuple = field(init=False)

    def __post_init__(self):
        seen = []
        for obs in self.observations:
            if obs.study not in seen:
                seen.append(obs.study)
        object.__setattr__(self, "studies", tuple(seen))

    @property
    def n(self):
        return len(self.observations)

    @property
    def n_studies(self):
        return len(self.studies)

    @property
    def n_per_study(self):
        counts = {s: 0 for s in self.studies}
        for obs in self.observations:
            counts[obs.study] += 1
        return counts

    def study_index(self):
        """Integer study index per observation, in first-appearance order."""
        pos = {s: k for k, s in enumerate(self.studies)}
        return np.array([pos[obs.study] for obs in self.observations], dtype=int)

    def endpoints(self):
        """Arrays (t1, t2) over observations."""
        t1 = np.array([obs.t1 for obs in self.observations])
        t2 = np.array([obs.t2 for obs in self.observations])
        return t1, t2

    def normalize(self):
        """Rescale all finite endpoints into [0, 1].

        Divides by the largest finite endpoint and records it as
        scale_factor for mapping results back; idempotent.  Normalized
        endpoints are rounded to 14 decimals so that a unit change of the
        raw doses (e.g. g to mg) yields the identical normalized dataset
        despite last-ulp rounding of the inputs.
        """
        finite = [
            e
            for obs in self.observations
            for e in (obs.t1, obs.t2)
            if math.isfinite(e) and e > 0
        ]
        if not finite:
            raise ValueError("dataset has no finite positive endpoint to scale by")
        c = max(finite)

        def scaled(a, b):
            lo, hi = round(a / c, 14), round(b / c, 14) if math.isfinite(b) else math.inf
            if not lo < hi:  # interval narrower than the rounding grid
                lo, hi = a / c, b / c
            return lo, hi

        obs = tuple(
            IntervalObservation(o.study, *scaled(o.t1, o.t2)) for o in self.observations
        )
        return StudyDataset(obs, scale_factor=self.scale_factor * c)

    def denormalize_dose(self, d):
        """Map a dose on the normalized scale back to the original units."""
        if np.any(np.asarray(d) < 0):
            raise ValueError("dose must be nonnegative")
        return d * self.scale_factor

    def normalize_dose(self, d):
        return d / self.scale_factor


class CsvFormatError(ValueError):
    pass


def _parse_endpoint(text, lineno, what):
    text = text.strip()
    if what == "dose_high" and text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        value = float(text)
    except ValueError:
        raise CsvFormatError("line %d: cannot parse %s %r" % (lineno, what, text))
    if not math.isfinite(value):
        raise CsvFormatError("line %d: %s must be finite or 'inf'" % (lineno, what))
    if value < 0:
        raise CsvFormatError("line %d: negative dose %r" % (lineno, text))
    return value


def load_csv(path):
    """Read a raw-scale dataset; header `study,dose_low,dose_high` required."""
    observations = []
    with open(path, newline="", encoding="utf-8") as fh:
        lineno = 0
        header_seen = False
        for row in csv.reader(fh):
            lineno += 1
            if not row or (row[0].lstrip().startswith("#")):
                continue
            if not header_seen:
                if [c.strip().lower() for c in row] != CSV_HEADER:
                    raise CsvFormatError(
                        "line %d: expected header %s" % (lineno, ",".join(CSV_HEADER))
                    )
                header_seen = True
                continue
            if len(row) != 3:
                raise CsvFormatError("line %d: expected 3 fields, got %d" % (lineno, len(row)))
            study = row[0].strip()
            if not study:
                raise CsvFormatError("line %d: empty study label" % lineno)
            t1 = _parse_endpoint(row[1], lineno, "dose_low")
            t2 = _parse_endpoint(row[2], lineno, "dose_high")
            if not t1 < t2:
                raise CsvFormatError(
                    "line %d: dose_low %g must be strictly below dose_high %g"
                    % (lineno, t1, t2)
                )
            observations.append(IntervalObservation(study, t1, t2))
    if not header_seen:
        raise CsvFormatError("empty file: missing header")
    if not observations:
        raise CsvFormatError("no observations found")
    return StudyDataset(tuple(observations))


def write_csv(ds, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for obs in ds.observations:
            high = "inf" if math.isinf(obs.t2) else repr(obs.t2)
            writer.writerow([obs.study, repr(obs.t1), high])
