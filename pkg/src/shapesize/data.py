"""Subject-level recurrent event data and the trimming region.

A dataset is a fixed collection of subjects observed on a common window
[0, tau]. Each subject carries a covariate vector, a censoring time, and
the sorted times of the events observed up to censoring. Subjects with no
events are kept; they still contribute at-risk information to the
smoothers and enter every normalization.

TrimSpec describes the estimation window: a time interval [tau0, tau1]
inside [0, tau] and an optional covariate box. The untrimmed default
keeps everything, which is the usual practical choice.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Subject:
    """One observation unit.

    events must be sorted ascending and lie inside [0, c]. The censoring
    time c is the end of this subject's observation; the event count at c
    is simply len(events).
    """

    id: str
    z: np.ndarray
    c: float
    events: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", _frozen(np.atleast_1d(self.z)))
        ev = _frozen(np.atleast_1d(self.events) if np.size(self.events) else np.empty(0))
        object.__setattr__(self, "events", ev)
        object.__setattr__(self, "c", float(self.c))
        if self.z.ndim != 1 or self.z.size < 1:
            raise DataError(f"subject {self.id!r}: covariate vector must be 1-d, nonempty")
        if not np.all(np.isfinite(self.z)):
            raise DataError(f"subject {self.id!r}: non-finite covariate value")
        if not (np.isfinite(self.c) and self.c >= 0.0):
            raise DataError(f"subject {self.id!r}: censoring time must be finite and >= 0")
        if ev.size:
            if not np.all(np.isfinite(ev)):
                raise DataError(f"subject {self.id!r}: non-finite event time")
            if np.any(np.diff(ev) < 0.0):
                raise DataError(f"subject {self.id!r}: event times must be sorted ascending")
            if ev[0] < 0.0:
                raise DataError(f"subject {self.id!r}: negative event time")
            if ev[-1] > self.c:
                raise DataError(
                    f"subject {self.id!r}: event after censoring ({ev[-1]} > c={self.c})"
                )

    @property
    def n_events(self) -> int:
        return int(self.events.size)


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of subjects on a common window [0, tau].

    Subject ids need not be unique here (resampling duplicates them); the
    CSV loader does enforce uniqueness because files keyed by id would
    otherwise be ambiguous.
    """

    subjects: tuple
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "tau", float(self.tau))
        if len(self.subjects) < 1:
            raise DataError("dataset needs at least one subject")
        if not (np.isfinite(self.tau) and self.tau > 0.0):
            raise DataError(f"tau must be finite and positive, got {self.tau}")
        p = self.subjects[0].z.size
        for s in self.subjects:
            if s.z.size != p:
                raise DataError(
                    f"subject {s.id!r}: covariate dimension {s.z.size} != {p}"
                )
            if s.c > self.tau + 1e-12:
                raise DataError(
                    f"subject {s.id!r}: censoring time {s.c} exceeds tau={self.tau}"
                )

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def p(self) -> int:
        return self.subjects[0].z.size

    def covariates(self) -> np.ndarray:
        """(n, p) covariate matrix in subject order."""
        return np.vstack([s.z for s in self.subjects])

    def censoring(self) -> np.ndarray:
        return np.array([s.c for s in self.subjects])

    def event_counts(self) -> np.ndarray:
        return np.array([s.n_events for s in self.subjects], dtype=float)

    def total_events(self) -> int:
        return int(sum(s.n_events for s in self.subjects))


@dataclass(frozen=True)
class TrimSpec:
    """Estimation window: time interval and optional covariate box.

    tau1=None means the dataset's tau. z_lower/z_upper are per-coordinate
    bounds of an axis-aligned box; None on both sides keeps all subjects.
    """

    tau0: float = 0.0
    tau1: float | None = None
    z_lower: np.ndarray | None = None
    z_upper: np.ndarray | None = None

    def __post_init__(self):
        if self.z_lower is not None:
            object.__setattr__(self, "z_lower", _frozen(np.atleast_1d(self.z_lower)))
        if self.z_upper is not None:
            object.__setattr__(self, "z_upper", _frozen(np.atleast_1d(self.z_upper)))
        if self.tau0 < 0.0:
            raise DataError(f"tau0 must be >= 0, got {self.tau0}")
        if self.tau1 is not None and not (self.tau0 < self.tau1):
            raise DataError(f"need tau0 < tau1, got [{self.tau0}, {self.tau1}]")
        if (self.z_lower is None) != (self.z_upper is None):
            raise DataError("z_lower and z_upper must be given together")
        if self.z_lower is not None and np.any(self.z_lower > self.z_upper):
            raise DataError("covariate box has z_lower > z_upper")

    def window(self, tau: float) -> tuple:
        """Resolve (tau0, tau1) against a dataset's tau."""
        t1 = tau if self.tau1 is None else self.tau1
        if t1 > tau + 1e-12:
            raise DataError(f"tau1={t1} exceeds dataset tau={tau}")
        if not (self.tau0 < t1):
            raise DataError(f"need tau0 < tau1, got [{self.tau0}, {t1}]")
        return self.tau0, min(t1, tau)

    def in_region(self, z: np.ndarray) -> np.ndarray:
        """Boolean mask of rows of z inside the covariate box."""
        z = np.atleast_2d(z)
        if self.z_lower is None:
            return np.ones(z.shape[0], dtype=bool)
        if z.shape[1] != self.z_lower.size:
            raise DataError(
                f"covariate box dimension {self.z_lower.size} != data dimension {z.shape[1]}"
            )
        return np.all((z >= self.z_lower) & (z <= self.z_upper), axis=1)


UNTRIMMED = TrimSpec()


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"non-numeric value {text!r} in {where}") from None


def load_dataset(subjects_path, events_path, tau: float) -> Dataset:
    """Load a dataset from the two-file delimited layout.

    The subjects file has header ``id,c,z1,...,zp`` with one row per
    subject. The events file has header ``id,t`` with one row per event;
    ids must refer to subjects, and every event time must lie in [0, c]
    for its subject. Event rows may come in any order.
    """
    with open(subjects_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{subjects_path}: empty subjects file")
    header = [c.strip() for c in rows[0]]
    if len(header) < 3 or header[0] != "id" or header[1] != "c":
        raise DataError(
            f"{subjects_path}: expected header id,c,z1,...,zp, got {','.join(header)}"
        )
    expect_z = [f"z{k}" for k in range(1, len(header) - 1)]
    if header[2:] != expect_z:
        raise DataError(
            f"{subjects_path}: covariate columns must be {','.join(expect_z)}, "
            f"got {','.join(header[2:])}"
        )
    p = len(header) - 2

    order: list = []
    cz: dict = {}
    for ln, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 2 + p:
            raise DataError(f"{subjects_path}:{ln}: expected {2 + p} fields, got {len(row)}")
        sid = row[0].strip()
        if sid in cz:
            raise DataError(f"{subjects_path}:{ln}: duplicate subject id {sid!r}")
        c = _parse_float(row[1], f"{subjects_path}:{ln}")
        z = np.array([_parse_float(v, f"{subjects_path}:{ln}") for v in row[2:]])
        if c > tau + 1e-12:
            raise DataError(
                f"{subjects_path}:{ln}: censoring time {c} exceeds tau={tau}"
            )
        cz[sid] = (c, z)
        order.append(sid)

    if not order:
        raise DataError(f"{subjects_path}: no subject rows")

    events: dict = {sid: [] for sid in order}
    with open(events_path, newline="") as fh:
        erows = list(csv.reader(fh))
    if not erows:
        raise DataError(f"{events_path}: empty events file")
    eheader = [c.strip() for c in erows[0]]
    if eheader != ["id", "t"]:
        raise DataError(f"{events_path}: expected header id,t, got {','.join(eheader)}")
    for ln, row in enumerate(erows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 2:
            raise DataError(f"{events_path}:{ln}: expected 2 fields, got {len(row)}")
        sid = row[0].strip()
        if sid not in events:
            raise DataError(f"{events_path}:{ln}: unknown subject id {sid!r}")
        t = _parse_float(row[1], f"{events_path}:{ln}")
        c = cz[sid][0]
        if t < 0.0 or t > c:
            raise DataError(
                f"{events_path}:{ln}: event at t={t} outside [0, c={c}] for subject {sid!r}"
            )
        events[sid].append(t)

    subjects = [
        Subject(id=sid, z=cz[sid][1], c=cz[sid][0], events=np.sort(events[sid]))
        for sid in order
    ]
    return Dataset(subjects=tuple(subjects), tau=tau)


def save_dataset(dataset: Dataset, subjects_path, events_path) -> None:
    """Write the two-file delimited layout; floats use repr round-trip."""
    p = dataset.p
    with open(subjects_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "c"] + [f"z{k}" for k in range(1, p + 1)])
        for s in dataset.subjects:
            w.writerow([s.id, repr(s.c)] + [repr(float(v)) for v in s.z])
    with open(events_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t"])
        for s in dataset.subjects:
            for t in s.events:
                w.writerow([s.id, repr(float(t))])


def validate(dataset: Dataset) -> list:
    """Structural diagnostics that do not stop estimation.

    Returns human-readable notes: pooled tie counts, zero-event subjects,
    constant covariate coordinates, and covariate rank deficiency. Rank
    deficiency makes the shape index unidentifiable; fitting refuses to
    start in that case, and the note here uses the same wording.
    """
    notes = []
    pooled = np.concatenate([s.events for s in dataset.subjects]) if dataset.total_events() else np.empty(0)
    if pooled.size:
        _, counts = np.unique(pooled, return_counts=True)
        nties = int(np.sum(counts > 1))
        if nties:
            notes.append(f"{nties} pooled event time(s) shared by more than one event")
    nzero = sum(1 for s in dataset.subjects if s.n_events == 0)
    if nzero:
        notes.append(f"{nzero} subject(s) with zero observed events")
    Z = dataset.covariates()
    for k in range(dataset.p):
        if np.ptp(Z[:, k]) == 0.0:
            notes.append(f"covariate z{k + 1} is constant across subjects")
    centered = Z - Z.mean(axis=0)
    if np.linalg.matrix_rank(centered) < dataset.p:
        notes.append("covariate matrix rank-deficient; shape index unidentifiable")
    return notes
