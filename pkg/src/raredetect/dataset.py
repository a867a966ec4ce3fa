"""Feature/label ingestion, balanced subset selection, and patient-grouped splits."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._random import make_rng

LEARN = "LEARN"
VALID = "VALID"
TEST = "TEST"
SPLITS = (LEARN, VALID, TEST)

NORMAL_COLUMN = "is_normal"


class DatasetError(ValueError):
    """Raised for malformed feature or label files."""


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    patient_id: str
    features: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """Samples with conditions sorted by decreasing frequency.

    ``features`` and ``labels`` are the stacked record arrays, kept alongside
    ``records`` so numerical code never has to re-stack them.
    """

    records: tuple
    condition_names: tuple
    frequencies: np.ndarray
    original_condition_names: tuple = ()
    features: np.ndarray = field(default=None, repr=False)
    labels: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, sample_ids, patient_ids, features, labels, condition_names):
        """Build a dataset from aligned arrays, re-sorting conditions by frequency."""
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int8)
        if features.ndim != 2 or labels.ndim != 2:
            raise DatasetError("features and labels must be 2-D")
        if not (len(sample_ids) == len(patient_ids) == features.shape[0] == labels.shape[0]):
            raise DatasetError("sample_ids, patient_ids, features and labels are not aligned")
        if labels.shape[1] != len(condition_names):
            raise DatasetError("label width does not match condition_names")
        if not np.all(np.isfinite(features)):
            row = int(np.argwhere(~np.isfinite(features))[0, 0])
            raise DatasetError(f"row {row + 1}: non-finite feature value")
        if np.any((labels != 0) & (labels != 1)):
            row = int(np.argwhere((labels != 0) & (labels != 1))[0, 0])
            raise DatasetError(f"row {row + 1}: label values must be 0 or 1")
        seen = set()
        for i, sid in enumerate(sample_ids):
            if sid in seen:
                raise DatasetError(f"row {i + 1}: duplicate sample_id {sid!r}")
            seen.add(sid)

        counts = labels.sum(axis=0).astype(np.int64)
        # stable: equal frequencies keep their original order
        order = np.argsort(-counts, kind="stable")
        labels = np.ascontiguousarray(labels[:, order])
        names = tuple(condition_names[i] for i in order)
        features.setflags(write=False)
        labels.setflags(write=False)
        records = tuple(
            SampleRecord(str(s), str(p), features[i], labels[i])
            for i, (s, p) in enumerate(zip(sample_ids, patient_ids))
        )
        freqs = counts[order]
        freqs.setflags(write=False)
        return cls(
            records=records,
            condition_names=names,
            frequencies=freqs,
            original_condition_names=tuple(condition_names),
            features=features,
            labels=labels,
        )

    def __len__(self):
        return len(self.records)

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_conditions(self):
        return len(self.condition_names)

    @property
    def sample_ids(self):
        return [r.sample_id for r in self.records]

    @property
    def patient_ids(self):
        return [r.patient_id for r in self.records]

    def index_of(self, sample_ids):
        """Row indices for the given sample ids, in the given order."""
        lookup = {r.sample_id: i for i, r in enumerate(self.records)}
        try:
            return np.array([lookup[s] for s in sample_ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"unknown sample_id {exc.args[0]!r}") from None

    def normal_mask(self):
        return ~self.labels.any(axis=1)


def _parse_float(text, row, column):
    # float() accepts "1_000", "nan" and "inf"; none of them are valid here
    if "_" in text:
        raise DatasetError(f"row {row}: column {column!r}: invalid number {text!r}")
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"row {row}: column {column!r}: invalid number {text!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"row {row}: column {column!r}: non-finite value {text!r}")
    return value


def read_features_csv(path):
    """Read ``sample_id,patient_id,f0,...`` rows.

    Returns ``(sample_ids, patient_ids, matrix)``. A file without a
    ``patient_id`` column is accepted; each sample is then its own patient.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty features file") from None
        if not header or header[0] != "sample_id":
            raise DatasetError(f"{path}: header must start with 'sample_id'")
        has_patient = len(header) > 1 and header[1] == "patient_id"
        first = 2 if has_patient else 1
        width = len(header) - first
        if width < 1:
            raise DatasetError(f"{path}: no feature columns")
        sample_ids, patient_ids, rows = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}: row {row_no}: expected {len(header)} columns, got {len(row)}"
                )
            sample_ids.append(row[0])
            patient_ids.append(row[1] if has_patient else row[0])
            rows.append([_parse_float(v, row_no, header[first + j]) for j, v in enumerate(row[first:])])
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return sample_ids, patient_ids, matrix


def read_labels_csv(path):
    """Read ``sample_id,<name_1>,...`` rows; returns ``(sample_ids, names, matrix)``.

    An optional ``is_normal`` column is checked against the all-zero rule and
    dropped.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty labels file") from None
        if not header or header[0] != "sample_id":
            raise DatasetError(f"{path}: header must start with 'sample_id'")
        names = header[1:]
        normal_col = names.index(NORMAL_COLUMN) if NORMAL_COLUMN in names else None
        sample_ids, rows = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}: row {row_no}: expected {len(header)} columns, got {len(row)}"
                )
            values = []
            for name, v in zip(names, row[1:]):
                if v not in ("0", "1"):
                    raise DatasetError(f"{path}: row {row_no}: column {name!r}: label must be 0 or 1, got {v!r}")
                values.append(int(v))
            if normal_col is not None:
                flag = values.pop(normal_col)
                if flag != int(not any(values)):
                    raise DatasetError(
                        f"{path}: row {row_no}: {NORMAL_COLUMN}={flag} disagrees with condition labels"
                    )
            sample_ids.append(row[0])
            rows.append(values)
    if normal_col is not None:
        names = names[:normal_col] + names[normal_col + 1:]
    matrix = np.array(rows, dtype=np.int8).reshape(len(rows), len(names))
    return sample_ids, names, matrix


def load_dataset(features_path, labels_path):
    """Load and validate a features CSV and a labels CSV into a :class:`Dataset`."""
    f_ids, patients, features = read_features_csv(features_path)
    l_ids, names, labels = read_labels_csv(labels_path)

    for what, ids in (("features", f_ids), ("labels", l_ids)):
        seen = set()
        for i, sid in enumerate(ids, start=1):
            if sid in seen:
                raise DatasetError(f"{what} file: row {i}: duplicate sample_id {sid!r}")
            seen.add(sid)
    label_row = {sid: i for i, sid in enumerate(l_ids)}
    missing = [s for s in f_ids if s not in label_row]
    if missing or len(f_ids) != len(l_ids):
        extra = sorted(set(l_ids) - set(f_ids))
        raise DatasetError(
            f"sample ids differ between files (missing labels: {missing[:5]}, missing features: {extra[:5]})"
        )
    labels = labels[[label_row[s] for s in f_ids]]
    return Dataset.from_arrays(f_ids, patients, features, labels, names)


def build_balanced_subset(dataset, M, per_condition_cap=1500, normal_count=5000, seed=0):
    """Select the balanced subset used to train the frequent-condition detector.

    Conditions ``M-1, ..., 0`` (rarest of the frequent ones first) each draw
    random positives until every positive is selected or the number of
    selected positives for that condition, counting earlier picks, reaches
    ``per_condition_cap``. Samples positive for any condition beyond the
    first ``M`` are never selected. Finally up to ``normal_count`` all-zero
    samples are drawn.

    Returns
    -------
    set of str
        Selected sample ids.
    """
    N = dataset.n_conditions
    if not 0 <= M <= N:
        raise ValueError(f"M must be in [0, {N}], got {M}")
    rng = make_rng(seed)
    labels = dataset.labels
    has_rare = labels[:, M:].any(axis=1)
    selected = np.zeros(len(dataset), dtype=bool)

    for c in range(M - 1, -1, -1):
        positive = labels[:, c] == 1
        count = int(np.sum(positive & selected))
        if count >= per_condition_cap:
            continue
        candidates = np.flatnonzero(positive & ~has_rare & ~selected)
        candidates = rng.permutation(candidates)
        take = candidates[: per_condition_cap - count]
        selected[take] = True

    normals = np.flatnonzero(dataset.normal_mask() & ~selected)
    normals = rng.permutation(normals)[: min(normal_count, len(normals))]
    selected[normals] = True

    ids = dataset.sample_ids
    return {ids[i] for i in np.flatnonzero(selected)}


@dataclass(frozen=True)
class SplitAssignment:
    assignment: dict
    seed: int

    def members(self, split):
        return [s for s, a in self.assignment.items() if a == split]

    def counts(self):
        return {s: sum(1 for a in self.assignment.values() if a == s) for s in SPLITS}


@dataclass(frozen=True)
class FoldAssignment:
    assignment: dict
    n_folds: int

    def members(self, fold):
        return [s for s, f in self.assignment.items() if f == fold]


def _greedy_grouped_split(groups, label_rows, fractions, order_key):
    """Assign patient groups to splits, largest relative deficit first.

    ``groups`` is a list of row-index arrays, ``label_rows`` the matching label
    matrix, ``fractions`` the target share of each split (0 excludes a split).
    The last column of the tracked counts is the sample count itself.
    """
    tracked = np.column_stack([label_rows, np.ones(len(label_rows), dtype=np.int64)]).astype(np.float64)
    totals = tracked.sum(axis=0)
    scale = np.where(totals > 0, totals, 1.0)
    fractions = np.asarray(fractions, dtype=np.float64)
    targets = fractions[:, None] * totals[None, :]
    current = np.zeros_like(targets)
    allowed = fractions > 0
    out = np.empty(len(groups), dtype=np.int64)

    for g in sorted(range(len(groups)), key=order_key):
        vec = tracked[groups[g]].sum(axis=0)
        present = vec > 0
        if present[:-1].any():
            # sample count only breaks ties for labelled groups; otherwise the
            # large early size deficit of the biggest split swamps the labels
            present[-1] = False
        deficit = (targets - current) / scale
        score = (deficit[:, present] * vec[present]).sum(axis=1)
        size_deficit = deficit[:, -1]
        best = None
        for s in np.flatnonzero(allowed):
            key = (score[s], size_deficit[s], -s)
            if best is None or key > best[0]:
                best = (key, s)
        s = best[1]
        current[s] += vec
        out[g] = s
    return out


def assign_splits(dataset, balanced, seed=0):
    """Patient-grouped LEARN/VALID/TEST assignment.

    The balanced subset is split 80/10/10 and the remaining samples 0/20/80.
    A patient whose samples fall on both sides goes wholly to the side holding
    most of them (ties go to the balanced side). Within each side, patient
    groups are placed greedily into the split with the largest relative
    deficit for the conditions they carry, rarest conditions first.
    """
    ids = dataset.sample_ids
    unknown = set(balanced) - set(ids)
    if unknown:
        raise ValueError(f"balanced subset contains unknown sample ids: {sorted(unknown)[:5]}")
    rng = make_rng(seed)
    in_balanced = np.array([s in balanced for s in ids])
    patients = np.array(dataset.patient_ids, dtype=object)

    by_patient = {}
    for i, p in enumerate(patients):
        by_patient.setdefault(p, []).append(i)
    patient_names = sorted(by_patient)
    rank = np.empty(len(patient_names), dtype=np.int64)
    rank[rng.permutation(len(patient_names))] = np.arange(len(patient_names))
    shuffled_rank = dict(zip(patient_names, rank.tolist()))

    side_groups = {True: [], False: []}
    for p in patient_names:
        rows = np.array(by_patient[p])
        n_bal = int(in_balanced[rows].sum())
        side_groups[n_bal * 2 >= len(rows)].append((p, rows))

    freq = np.asarray(dataset.frequencies, dtype=np.float64)
    assignment = {}
    for side, fractions in ((True, (0.8, 0.1, 0.1)), (False, (0.0, 0.2, 0.8))):
        entries = side_groups[side]
        if not entries:
            continue
        groups = []
        offset = 0
        flat = []
        for _, rows in entries:
            groups.append(np.arange(offset, offset + len(rows)))
            flat.extend(rows)
            offset += len(rows)
        label_rows = dataset.labels[np.array(flat)]

        def order_key(g, entries=entries, groups=groups, label_rows=label_rows):
            present = label_rows[groups[g]].any(axis=0)
            rarest = freq[present].min() if present.any() else np.inf
            return (rarest, shuffled_rank[entries[g][0]])

        chosen = _greedy_grouped_split(groups, label_rows, fractions, order_key)
        for (_, rows), s in zip(entries, chosen):
            for i in rows:
                assignment[ids[i]] = SPLITS[s]

    ordered = {s: assignment[s] for s in ids}
    return SplitAssignment(assignment=ordered, seed=seed)


def assign_folds(sample_ids, patient_ids, n_folds=10, seed=0):
    """Deal shuffled patients round-robin into ``n_folds`` folds."""
    if len(sample_ids) != len(patient_ids):
        raise ValueError("sample_ids and patient_ids must be aligned")
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    patients = sorted(set(patient_ids))
    if len(patients) < n_folds:
        raise ValueError(f"{len(patients)} patients cannot fill {n_folds} folds")
    rng = make_rng(seed)
    order = rng.permutation(len(patients))
    fold_of = {patients[k]: pos % n_folds for pos, k in enumerate(order)}
    assignment = {s: int(fold_of[p]) for s, p in zip(sample_ids, patient_ids)}
    return FoldAssignment(assignment=assignment, n_folds=n_folds)


def write_assignment_csv(path, assignment, column):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", column])
        for sid, value in assignment.items():
            writer.writerow([sid, value])


def read_assignment_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header[1], {row[0]: row[1] for row in reader if row}


def read_split_csv(path, seed=0):
    column, raw = read_assignment_csv(path)
    bad = {v for v in raw.values() if v not in SPLITS}
    if column != "assignment" or bad:
        raise DatasetError(f"{path}: not a split file")
    return SplitAssignment(assignment=raw, seed=seed)


def read_fold_csv(path):
    column, raw = read_assignment_csv(path)
    if column != "fold":
        raise DatasetError(f"{path}: not a fold file")
    folds = {s: int(v) for s, v in raw.items()}
    return FoldAssignment(assignment=folds, n_folds=max(folds.values()) + 1)
