"""
Dataset manifests for MIMII-style corpora.

Supported layouts:
    mimii     <root>/[<snr dir>/]<type>/id_XX/{normal,abnormal}/*.wav
    dcase     <root>/<type>/{train,test}/{normal,anomaly}_id_XX_*.wav
    flat_csv  a manifest CSV (path,machine_type,machine_id,condition,split[,snr_tag])

Entry paths are stored relative to the manifest root so a manifest CSV can be
moved together with its audio.
"""

import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Tuple, Union

import pandas as pd

from signal_frontend.audio import MachineCondition
from utils.errors import ManifestError

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["path", "machine_type", "machine_id", "condition", "split"]
MANIFEST_FILENAME = "manifest.csv"

_ID_DIR = re.compile(r"^id_(\d+)$")
_DCASE_FILE = re.compile(r"^(normal|anomaly)_id_(\d+)_.*\.wav$", re.IGNORECASE)
_SNR_DIR = re.compile(r"^(-?\d+)_?dB", re.IGNORECASE)

_CONDITION_ALIASES = {
    "normal": MachineCondition.NORMAL,
    "abnormal": MachineCondition.ANOMALOUS,
    "anomaly": MachineCondition.ANOMALOUS,
    "anomalous": MachineCondition.ANOMALOUS,
    "unknown": MachineCondition.UNKNOWN,
}


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    machine_type: str
    machine_id: int
    condition: MachineCondition
    split: Split
    snr_tag: Optional[str] = None

    @property
    def is_anomalous(self) -> bool:
        return self.condition == MachineCondition.ANOMALOUS


@dataclass
class DatasetManifest:
    """Sorted list of corpus entries plus ingestion metadata."""

    entries: List[ManifestEntry] = field(default_factory=list)
    root: Path = field(default_factory=Path)
    snr_tag: Optional[str] = None
    skipped: int = 0
    skipped_paths: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        """Absolute location of an entry's audio file."""
        path = Path(entry.path)
        return path if path.is_absolute() else self.root / path

    def machine_types(self) -> List[str]:
        return sorted({e.machine_type for e in self.entries})

    def machine_ids(self, machine_type: str, split: Optional[Split] = None) -> List[int]:
        return sorted({
            e.machine_id for e in self.select(machine_type=machine_type, split=split)
        })

    def select(
        self,
        machine_type: Optional[str] = None,
        split: Optional[Union[Split, str]] = None,
        condition: Optional[Union[MachineCondition, str]] = None,
        exclude_type: Optional[str] = None,
    ) -> List[ManifestEntry]:
        """Filter entries; every criterion left as None matches everything."""
        split = Split(split) if split is not None else None
        condition = MachineCondition(condition) if condition is not None else None
        return [
            e for e in self.entries
            if (machine_type is None or e.machine_type == machine_type)
            and (exclude_type is None or e.machine_type != exclude_type)
            and (split is None or e.split == split)
            and (condition is None or e.condition == condition)
        ]

    def counts(self) -> Dict[Tuple[str, int, str, str], int]:
        """Entry counts per (machine_type, machine_id, condition, split)."""
        return dict(Counter(
            (e.machine_type, e.machine_id, e.condition.value, e.split.value) for e in self.entries
        ))

    def validate(self, check_coverage: bool = True) -> None:
        """
        Enforce manifest invariants.

        Raises:
            ManifestError: anomalous clips in the training split, or (when
                           check_coverage) test machines absent from training
        """
        bad_train = [e.path for e in self.entries if e.split == Split.TRAIN and e.is_anomalous]
        if bad_train:
            raise ManifestError(
                f"Training split must contain normal clips only; {len(bad_train)} anomalous "
                f"entries found (first: {bad_train[0]})"
            )
        if not check_coverage:
            return
        train_pairs = {(e.machine_type, e.machine_id) for e in self.entries if e.split == Split.TRAIN}
        test_pairs = {(e.machine_type, e.machine_id) for e in self.entries if e.split == Split.TEST}
        missing = sorted(test_pairs - train_pairs)
        if missing:
            raise ManifestError(f"Test machines without training data: {missing}")

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "path": e.path,
                "machine_type": e.machine_type,
                "machine_id": e.machine_id,
                "condition": e.condition.value,
                "split": e.split.value,
                "snr_tag": e.snr_tag or "",
            }
            for e in self.entries
        ]
        return pd.DataFrame(rows, columns=MANIFEST_COLUMNS + ["snr_tag"])


def _shared_snr_tag(entries: Iterable[ManifestEntry]) -> Optional[str]:
    tags = {e.snr_tag for e in entries}
    return tags.pop() if len(tags) == 1 else None


def _snr_from_parts(parts: Iterable[str]) -> Optional[str]:
    for part in parts:
        match = _SNR_DIR.match(part)
        if match:
            return f"{int(match.group(1))}dB"
    return None


def _finish(entries: List[ManifestEntry], root: Path, skipped_paths: List[str], check_coverage: bool) -> DatasetManifest:
    entries = sorted(entries, key=lambda e: e.path)
    manifest = DatasetManifest(
        entries=entries,
        root=root,
        snr_tag=_shared_snr_tag(entries),
        skipped=len(skipped_paths),
        skipped_paths=sorted(skipped_paths),
    )
    if skipped_paths:
        logger.warning(f"Skipped {len(skipped_paths)} unparsable manifest entries under {root}")
    manifest.validate(check_coverage=check_coverage)
    logger.info(f"Loaded manifest with {len(entries)} entries from {root}")
    for (machine_type, machine_id, condition, split), n in sorted(manifest.counts().items()):
        logger.debug(f"  {machine_type}/id_{machine_id:02d} {split} {condition}: {n}")
    return manifest


def _scan_mimii(root: Path) -> Tuple[List[ManifestEntry], List[str]]:
    entries, skipped = [], []
    for wav in sorted(root.rglob("*.wav")):
        rel = wav.relative_to(root)
        parts = rel.parts
        if len(parts) < 4:
            skipped.append(rel.as_posix())
            continue
        machine_type, id_dir, condition_dir = parts[-4], parts[-3], parts[-2]
        id_match = _ID_DIR.match(id_dir)
        condition = _CONDITION_ALIASES.get(condition_dir.lower())
        if not id_match or condition not in (MachineCondition.NORMAL, MachineCondition.ANOMALOUS):
            skipped.append(rel.as_posix())
            continue
        entries.append(ManifestEntry(
            path=rel.as_posix(),
            machine_type=machine_type,
            machine_id=int(id_match.group(1)),
            condition=condition,
            split=Split.TRAIN if condition == MachineCondition.NORMAL else Split.TEST,
            snr_tag=_snr_from_parts(parts[:-4]),
        ))
    return entries, skipped


def _scan_dcase(root: Path) -> Tuple[List[ManifestEntry], List[str]]:
    entries, skipped = [], []
    for wav in sorted(root.rglob("*.wav")):
        rel = wav.relative_to(root)
        parts = rel.parts
        match = _DCASE_FILE.match(parts[-1])
        if len(parts) < 3 or not match or parts[-2].lower() not in ("train", "test"):
            skipped.append(rel.as_posix())
            continue
        entries.append(ManifestEntry(
            path=rel.as_posix(),
            machine_type=parts[-3],
            machine_id=int(match.group(2)),
            condition=_CONDITION_ALIASES[match.group(1).lower()],
            split=Split(parts[-2].lower()),
            snr_tag=_snr_from_parts(parts[:-3]),
        ))
    return entries, skipped


def _read_csv(csv_path: Path) -> Tuple[List[ManifestEntry], List[str]]:
    try:
        frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ManifestError(f"Cannot read manifest CSV {csv_path}: {e}") from e

    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise ManifestError(f"Manifest CSV {csv_path} lacks columns {missing}")

    entries, skipped = [], []
    for row in frame.itertuples(index=False):
        try:
            condition = _CONDITION_ALIASES[row.condition.strip().lower()]
            entries.append(ManifestEntry(
                path=row.path.strip(),
                machine_type=row.machine_type.strip(),
                machine_id=int(row.machine_id),
                condition=condition,
                split=Split(row.split.strip().lower()),
                snr_tag=(getattr(row, "snr_tag", "") or "").strip() or None,
            ))
        except (KeyError, ValueError, AttributeError):
            skipped.append(str(row.path))
            continue
        if not entries[-1].path or not entries[-1].machine_type:
            skipped.append(str(row.path))
            entries.pop()
    return entries, skipped


def load_manifest(
    root_dir: Union[str, Path],
    layout: Literal["mimii", "dcase", "flat_csv"] = "mimii",
    check_coverage: bool = True,
) -> DatasetManifest:
    """
    Discover every usable clip under root_dir.

    For flat_csv, root_dir may be the CSV itself or a directory holding
    manifest.csv. Unparsable files or rows are skipped and counted in
    DatasetManifest.skipped.

    Raises:
        ManifestError: missing root, unknown layout, unreadable CSV or an
                       invariant violation
    """
    root = Path(root_dir)
    if not root.exists():
        raise ManifestError(f"Dataset root does not exist: {root}")

    if layout == "mimii":
        entries, skipped = _scan_mimii(root)
    elif layout == "dcase":
        entries, skipped = _scan_dcase(root)
    elif layout == "flat_csv":
        csv_path = root / MANIFEST_FILENAME if root.is_dir() else root
        if not csv_path.exists():
            raise ManifestError(f"Manifest CSV not found: {csv_path}")
        entries, skipped = _read_csv(csv_path)
        root = csv_path.parent
    else:
        raise ManifestError(f"Unknown manifest layout: {layout}")

    return _finish(entries, root, skipped, check_coverage)


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    """Write the manifest CSV (UTF-8, header row)."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.to_frame().to_csv(out, index=False, encoding="utf-8")
    return out


def holdout_test_normals(manifest: DatasetManifest) -> DatasetManifest:
    """
    Move normals into the test split so it holds as many normal as anomalous
    clips per machine (the usual MIMII evaluation split).

    The last normals in sorted path order are moved; at least one normal per
    machine stays in training.
    """
    anomalies = Counter(
        (e.machine_type, e.machine_id) for e in manifest.entries
        if e.split == Split.TEST and e.is_anomalous
    )
    test_normals = Counter(
        (e.machine_type, e.machine_id) for e in manifest.entries
        if e.split == Split.TEST and not e.is_anomalous
    )
    train_normals: Dict[Tuple[str, int], List[int]] = defaultdict(list)
    for index, entry in enumerate(manifest.entries):
        if entry.split == Split.TRAIN and entry.condition == MachineCondition.NORMAL:
            train_normals[(entry.machine_type, entry.machine_id)].append(index)

    moved = set()
    for key, indices in train_normals.items():
        wanted = max(anomalies.get(key, 0) - test_normals.get(key, 0), 0)
        wanted = min(wanted, len(indices) - 1)
        if wanted > 0:
            moved.update(indices[-wanted:])

    entries = [
        replace(e, split=Split.TEST) if i in moved else e
        for i, e in enumerate(manifest.entries)
    ]
    logger.info(f"Held out {len(moved)} normal clips for testing")
    return replace(manifest, entries=entries)
