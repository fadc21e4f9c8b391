"""
AUC report over a score CSV.

AUCs are computed per (machine_type, machine_id, kind), and per SNR condition
when the manifest carries SNR tags. Type averages weight every machine ID
equally, and so does the overall average.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from evaluation.metrics import compute_auc
from signal_frontend.manifest import DatasetManifest, Split
from utils.errors import EvaluationError

logger = logging.getLogger(__name__)

REPORT_KINDS: Tuple[str, ...] = ("out", "arc", "maha", "combined")
KIND_COLUMNS: Dict[str, str] = {"out": "a_out", "arc": "a_arc", "maha": "a_maha", "combined": "combined"}
REPORT_COLUMNS = ["machine_type", "machine_id", "kind", "auc"]


@dataclass
class EvalReport:
    """Long-format AUC table plus the aggregates derived from it."""

    per_id: pd.DataFrame
    kinds: Tuple[str, ...] = REPORT_KINDS
    skipped: List[Tuple[str, int]] = field(default_factory=list)

    @property
    def has_snr(self) -> bool:
        return "snr_tag" in self.per_id.columns

    def _group_keys(self) -> List[str]:
        return ["snr_tag"] if self.has_snr else []

    def type_means(self) -> pd.DataFrame:
        keys = self._group_keys() + ["machine_type", "kind"]
        return self.per_id.groupby(keys, sort=True, as_index=False)["auc"].mean()

    def overall(self) -> pd.DataFrame:
        keys = self._group_keys() + ["kind"]
        return self.per_id.groupby(keys, sort=True, as_index=False)["auc"].mean()

    def auc(self, machine_type: str, machine_id: int, kind: str, snr_tag: Optional[str] = None) -> float:
        rows = self.per_id[
            (self.per_id["machine_type"] == machine_type)
            & (self.per_id["machine_id"] == machine_id)
            & (self.per_id["kind"] == kind)
        ]
        if snr_tag is not None and self.has_snr:
            rows = rows[rows["snr_tag"] == snr_tag]
        if rows.empty:
            raise KeyError(f"No AUC for {machine_type}/id_{machine_id:02d} kind '{kind}'")
        return float(rows["auc"].iloc[0])

    def to_csv(self, path: Union[str, Path]) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        columns = self._group_keys() + REPORT_COLUMNS
        self.per_id[columns].to_csv(out, index=False, float_format="%.10g")
        return out

    def render(self) -> str:
        """Aligned text table, AUC in percent; kinds without scores show '-'."""
        rows: List[Dict[str, str]] = []
        groups = [(None, self.per_id)] if not self.has_snr else list(self.per_id.groupby("snr_tag", sort=True))
        for snr_tag, frame in groups:
            label = {"snr": str(snr_tag)} if self.has_snr else {}
            for machine_type, per_type in frame.groupby("machine_type", sort=True):
                for machine_id, per_machine in per_type.groupby("machine_id", sort=True):
                    rows.append({**label, "machine_type": machine_type, "machine_id": f"id_{machine_id:02d}",
                                 **self._cells(per_machine)})
                rows.append({**label, "machine_type": machine_type, "machine_id": "Average",
                             **self._cells(per_type, average=True)})
            rows.append({**label, "machine_type": "Total", "machine_id": "Average",
                         **self._cells(frame, average=True)})
        table = pd.DataFrame(rows, columns=(["snr"] if self.has_snr else []) + ["machine_type", "machine_id",
                                                                                  *REPORT_KINDS])
        return table.to_string(index=False)

    def _cells(self, frame: pd.DataFrame, average: bool = False) -> Dict[str, str]:
        cells = {}
        for kind in REPORT_KINDS:
            values = frame.loc[frame["kind"] == kind, "auc"]
            if kind not in self.kinds or values.empty:
                cells[kind] = "-"
            else:
                cells[kind] = f"{100.0 * (values.mean() if average else values.iloc[0]):.2f}"
        return cells


def load_scores(scores: Union[str, Path, pd.DataFrame]) -> pd.DataFrame:
    if isinstance(scores, pd.DataFrame):
        return scores
    path = Path(scores)
    if not path.exists():
        raise EvaluationError(f"Score CSV not found: {path}")
    return pd.read_csv(path)


def build_report(
    scores: Union[str, Path, pd.DataFrame],
    manifest: DatasetManifest,
    split: Split = Split.TEST,
) -> EvalReport:
    """
    Join scores with the manifest's labels and compute per-ID AUCs.

    Machine IDs whose test clips contain a single class are left out with a
    warning.

    Raises:
        EvaluationError: no test clips, or test clips missing from the score CSV
    """
    frame = load_scores(scores)
    if "path" not in frame.columns:
        raise EvaluationError("Score CSV lacks a 'path' column")

    entries = manifest.select(split=split)
    if not entries:
        raise EvaluationError(f"Manifest has no '{Split(split).value}' clips to evaluate")

    labels = pd.DataFrame({
        "path": [e.path for e in entries],
        "label_type": [e.machine_type for e in entries],
        "label_id": [e.machine_id for e in entries],
        "anomalous": [e.is_anomalous for e in entries],
        "snr_tag": [e.snr_tag or "" for e in entries],
    })
    merged = labels.merge(frame.drop_duplicates("path"), on="path", how="left", indicator=True)
    missing = merged.loc[merged["_merge"] == "left_only", "path"].tolist()
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise EvaluationError(f"{len(missing)} test clips have no scores: {shown}")

    kinds = tuple(
        k for k in REPORT_KINDS
        if KIND_COLUMNS[k] in merged.columns and merged[KIND_COLUMNS[k]].notna().any()
    )
    if not kinds:
        raise EvaluationError("Score CSV carries none of the score columns")
    with_snr = bool((merged["snr_tag"] != "").any())

    records, skipped = [], []
    keys = (["snr_tag"] if with_snr else []) + ["label_type", "label_id"]
    for key, group in merged.groupby(keys, sort=True):
        key = key if isinstance(key, tuple) else (key,)
        machine_type, machine_id = key[-2], int(key[-1])
        if group["anomalous"].all() or not group["anomalous"].any():
            logger.warning(f"Skipping {machine_type}/id_{machine_id:02d}: test clips of one class only")
            skipped.append((machine_type, machine_id))
            continue
        for kind in kinds:
            column = group[KIND_COLUMNS[kind]]
            if column.isna().any():
                raise EvaluationError(f"Missing '{kind}' scores for {machine_type}/id_{machine_id:02d}")
            record = {
                "machine_type": machine_type,
                "machine_id": machine_id,
                "kind": kind,
                "auc": compute_auc(column.to_numpy(dtype=np.float64), group["anomalous"].to_numpy()),
            }
            if with_snr:
                record = {"snr_tag": key[0], **record}
            records.append(record)

    if not records:
        raise EvaluationError("No machine ID has both normal and anomalous test clips")
    columns = (["snr_tag"] if with_snr else []) + REPORT_COLUMNS
    per_id = pd.DataFrame(records, columns=columns)
    logger.info(f"Report over {per_id[['machine_type', 'machine_id']].drop_duplicates().shape[0]} machines")
    return EvalReport(per_id=per_id, kinds=kinds, skipped=skipped)
