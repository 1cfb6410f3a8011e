import io
import json
import os
import tempfile
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from confnorm.core.config import config
from confnorm.core.errors import InputFormatError
from confnorm.models.schemas import ConfusionMatrix, EmbeddedDataset, ExperimentReport, ScenarioConfig

FLOAT_FORMAT = f"%.{config.SIGNIFICANT_DIGITS}g"


def _rounded(value: float) -> float:
    return float(FLOAT_FORMAT % value)


def atomic_write(path: str, text: str) -> None:
    """Write text to path through a temp file in the same directory and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as tmp:
            tmp.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_json(path: str, payload: Dict[str, Any]) -> None:
    atomic_write(path, json.dumps(payload, indent=2) + "\n")


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise InputFormatError(f"cannot read {path}: {e.strerror}")


def _is_json(path: str) -> bool:
    extension = os.path.splitext(path)[1].lower()
    if extension not in config.CONFUSION_FORMATS:
        raise InputFormatError(f"Unsupported file format: {path} (use one of {config.CONFUSION_FORMATS})")
    return extension == ".json"


def read_confusion(path: str) -> ConfusionMatrix:
    """Parse a confusion matrix from CSV (`label,<class_1>,...`) or JSON (`{"labels", "entries"}`)."""
    text = _read_text(path)
    try:
        if _is_json(path):
            data = json.loads(text)
            if not isinstance(data, dict) or "entries" not in data:
                raise InputFormatError(f"{path}: expected an object with 'labels' and 'entries'")
            labels = [str(label) for label in data.get("labels") or []]
            entries = np.asarray(data["entries"], dtype=np.float64)
        else:
            df = pd.read_csv(io.StringIO(text), dtype={"label": str})
            if df.columns[0] != "label":
                raise InputFormatError(f"{path}: first header field must be 'label'")
            labels = [str(label) for label in df.columns[1:]]
            rows = df["label"].tolist()
            if rows != labels:
                raise InputFormatError(f"{path}: row labels {rows} do not match column labels {labels}")
            entries = df.iloc[:, 1:].to_numpy(dtype=np.float64)
    except InputFormatError:
        raise
    except (ValueError, TypeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputFormatError(f"{path}: malformed confusion matrix ({e})")
    try:
        return ConfusionMatrix(entries=entries, labels=labels)
    except ValidationError as e:
        raise InputFormatError(f"{path}: {e.errors()[0]['msg']}")


def write_confusion(path: str, M: ConfusionMatrix) -> None:
    """Write M at 12 significant digits, in JSON when path ends in .json, else CSV."""
    if _is_json(path):
        entries = [[_rounded(x) for x in row] for row in M.entries]
        write_json(path, {"labels": M.labels, "entries": entries})
        return
    df = pd.DataFrame(M.entries, columns=M.labels)
    df.insert(0, "label", M.labels)
    atomic_write(path, df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def read_labels(path: str) -> List[str]:
    """One class label per line; blank lines are ignored."""
    labels = [line.strip() for line in _read_text(path).splitlines() if line.strip()]
    if len(set(labels)) != len(labels):
        raise InputFormatError(f"{path}: duplicate labels")
    if len(labels) < 2:
        raise InputFormatError(f"{path}: at least 2 labels are required")
    return labels


def read_embeddings(path: str, labels: Optional[Sequence[str]] = None) -> Tuple[EmbeddedDataset, List[str]]:
    """Parse `id,true_label,predicted_label,e_1,...,e_n`; returns the dataset and the record ids.

    Without `labels`, classes are numbered in order of first appearance.
    """
    text = _read_text(path)
    try:
        df = pd.read_csv(io.StringIO(text), dtype={"id": str, "true_label": str, "predicted_label": str})
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputFormatError(f"{path}: malformed embeddings file ({e})")
    missing = [c for c in ("id", "true_label", "predicted_label") if c not in df.columns]
    dims = [c for c in df.columns if c.startswith("e_")]
    if missing or not dims:
        raise InputFormatError(f"{path}: expected columns id,true_label,predicted_label,e_1,...; missing {missing or ['e_*']}")
    if df[["true_label", "predicted_label"]].isna().any().any():
        raise InputFormatError(f"{path}: empty label field")

    true_labels = df["true_label"].to_numpy(dtype=str)
    predicted_labels = df["predicted_label"].to_numpy(dtype=str)
    if labels is None:
        classes = [str(c) for c in pd.unique(np.column_stack([true_labels, predicted_labels]).ravel())]
    else:
        classes = list(labels)
        unknown = sorted(set(true_labels).union(predicted_labels) - set(classes))
        if unknown:
            raise InputFormatError(f"{path}: labels {unknown} are not in the labels file")
    index = {name: k for k, name in enumerate(classes)}
    try:
        ds = EmbeddedDataset(
            embeddings=df[dims].to_numpy(dtype=np.float64),
            labels=[index[y] for y in true_labels],
            predictions=[index[y] for y in predicted_labels],
            classes=classes,
        )
    except (ValueError, TypeError) as e:
        raise InputFormatError(f"{path}: {e}")
    return ds, df["id"].astype(str).tolist()


def write_embeddings(path: str, ds: EmbeddedDataset, ids: Optional[Sequence[str]] = None) -> None:
    df = pd.DataFrame(ds.embeddings, columns=[f"e_{k + 1}" for k in range(ds.dim)])
    classes = np.asarray(ds.classes)
    df.insert(0, "predicted_label", classes[ds.predictions])
    df.insert(0, "true_label", classes[ds.labels])
    df.insert(0, "id", list(ids) if ids is not None else range(len(ds)))
    atomic_write(path, df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def load_scenario(path: Optional[str] = None, **overrides) -> ScenarioConfig:
    """Scenario JSON merged with non-None overrides (given by field name)."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(_read_text(path))
        except json.JSONDecodeError as e:
            raise InputFormatError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})")
        if not isinstance(data, dict):
            raise InputFormatError(f"{path}: scenario must be a JSON object")
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "n_classes" in overrides:
        data.pop("C", None)
    try:
        return ScenarioConfig.model_validate({**data, **overrides})
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "scenario"
        raise InputFormatError(f"{path or 'scenario'}: {where}: {first['msg']}")


def write_scores(path: str, report: ExperimentReport) -> None:
    """Long-format per-seed scores: kind,seed,score."""
    rows = [
        {"kind": kind, "seed": seed, "score": score}
        for kind, values in report.scores.items()
        for seed, score in zip(report.seeds, values)
    ]
    df = pd.DataFrame(rows, columns=["kind", "seed", "score"])
    atomic_write(path, df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def write_summary(path: str, report: ExperimentReport) -> None:
    columns = ["kind", "min", "q1", "median", "q3", "max", "win_rate"]
    df = pd.DataFrame([row.model_dump() for row in report.summary], columns=columns)
    atomic_write(path, df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))
