"""Accuracy protocol, error quadrants, oracle, activation export and the
comparison-table CSV.

A prediction counts as correct when the top-1 class is any of the
product's shelves.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ReportError(ValueError):
    pass


def correctness(predictions, shelves) -> np.ndarray:
    predictions = list(np.asarray(predictions).reshape(-1))
    shelves = list(shelves)
    if len(predictions) != len(shelves):
        raise ValueError(f"{len(predictions)} predictions for {len(shelves)} shelf sets")
    return np.array([int(p) in s for p, s in zip(predictions, shelves)], dtype=bool)


def top1_accuracy(predictions, shelves) -> float:
    hits = correctness(predictions, shelves)
    return float(hits.mean()) if hits.size else float("nan")


@dataclass
class CorrectnessVectors:
    text_correct: np.ndarray
    image_correct: np.ndarray

    def __post_init__(self):
        self.text_correct = np.asarray(self.text_correct, dtype=bool)
        self.image_correct = np.asarray(self.image_correct, dtype=bool)
        if self.text_correct.shape != self.image_correct.shape:
            raise ValueError("correctness vectors differ in length")

    @classmethod
    def from_pairs(cls, pairs) -> "CorrectnessVectors":
        return cls(pairs.text_correct(), pairs.image_correct())

    def __len__(self) -> int:
        return len(self.text_correct)


@dataclass
class QuadrantReport:
    both: int          # text right, image right
    text_only: int     # text right, image wrong
    image_only: int    # text wrong, image right
    neither: int

    @property
    def n(self) -> int:
        return self.both + self.text_only + self.image_only + self.neither

    @property
    def rates(self) -> dict:
        n = self.n
        return {
            "both": self.both / n,
            "text_only": self.text_only / n,
            "image_only": self.image_only / n,
            "neither": self.neither / n,
        }

    def lines(self) -> list[str]:
        r = self.rates
        return [
            f"text+ image+ : {self.both:6d} ({100 * r['both']:.1f}%)",
            f"text+ image- : {self.text_only:6d} ({100 * r['text_only']:.1f}%)",
            f"text- image+ : {self.image_only:6d} ({100 * r['image_only']:.1f}%)",
            f"text- image- : {self.neither:6d} ({100 * r['neither']:.1f}%)",
        ]


def quadrant_report(v: CorrectnessVectors) -> QuadrantReport:
    t, i = v.text_correct, v.image_correct
    return QuadrantReport(
        both=int(np.sum(t & i)),
        text_only=int(np.sum(t & ~i)),
        image_only=int(np.sum(~t & i)),
        neither=int(np.sum(~t & ~i)),
    )


def oracle_accuracy(v: CorrectnessVectors) -> float:
    """Accuracy of a selector that is right whenever either network is."""
    return float(np.mean(v.text_correct | v.image_correct))


def policy_binary_accuracy(policy_predictions, policy_labels) -> float:
    pred = np.asarray(policy_predictions).astype(np.int64).reshape(-1)
    lab = np.asarray(policy_labels).astype(np.int64).reshape(-1)
    if pred.shape != lab.shape:
        raise ValueError("policy predictions and labels differ in length")
    return float(np.mean(pred == lab))


# ---------------------------------------------------------------------------
# activations

def write_activations(matrix: np.ndarray, ids, path) -> tuple[Path, Path]:
    """Little-endian float32 row-major matrix + newline-delimited id manifest
    (``<path>.ids``)."""
    matrix = np.asarray(matrix)
    ids = list(ids)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ValueError(f"activation matrix {matrix.shape} does not match {len(ids)} ids")
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    manifest = path.with_name(path.name + ".ids")
    manifest.write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
    return path, manifest


def read_activations(path, dim: int) -> tuple[np.ndarray, list[str]]:
    path = Path(path)
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    ids = path.with_name(path.name + ".ids").read_text(encoding="utf-8").splitlines()
    return flat.reshape(len(ids), dim), ids


def export_activations(model, inputs, ids, path) -> np.ndarray:
    """Hidden vectors of a trained tower for every product, in dataset order."""
    matrix = model.hidden_matrix(inputs)
    write_activations(matrix, ids, path)
    return matrix


# ---------------------------------------------------------------------------
# report

HEADER = ["Policy input", "# layers", "q", "Text", "Image", "Policy", "Oracle", "Policy accuracy"]


@dataclass
class EvalReport:
    """One table row. Accuracies are fractions; ``layers``/``q``/
    ``policy_accuracy`` may be None (printed as ``-``)."""

    policy_input: str
    layers: int | None
    q: float | None
    text: float
    image: float
    policy: float
    oracle: float
    policy_accuracy: float | None = None

    @property
    def policy_delta(self) -> float:
        return _pct(self.policy) - _pct(self.text)

    @property
    def oracle_delta(self) -> float:
        return _pct(self.oracle) - _pct(self.text)


def _pct(x: float) -> float:
    # Percent with one decimal; deltas are taken between rounded values so
    # the printed columns stay consistent.
    return round(100 * x + 1e-9, 1)


def _fmt_pct(x: float) -> str:
    return f"{_pct(x):.1f}"


def _fmt_delta(d: float) -> str:
    d = round(d + 0.0, 1)
    return f"({'+' if d >= 0 else '-'}{abs(d):.1f})"


def _fmt_opt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


def format_row(r: EvalReport) -> list[str]:
    return [
        r.policy_input,
        _fmt_opt(r.layers),
        _fmt_opt(r.q),
        _fmt_pct(r.text),
        _fmt_pct(r.image),
        f"{_fmt_pct(r.policy)} {_fmt_delta(r.policy_delta)}",
        f"{_fmt_pct(r.oracle)} {_fmt_delta(r.oracle_delta)}",
        "-" if r.policy_accuracy is None else _fmt_pct(r.policy_accuracy),
    ]


def format_report(rows) -> str:
    rows = list(rows)
    if not rows:
        raise ReportError("report needs at least one row")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow(format_row(r))
    return buf.getvalue()


def emit_report(rows, path) -> str:
    text = format_report(rows)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return text


_WITH_DELTA = re.compile(r"^\s*(-?\d+(?:\.\d+)?)\s*\(([+-]\d+(?:\.\d+)?)\)\s*$")


def _parse_opt(s: str, cast):
    return None if s.strip() == "-" else cast(s)


def _frac(pct: str) -> float:
    # "70.2" -> 0.702 correctly rounded (70.2 / 100 is off by one ulp).
    return float(pct.strip() + "e-2")


def _parse_layers(s: str):
    return None if s.strip() == "-" else int(s)


def parse_report(text: str) -> list[EvalReport]:
    """Inverse of ``format_report``; accuracies come back as fractions of
    the printed one-decimal percentages."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != HEADER:
        raise ReportError(f"unexpected report header {header}")
    rows = []
    for lineno, cells in enumerate(reader, 2):
        if not cells:
            continue
        if len(cells) != len(HEADER):
            raise ReportError(f"line {lineno}: expected {len(HEADER)} columns")
        pol = _WITH_DELTA.match(cells[5])
        orc = _WITH_DELTA.match(cells[6])
        if not pol or not orc:
            raise ReportError(f"line {lineno}: malformed accuracy/delta cell")
        rows.append(
            EvalReport(
                policy_input=cells[0],
                layers=_parse_layers(cells[1]),
                q=_parse_opt(cells[2], float),
                text=_frac(cells[3]),
                image=_frac(cells[4]),
                policy=_frac(pol.group(1)),
                oracle=_frac(orc.group(1)),
                policy_accuracy=_parse_opt(cells[7], _frac),
            )
        )
    return rows


def read_report(path) -> list[EvalReport]:
    return parse_report(Path(path).read_text(encoding="utf-8"))


def render_table(rows) -> str:
    """Aligned plain-text rendering for terminals."""
    body = [HEADER] + [format_row(r) for r in rows]
    widths = [max(len(line[i]) for line in body) for i in range(len(HEADER))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in body)
