"""Evaluation metrics and report emission.

Accuracies are percentages in [0, 100]. Per-session results split into base
and novel parts; the harmonic accuracy 2*A_b*A_n/(A_b+A_n) summarizes their
balance, and the accuracy decline Delta = |acc_T - acc_0| / acc_0 * 100
summarizes end-to-end degradation. Reports serialize to canonical JSON
(sorted keys, floats rounded to 4 decimals, byte-deterministic), CSV with
the fixed column order ``trial,session,n_test,acc,A_b,A_n,A_h``, and a
markdown summary with one wide accuracy row plus the per-session detail
table (1 decimal place).
"""

from __future__ import annotations

import csv as _csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, NoNovelSessions, ZeroBaseAccuracy


def accuracy(predictions, truths) -> float:
    """Percentage of matching entries."""
    preds = np.asarray(predictions)
    ys = np.asarray(truths)
    if preds.shape != ys.shape:
        raise ValueError("predictions and truths differ in length")
    if preds.size == 0:
        raise EmptyInput("accuracy of an empty set")
    return 100.0 * float(np.count_nonzero(preds == ys)) / preds.size


def split_accuracy(predictions, truths, base_classes) -> tuple[float | None, float | None]:
    """(A_b, A_n): accuracy over base-labeled and novel-labeled samples.

    A side with no samples is reported as None.
    """
    preds = np.asarray(predictions)
    ys = np.asarray(truths)
    if preds.size == 0:
        raise EmptyInput("split_accuracy of an empty set")
    base = np.array([int(y) in base_classes for y in ys])
    a_b = accuracy(preds[base], ys[base]) if base.any() else None
    a_n = accuracy(preds[~base], ys[~base]) if (~base).any() else None
    return a_b, a_n


def harmonic(a_b: float, a_n: float) -> float:
    """Harmonic accuracy; zero if either side is zero."""
    if a_b < 0 or a_n < 0:
        raise ValueError("accuracies must be >= 0")
    if a_b == 0.0 or a_n == 0.0:
        return 0.0
    return 2.0 * a_b * a_n / (a_b + a_n)


def delta(session_accuracies) -> float:
    """Accuracy decline |acc_T - acc_0| / acc_0 * 100 over a session series."""
    accs = [float(a) for a in session_accuracies]
    if len(accs) < 2:
        raise ValueError("delta needs at least two sessions")
    if accs[0] <= 0.0:
        raise ZeroBaseAccuracy("accuracy decline undefined for zero base accuracy")
    return abs(accs[-1] - accs[0]) / accs[0] * 100.0


def mean_harmonic(session_reports) -> float:
    """Mean A_h over sessions where both base and novel samples exist."""
    vals = [r.harmonic for r in session_reports if r.harmonic is not None]
    if not vals:
        raise NoNovelSessions("no session with both base and novel classes")
    return float(np.mean(vals))


# ---- report containers ----


@dataclass
class SessionReport:
    session: int
    n_test: int
    n_classes: int
    accuracy: float
    base_accuracy: float | None
    novel_accuracy: float | None
    harmonic: float | None
    both_zero: bool = False
    per_class: dict = field(default_factory=dict)     # class id -> [n, correct]
    cache: dict | None = None

    def to_dict(self) -> dict:
        return {
            "session": self.session,
            "n_test": self.n_test,
            "n_classes": self.n_classes,
            "accuracy": self.accuracy,
            "base_accuracy": self.base_accuracy,
            "novel_accuracy": self.novel_accuracy,
            "harmonic": self.harmonic,
            "both_zero": self.both_zero,
            "per_class": {str(k): list(v) for k, v in self.per_class.items()},
            "cache": self.cache,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionReport":
        return cls(
            session=int(d["session"]),
            n_test=int(d["n_test"]),
            n_classes=int(d["n_classes"]),
            accuracy=float(d["accuracy"]),
            base_accuracy=_opt_float(d.get("base_accuracy")),
            novel_accuracy=_opt_float(d.get("novel_accuracy")),
            harmonic=_opt_float(d.get("harmonic")),
            both_zero=bool(d.get("both_zero", False)),
            per_class={int(k): [int(x) for x in v]
                       for k, v in d.get("per_class", {}).items()},
            cache=d.get("cache"),
        )


@dataclass
class TrialResult:
    seed: int
    sessions: list

    def to_dict(self) -> dict:
        return {"seed": self.seed, "sessions": [s.to_dict() for s in self.sessions]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(int(d["seed"]), [SessionReport.from_dict(s) for s in d["sessions"]])


@dataclass
class SessionAggregate:
    session: int
    n_test: int
    n_classes: int
    accuracy_mean: float
    accuracy_std: float
    base_mean: float | None
    novel_mean: float | None
    harmonic_mean: float | None

    def to_dict(self) -> dict:
        return {
            "session": self.session,
            "n_test": self.n_test,
            "n_classes": self.n_classes,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "base_mean": self.base_mean,
            "novel_mean": self.novel_mean,
            "harmonic_mean": self.harmonic_mean,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionAggregate":
        return cls(
            session=int(d["session"]),
            n_test=int(d["n_test"]),
            n_classes=int(d["n_classes"]),
            accuracy_mean=float(d["accuracy_mean"]),
            accuracy_std=float(d["accuracy_std"]),
            base_mean=_opt_float(d.get("base_mean")),
            novel_mean=_opt_float(d.get("novel_mean")),
            harmonic_mean=_opt_float(d.get("harmonic_mean")),
        )


@dataclass
class ExperimentReport:
    config: dict
    flags: dict
    trials: list
    aggregate: list
    delta: float
    mean_harmonic: float | None

    def to_dict(self) -> dict:
        return {
            "schema": "tfa-report-v1",
            "config": self.config,
            "flags": self.flags,
            "trials": [t.to_dict() for t in self.trials],
            "aggregate": {
                "sessions": [a.to_dict() for a in self.aggregate],
                "delta": self.delta,
                "mean_harmonic": self.mean_harmonic,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        agg = d["aggregate"]
        return cls(
            config=d["config"],
            flags=d.get("flags", {}),
            trials=[TrialResult.from_dict(t) for t in d["trials"]],
            aggregate=[SessionAggregate.from_dict(a) for a in agg["sessions"]],
            delta=float(agg["delta"]),
            mean_harmonic=_opt_float(agg.get("mean_harmonic")),
        )


def _opt_float(x):
    return None if x is None else float(x)


def _mean_opt(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate_trials(trials: list) -> tuple[list, float, float | None]:
    """Per-session aggregates over trials, plus delta and mean harmonic."""
    if not trials:
        raise EmptyInput("no trials to aggregate")
    n_sessions = len(trials[0].sessions)
    aggs = []
    for s in range(n_sessions):
        reports = [t.sessions[s] for t in trials]
        accs = [r.accuracy for r in reports]
        aggs.append(SessionAggregate(
            session=s,
            n_test=reports[0].n_test,
            n_classes=reports[0].n_classes,
            accuracy_mean=float(np.mean(accs)),
            accuracy_std=float(np.std(accs)),
            base_mean=_mean_opt([r.base_accuracy for r in reports]),
            novel_mean=_mean_opt([r.novel_accuracy for r in reports]),
            harmonic_mean=_mean_opt([r.harmonic for r in reports]),
        ))
    d = delta([a.accuracy_mean for a in aggs]) if n_sessions >= 2 else 0.0
    hm_vals = [a.harmonic_mean for a in aggs if a.harmonic_mean is not None]
    hm = float(np.mean(hm_vals)) if hm_vals else None
    return aggs, d, hm


# ---- emission ----


def _round_floats(x):
    if isinstance(x, float):
        v = round(x, 4)
        return 0.0 if v == 0.0 else v
    if isinstance(x, dict):
        return {k: _round_floats(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round_floats(v) for v in x]
    return x


def report_json(report: ExperimentReport) -> str:
    """Canonical JSON: sorted keys, 4-decimal floats, deterministic bytes."""
    return json.dumps(_round_floats(report.to_dict()), sort_keys=True, indent=2) + "\n"


def _cell(x) -> str:
    return "" if x is None else f"{x:.4f}"


def report_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = _csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "session", "n_test", "acc", "A_b", "A_n", "A_h"])
    for ti, trial in enumerate(report.trials):
        for s in trial.sessions:
            w.writerow([ti, s.session, s.n_test, _cell(s.accuracy),
                        _cell(s.base_accuracy), _cell(s.novel_accuracy),
                        _cell(s.harmonic)])
    return buf.getvalue()


def _md1(x) -> str:
    return "-" if x is None else f"{x:.1f}"


def report_markdown(report: ExperimentReport) -> str:
    aggs = report.aggregate
    lines = []
    lines.append("| classes | " + " | ".join(str(a.n_classes) for a in aggs) + " | delta |")
    lines.append("|" + "---|" * (len(aggs) + 2))
    lines.append("| accuracy | " + " | ".join(_md1(a.accuracy_mean) for a in aggs)
                 + f" | {_md1(report.delta)} |")
    lines.append("")
    lines.append("| session | n_test | acc | A_b | A_n | A_h |")
    lines.append("|" + "---|" * 6)
    for a in aggs:
        lines.append(f"| {a.session} | {a.n_test} | {_md1(a.accuracy_mean)} | "
                     f"{_md1(a.base_mean)} | {_md1(a.novel_mean)} | {_md1(a.harmonic_mean)} |")
    lines.append("")
    lines.append(f"mean harmonic accuracy: {_md1(report.mean_harmonic)}")
    return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, fmt: str) -> str:
    if fmt == "json":
        return report_json(report)
    if fmt == "csv":
        return report_csv(report)
    if fmt in ("md", "markdown"):
        return report_markdown(report)
    raise ValueError(f"unknown report format {fmt!r}")
