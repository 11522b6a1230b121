"""Text rendering of windows and features for language-model backends.

Prompt wording lives in ``harlm/templates/*.json``; this module only fills
placeholders.  Token counts use a bytes/4 heuristic (:func:`estimate_tokens`).
"""
from __future__ import annotations

import enum
import json
import math
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from harlm.dataset import LabeledDataset
from harlm.features import STAT_NAMES, FeatureConfig, FeatureVector, extract, row_vector
from harlm.records import Sensor
from harlm.windowing import Window

DEFAULT_TOKEN_LIMIT = 4096
STAT_LABELS = dict(zip(STAT_NAMES, ("mean", "std", "range", "mean_freq", "entropy", "bp_low", "bp_high")))
PLACEHOLDERS = ("features", "label_set", "question")
PAIR_KEYS = ("instruction", "input", "output")


class AnswerFormat(str, enum.Enum):
    LABEL_ONLY = "LABEL_ONLY"
    LABEL_WITH_REASONING = "LABEL_WITH_REASONING"
    FREEFORM = "FREEFORM"


class PairMode(str, enum.Enum):
    CLASSIFY = "CLASSIFY"
    REASONED = "REASONED"


class UnresolvedPlaceholderError(KeyError):
    def __init__(self, name: str):
        super().__init__(f"unresolved template placeholder {{{name}}}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system_text: str
    body_text: str
    answer_format: AnswerFormat
    instruction_text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "answer_format", AnswerFormat(self.answer_format))
        fields = placeholders(self.body_text)
        if "features" not in fields:
            raise ValueError(f"template {self.name!r}: body_text lacks {{features}}")
        if self.answer_format is not AnswerFormat.FREEFORM and "label_set" not in fields:
            raise ValueError(f"template {self.name!r}: label formats need {{label_set}}")

    @classmethod
    def from_dict(cls, d: dict) -> "PromptTemplate":
        return cls(
            name=d["name"],
            system_text=d.get("system_text", ""),
            body_text=d["body_text"],
            answer_format=d.get("answer_format", "LABEL_ONLY"),
            instruction_text=d.get("instruction_text", ""),
        )


BUNDLED_TEMPLATES = ("classify_v1", "reasoned_v1", "qa_v1")


def load_template(name_or_path: str | Path) -> PromptTemplate:
    """Load a bundled template by name or a template JSON file by path."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        text = p.read_text(encoding="utf-8")
    elif str(name_or_path) in BUNDLED_TEMPLATES:
        text = resources.files("harlm").joinpath("templates", f"{name_or_path}.json").read_text(encoding="utf-8")
    else:
        raise FileNotFoundError(f"no template file or bundled template named {name_or_path!r}")
    return PromptTemplate.from_dict(json.loads(text))


def placeholders(text: str) -> list[str]:
    return [f for _, f, _, _ in string.Formatter().parse(text) if f is not None]


def _fmt(v: float, precision: int) -> str:
    s = f"{v:.{precision}f}"
    # "-0.000" and "0.000" carry the same information; keep one spelling
    if s.startswith("-") and float(s) == 0.0:
        s = s[1:]
    return s


def serialize_features(fv: FeatureVector, precision: int = 3) -> str:
    """One ``<channel> <stat>: <value>`` line per feature, grouped by channel."""
    lines = []
    for ci, ch in enumerate(fv.channel_order):
        for si, stat in enumerate(STAT_NAMES):
            lines.append(f"{ch.name} {STAT_LABELS[stat]}: {_fmt(fv.values[ci, si], precision)}")
    return "\n".join(lines)


def serialize_raw_window(window: Window, precision: int = 3) -> str:
    """Fixed-width CSV of the W x C samples, one row per line.

    Every cell is right-aligned to ``precision + 4`` characters, so values in
    (-10, 10) take ``precision + 5`` bytes including the separator.
    """
    width = precision + 4
    rows = []
    for r in window.samples:
        rows.append(",".join(f"{_fmt(v, precision):>{width}}" for v in r))
    return "\n".join(rows)


def estimate_tokens(text: str) -> int:
    """ceil(utf-8 byte length / 4)."""
    return -(-len(text.encode("utf-8")) // 4)


@dataclass(frozen=True)
class TokenBudgetReport:
    raw_tokens: int
    feature_tokens: int
    ratio: float
    limit: int = DEFAULT_TOKEN_LIMIT
    raw_fits: bool = True
    feature_fits: bool = True

    def to_dict(self) -> dict:
        return {
            "raw_tokens": self.raw_tokens,
            "feature_tokens": self.feature_tokens,
            "ratio": self.ratio,
            "limit": self.limit,
            "raw_fits": self.raw_fits,
            "feature_fits": self.feature_fits,
        }


def token_budget(
    window: Window,
    limit: int = DEFAULT_TOKEN_LIMIT,
    precision: int = 3,
    config: FeatureConfig = FeatureConfig(),
    estimator: Callable[[str], int] = estimate_tokens,
) -> TokenBudgetReport:
    """Compare token cost of the raw window with its feature serialisation."""
    raw = estimator(serialize_raw_window(window, precision))
    feat = estimator(serialize_features(extract(window, config), precision))
    return TokenBudgetReport(
        raw_tokens=raw,
        feature_tokens=feat,
        ratio=feat / raw if raw > 0 else math.inf,
        limit=limit,
        raw_fits=raw <= limit,
        feature_fits=feat <= limit,
    )


def render_label_set(labels: Sequence[str]) -> str:
    return ", ".join(labels)


def _substitute(text: str, values: dict[str, str]) -> str:
    for name in placeholders(text):
        if name not in values:
            raise UnresolvedPlaceholderError(name)
    return text.format_map(values)


def render_prompt(
    template: PromptTemplate,
    fv: FeatureVector,
    label_set: Sequence[str] = (),
    question: str | None = None,
    precision: int = 3,
) -> str:
    """User prompt with every placeholder substituted."""
    values = {"features": serialize_features(fv, precision)}
    if label_set:
        values["label_set"] = render_label_set(label_set)
    if question is not None:
        values["question"] = question
    return _substitute(template.body_text, values)


# --------------------------------------------------------------------------
# instruction pairs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InstructionPair:
    instruction: str
    input: str
    output: str

    def to_json(self) -> str:
        return json.dumps({"instruction": self.instruction, "input": self.input, "output": self.output},
                          ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "InstructionPair":
        obj = json.loads(line)
        validate_pair_object(obj)
        return cls(**obj)


def validate_pair_object(obj) -> None:
    if not isinstance(obj, dict) or tuple(sorted(obj)) != tuple(sorted(PAIR_KEYS)):
        raise ValueError(f"instruction pair must have exactly the keys {PAIR_KEYS}")
    for k in PAIR_KEYS:
        if not isinstance(obj[k], str):
            raise ValueError(f"instruction pair field {k!r} must be a string")


DYNAMIC_ACCEL_STD = 0.5  # m/s^2 scale; datasets shipped in g read lower


def dominant_channel(fv: FeatureVector) -> int:
    """Index of the channel with the largest std (first one on ties)."""
    return int(np.argmax(fv.values[:, STAT_NAMES.index("std")]))


def templated_rationale(fv: FeatureVector, label: str) -> str:
    si = STAT_NAMES.index("std")
    fi = STAT_NAMES.index("mean_freq")
    ei = STAT_NAMES.index("spectral_entropy")
    ci = dominant_channel(fv)
    ch = fv.channel_order[ci]
    parts = [
        f"The {ch.name} channel varies the most (std {fv.values[ci, si]:.3f}),"
        f" with mean frequency {fv.values[ci, fi]:.2f} Hz and spectral entropy {fv.values[ci, ei]:.2f}."
    ]
    acc = [i for i, c in enumerate(fv.channel_order) if c.sensor is Sensor.ACCEL]
    if acc:
        acc_std = float(np.max(fv.values[acc, si]))
        if acc_std >= DYNAMIC_ACCEL_STD:
            parts.append(f"Accelerometer std up to {acc_std:.3f} points to a dynamic activity.")
        else:
            parts.append(f"Accelerometer std of at most {acc_std:.3f} points to a static posture.")
    low, high = fv.values[ci, STAT_NAMES.index("band_power_low")], fv.values[ci, STAT_NAMES.index("band_power_high")]
    if low + high > 0:
        band = "low" if low >= high else "high"
        parts.append(f"Most of its spectral power sits in the {band} band.")
    parts.append(f"This is consistent with {label}.")
    return " ".join(parts)


def generate_instruction_pairs(
    data: LabeledDataset | Iterable[FeatureVector],
    template: PromptTemplate,
    mode: PairMode | str = PairMode.CLASSIFY,
    precision: int = 3,
    label_set: Sequence[str] | None = None,
    reasoner: Callable[[FeatureVector, str], str] | None = None,
) -> Iterator[InstructionPair]:
    """One instruction pair per feature row, in input order.

    CLASSIFY outputs are the gold label verbatim.  REASONED outputs are
    ``Activity: <label>`` plus a rationale, rule-generated unless a
    ``reasoner(fv, label)`` callable (e.g. a live backend) is supplied.
    """
    mode = mode if isinstance(mode, PairMode) else PairMode(str(mode).upper())
    if isinstance(data, LabeledDataset):
        labels = list(label_set or data.label_vocabulary)
        rows: Iterable[FeatureVector] = (row_vector(data, i) for i in range(len(data)))
    else:
        rows = data
        labels = list(label_set or [])
    for fv in rows:
        if not fv.activity:
            raise ValueError("feature row has no gold label")
        vocab = labels or [fv.activity]
        instr_src = template.instruction_text or "Classify the activity. Choose one of: {label_set}."
        instruction = _substitute(instr_src, {"label_set": render_label_set(vocab)})
        inp = serialize_features(fv, precision)
        if mode is PairMode.CLASSIFY:
            out = fv.activity
        else:
            why = reasoner(fv, fv.activity) if reasoner else templated_rationale(fv, fv.activity)
            out = f"Activity: {fv.activity}\nReasoning: {why}"
        yield InstructionPair(instruction=instruction, input=inp, output=out)


def write_pairs_jsonl(pairs: Iterable[InstructionPair]) -> str:
    return "".join(p.to_json() + "\n" for p in pairs)
