"""Retrieval metrics and the suite-level evaluation harness.

Recall@k and NDCG@k use the single-relevant-item forms (the ideal DCG is 1,
so NDCG is 1/log2(rank+1) when the target lands inside the cutoff, else 0).
Sentiment following is scored pairwise with the combined hit rate m@k: a
pair counts only when the target is retrieved under the positive preference
and *not* retrieved under its negative twin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .benchmark import AXES, SPLITS, BenchmarkSuite, EvalInstance
from .embeddings import EmbeddingMatrix
from .preferences import classify_preference_sentiment
from .quantizer import SemanticId
from .recommenders import PreferenceSignal
from .sid_index import SidTrie


class EvalError(ValueError):
    pass


def recall_at_k(predictions: list[str], target: str, k: int) -> int:
    if k < 1:
        raise EvalError("k must be >= 1")
    return 1 if target in predictions[:k] else 0


def ndcg_at_k(predictions: list[str], target: str, k: int) -> float:
    if k < 1:
        raise EvalError("k must be >= 1")
    try:
        rank = predictions[:k].index(target) + 1
    except ValueError:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def m_at_k(pred_pos: list[str], pred_neg: list[str], target: str, k: int) -> int:
    """1 iff the target is retrieved for the positive preference and absent
    for the negative one."""
    hit_pos = recall_at_k(pred_pos, target, k)
    hit_neg = recall_at_k(pred_neg, target, k)
    return 1 if hit_pos == 1 and hit_neg == 0 else 0


@dataclass
class MetricReport:
    model: str
    suite_digest: str
    ks: list[int]
    beam_width: int
    axes: dict = field(default_factory=dict)

    def cell(self, axis: str, split: str) -> dict:
        return self.axes.setdefault(axis, {}).setdefault(
            split, {"count": 0, "skipped": 0, "metrics": {}}
        )

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "suite_digest": self.suite_digest,
            "ks": self.ks,
            "beam_width": self.beam_width,
            "axes": self.axes,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        return cls(
            model=obj["model"],
            suite_digest=obj["suite_digest"],
            ks=list(obj["ks"]),
            beam_width=obj["beam_width"],
            axes=obj["axes"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _instance_signals(
    instance: EvalInstance,
    pref_embeddings: EmbeddingMatrix | None,
) -> list[PreferenceSignal] | None:
    signals: list[PreferenceSignal] = []
    for text in instance.preferences:
        if pref_embeddings is None or text not in pref_embeddings:
            return None
        signals.append(
            PreferenceSignal(
                embedding=pref_embeddings.get(text),
                sentiment=classify_preference_sentiment(text),
                text=text,
            )
        )
    return signals


def _instance_history(instance: EvalInstance, sid_map: dict[str, SemanticId]) -> list[SemanticId] | None:
    history: list[SemanticId] = []
    for item in instance.history:
        sid = sid_map.get(item)
        if sid is None:
            return None
        history.append(sid)
    return history


def evaluate_suite(
    model,
    suite: BenchmarkSuite,
    trie: SidTrie,
    sid_map: dict[str, SemanticId],
    item_embeddings: EmbeddingMatrix | None,
    pref_embeddings: EmbeddingMatrix | None,
    ks: tuple[int, ...] = (5, 10),
    beam_width: int = 30,
    model_id: str = "model",
    suite_digest: str = "",
    sid_digest: str = "",
    use_preferences: bool = True,
) -> MetricReport:
    """Run every axis and split; sentiment axes are scored individually for
    recall/NDCG and pairwise for m@k.

    ``model`` provides ``recommend(history, preferences, trie, sid_map,
    item_embeddings, k, beam_width)``. When ``use_preferences`` is false the
    model is run unconditioned (the sequential-only baseline).
    """
    model_sid_digest = getattr(model, "sid_digest", "")
    if sid_digest and model_sid_digest and sid_digest != model_sid_digest:
        raise EvalError(
            f"sid-map digest mismatch: model was trained against {model_sid_digest[:12]}…, "
            f"evaluation uses {sid_digest[:12]}…"
        )
    suite_sid = suite.provenance.get("sid_digest") or ""
    if sid_digest and suite_sid and sid_digest != suite_sid:
        raise EvalError("sid-map digest mismatch between suite manifest and supplied sid map")

    max_k = max(ks)
    report = MetricReport(
        model=model_id, suite_digest=suite_digest, ks=list(ks), beam_width=beam_width
    )
    predictions_by_pair: dict[str, dict[int, dict[str, tuple[list[str], str]]]] = {
        "sentiment_pos": {},
        "sentiment_neg": {},
    }

    for axis in AXES:
        for split in SPLITS:
            instances = suite.instances.get(axis, {}).get(split, [])
            if not instances:
                continue
            cell = report.cell(axis, split)
            sums = {f"recall@{k}": 0.0 for k in ks}
            sums.update({f"ndcg@{k}": 0.0 for k in ks})
            evaluated = 0
            skipped = 0
            for idx, instance in enumerate(instances):
                history = _instance_history(instance, sid_map)
                signals = _instance_signals(instance, pref_embeddings) if use_preferences else []
                if history is None or signals is None:
                    skipped += 1
                    continue
                ranked = model.recommend(
                    history,
                    signals,
                    trie,
                    sid_map,
                    item_embeddings,
                    k=max_k,
                    beam_width=beam_width,
                )
                items = [item for item, _score, _b in ranked]
                for k in ks:
                    sums[f"recall@{k}"] += recall_at_k(items, instance.target, k)
                    sums[f"ndcg@{k}"] += ndcg_at_k(items, instance.target, k)
                evaluated += 1
                if axis in predictions_by_pair and instance.pair is not None:
                    predictions_by_pair[axis].setdefault(split, {})[instance.pair] = (items, instance.target)
            cell["count"] = evaluated
            cell["skipped"] = skipped
            if evaluated:
                cell["metrics"] = {name: value / evaluated for name, value in sums.items()}

    # pairwise sentiment scoring over twins present in both directions
    for split in SPLITS:
        pos = predictions_by_pair["sentiment_pos"].get(split, {})
        neg = predictions_by_pair["sentiment_neg"].get(split, {})
        pairs = sorted(set(pos) & set(neg))
        if not pairs:
            continue
        m_sums = {k: 0 for k in ks}
        for pair in pairs:
            pos_items, pos_target = pos[pair]
            neg_items, neg_target = neg[pair]
            if pos_target != neg_target:
                raise EvalError(f"twin mismatch for pair {pair}: targets {pos_target!r} vs {neg_target!r}")
            for k in ks:
                m_sums[k] += m_at_k(pos_items, neg_items, pos_target, k)
        for axis in ("sentiment_pos", "sentiment_neg"):
            cell = report.cell(axis, split)
            for k in ks:
                cell["metrics"][f"m@{k}"] = m_sums[k] / len(pairs)
            cell["pairs"] = len(pairs)
    return report


def relative_improvement(report_a: MetricReport, report_b: MetricReport) -> dict:
    """Per-cell 100*(a-b)/b; cells where b vanishes get a None marker."""
    if report_a.suite_digest != report_b.suite_digest:
        raise EvalError("reports come from different suites")
    out: dict = {}
    for axis, splits in report_a.axes.items():
        if axis not in report_b.axes:
            raise EvalError(f"axis {axis!r} missing from the baseline report")
        for split, cell in splits.items():
            base_cell = report_b.axes[axis].get(split)
            if base_cell is None:
                raise EvalError(f"split {split!r} of axis {axis!r} missing from the baseline report")
            for name, a_val in cell.get("metrics", {}).items():
                b_val = base_cell.get("metrics", {}).get(name)
                if b_val is None:
                    continue
                entry = out.setdefault(axis, {}).setdefault(split, {})
                entry[name] = None if b_val == 0 else 100.0 * (a_val - b_val) / b_val
    return out


def render_report_table(report: MetricReport) -> str:
    names: list[str] = []
    for k in report.ks:
        names.extend([f"recall@{k}", f"ndcg@{k}", f"m@{k}"])
    lines = [f"model: {report.model}", f"suite: {report.suite_digest[:16]}"]
    header = f"{'axis':<16}{'split':<7}{'n':>6}  " + "  ".join(f"{n:>10}" for n in names)
    lines.append(header)
    for axis in AXES:
        for split in SPLITS:
            cell = report.axes.get(axis, {}).get(split)
            if not cell or not cell.get("count"):
                continue
            row = f"{axis:<16}{split:<7}{cell['count']:>6}  "
            vals = []
            for name in names:
                value = cell.get("metrics", {}).get(name)
                vals.append(f"{value:>10.4f}" if value is not None else f"{'-':>10}")
            lines.append(row + "  ".join(vals))
    return "\n".join(lines) + "\n"


def render_improvement_table(table: dict) -> str:
    lines = []
    for axis in AXES:
        if axis not in table:
            continue
        for split in SPLITS:
            if split not in table[axis]:
                continue
            cells = table[axis][split]
            parts = []
            for name in sorted(cells):
                value = cells[name]
                parts.append(f"{name}={'n/a' if value is None else f'{value:+.1f}%'}")
            lines.append(f"{axis:<16}{split:<7}" + "  ".join(parts))
    return "\n".join(lines) + "\n"


def plot_reports(reports: dict[str, MetricReport], out_dir: str | Path, k: int = 10, split: str = "test") -> list[Path]:
    """Grouped bar chart of recall@k (m@k for sentiment) per axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = list(reports)
    axes_present = [a for a in AXES if any(a in r.axes and split in r.axes[a] for r in reports.values())]
    fig, ax = plt.subplots(figsize=(max(6, 1.8 * len(axes_present)), 4))
    width = 0.8 / max(len(labels), 1)
    for i, label in enumerate(labels):
        values = []
        for axis in axes_present:
            metric = f"m@{k}" if axis.startswith("sentiment") else f"recall@{k}"
            cell = reports[label].axes.get(axis, {}).get(split, {})
            values.append(cell.get("metrics", {}).get(metric, 0.0))
        positions = [j + i * width for j in range(len(axes_present))]
        ax.bar(positions, values, width=width, label=label)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(axes_present))])
    ax.set_xticklabels(axes_present, rotation=20, ha="right")
    ax.set_ylabel(f"recall@{k} (m@{k} on sentiment)")
    ax.set_title(f"{split} split")
    ax.legend()
    fig.tight_layout()
    out_path = out_dir / f"axes_{split}_k{k}.png"
    fig.savefig(out_path, metadata={"Software": "discern"})
    plt.close(fig)
    return [out_path]
