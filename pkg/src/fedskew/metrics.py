"""Per-client restricted evaluation and the fairness triple (avg, worst, gap)."""

import csv
from dataclasses import dataclass

import numpy as np

from .textdata import make_batches

ROUNDS_CSV_HEADER = ["round", "client_id", "n_k", "eval_size", "accuracy",
                     "avg_acc", "worst_acc", "gap", "argmin_client"]


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class ClientEval:
    client_id: int
    eval_size: int
    correct_count: int

    @property
    def accuracy(self) -> float:
        return self.correct_count / self.eval_size


@dataclass(frozen=True)
class FairnessSummary:
    avg: float
    worst: float
    gap: float
    argmin_client_id: int


@dataclass
class RoundLog:
    round_index: int
    evals: list
    summary: FairnessSummary
    client_sizes: list  # n_k per participating client, aligned with evals
    wall_time: float = 0.0


def restricted_test_set(test_docs, present_classes) -> list:
    """Test documents whose label is among the client's training classes."""
    if not present_classes:
        raise EvalError("present_classes is empty")
    subset = [d for d in test_docs if d.label in present_classes]
    if not subset:
        raise EvalError(f"test set has no documents for classes {sorted(present_classes)}")
    return subset


def evaluate_client(params, forward, client_partition, test_docs, max_seq_len,
                    batch_size: int = 64) -> ClientEval:
    """Eval-mode accuracy on the test set restricted to the client's classes.

    Argmax ties resolve to the lowest class index.
    """
    subset = restricted_test_set(test_docs, client_partition.present_classes)
    correct = 0
    for batch in make_batches(subset, batch_size, 0, max_seq_len):
        preds = forward(params, batch.token_ids, train=False).value.argmax(axis=1)
        correct += int((preds == batch.labels).sum())
    return ClientEval(client_partition.client_id, len(subset), correct)


def fairness_summary(evals) -> FairnessSummary:
    if not evals:
        raise EvalError("no client evaluations")
    accs = [e.accuracy for e in evals]
    avg = float(np.mean(accs))
    worst_idx = int(np.argmin(accs))  # ties -> lowest position = lowest client id
    worst = accs[worst_idx]
    summary = FairnessSummary(avg, worst, avg - worst, evals[worst_idx].client_id)
    assert summary.gap >= -1e-15, "min exceeds mean"
    return summary


def convergence_check(logs, window: int = 5, tolerance: float = 0.003) -> bool:
    """True iff the average-accuracy spread over the last `window` rounds <= tolerance."""
    series = [l.summary.avg if isinstance(l, RoundLog) else float(l) for l in logs]
    if len(series) < window:
        raise EvalError(f"need at least {window} rounds, have {len(series)}")
    tail = series[-window:]
    return max(tail) - min(tail) <= tolerance


def write_rounds_csv(logs, path):
    """One row per client per round; summary columns repeated on each row."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(ROUNDS_CSV_HEADER)
        for log in logs:
            s = log.summary
            for ev, n_k in zip(log.evals, log.client_sizes):
                writer.writerow([log.round_index, ev.client_id, n_k, ev.eval_size,
                                 repr(ev.accuracy), repr(s.avg), repr(s.worst),
                                 repr(s.gap), s.argmin_client_id])
