"""Trial scoring and detection metrics.

Scores are cosine similarities between embeddings. Detection metrics
sweep thresholds at score midpoints: a trial is accepted when its score
is at or above the threshold. The equal error rate is read off where
the false acceptance and false rejection curves cross, with linear
interpolation between adjacent operating points; the minimum detection
cost searches every operating point, including the two trivial
accept-all and reject-all policies.
"""
from __future__ import annotations

from dataclasses import dataclass
from os import PathLike

import numpy as np

from .errors import DataError, DimensionError, NumericError

P_TARGET = 0.01
C_FA = 1.0
C_MISS = 1.0


@dataclass
class Trial:
    enroll: str
    test: str
    is_target: bool
    score: float | None = None


@dataclass
class DetMetrics:
    eer: float
    min_dcf: float
    threshold_at_eer: float

    def report_line(self) -> str:
        return (f"eer={self.eer:.6f} min_dcf={self.min_dcf:.6f} "
                f"threshold={self.threshold_at_eer:.6f}")


def strip_audio_suffix(token: str) -> str:
    return token[:-4] if token.endswith(".wav") else token


def parse_trials(text: str) -> list[Trial]:
    """Parse `label enroll test` lines; label is 1 (target) or 0.

    Paths become utterance ids (a trailing .wav is dropped). Malformed
    lines raise DataError with their line number.
    """
    trials: list[Trial] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"trial line {lineno}: expected 3 fields, got {len(parts)}")
        label, enroll, test = parts
        if label not in ("0", "1"):
            raise DataError(f"trial line {lineno}: label must be 0 or 1, got {label!r}")
        trials.append(Trial(strip_audio_suffix(enroll), strip_audio_suffix(test),
                            label == "1"))
    return trials


def read_trials(path: str | PathLike) -> list[Trial]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_trials(fh.read())
    except OSError as e:
        raise DataError(f"cannot read trial list {path}: {e}") from e


def format_trial_line(trial: Trial) -> str:
    return f"{1 if trial.is_target else 0} {trial.enroll} {trial.test}"


def write_trials(path: str | PathLike, trials: list[Trial]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trial in trials:
            fh.write(format_trial_line(trial) + "\n")


def write_scores(path: str | PathLike, trials: list[Trial]) -> None:
    """Write `score enroll test` lines, scores with 6 decimals."""
    with open(path, "w", encoding="utf-8") as fh:
        for trial in trials:
            if trial.score is None:
                raise DataError(f"trial {trial.enroll} vs {trial.test} is unscored")
            fh.write(f"{trial.score:.6f} {trial.enroll} {trial.test}\n")


def read_scores(path: str | PathLike) -> dict[tuple[str, str], float]:
    scores: dict[tuple[str, str], float] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read score file {path}: {e}") from e
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"score line {lineno}: expected 3 fields, got {len(parts)}")
        try:
            value = float(parts[0])
        except ValueError as e:
            raise DataError(f"score line {lineno}: bad score {parts[0]!r}") from e
        scores[(parts[1], parts[2])] = value
    return scores


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"embedding length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine score of a zero-norm embedding")
    return float(np.dot(a, b) / (na * nb))


def extract_embedding(model, coeffs: np.ndarray) -> np.ndarray:
    """Eval-mode utterance embedding, the output of the final dense layer."""
    return model.embed(np.asarray(coeffs, dtype=np.float64))


# ---------------------------------------------------------------------------
# detection metrics

def _check_trials(trials: list[Trial]) -> tuple[np.ndarray, np.ndarray]:
    if not trials:
        raise DataError("empty trial list")
    scores = []
    labels = []
    for t in trials:
        if t.score is None:
            raise DataError(f"unscored trial {t.enroll} vs {t.test}")
        scores.append(t.score)
        labels.append(t.is_target)
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or (~labels).all():
        raise DataError("trial list needs both target and nontarget trials")
    return np.asarray(scores, dtype=np.float64), labels


def operating_points(scores: np.ndarray, labels: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FA and FR rates along the threshold sweep, plus the thresholds.

    Point k accepts exactly the trials in the top k distinct score
    values; k runs from 0 (reject everything) to the number of distinct
    scores (accept everything). Thresholds are midpoints between
    adjacent distinct scores, with sentinels one unit beyond the
    extremes.
    """
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_targets = labels[order]
    n_target = int(labels.sum())
    n_nontarget = labels.size - n_target
    # indices where a run of equal scores ends
    boundaries = np.nonzero(np.diff(sorted_scores))[0]
    counts = np.concatenate([boundaries + 1, [labels.size]])
    distinct = sorted_scores[np.concatenate([boundaries, [labels.size - 1]])]
    cum_target = np.cumsum(sorted_targets)[counts - 1]
    cum_nontarget = counts - cum_target
    fa = np.concatenate([[0.0], cum_nontarget / n_nontarget])
    fr = np.concatenate([[1.0], 1.0 - cum_target / n_target])
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    thresholds = np.concatenate([[distinct[0] + 1.0], mids, [distinct[-1] - 1.0]])
    return fa, fr, thresholds


def eer(trials: list[Trial]) -> tuple[float, float]:
    """Equal error rate in [0, 0.5] and the threshold attaining it."""
    scores, labels = _check_trials(trials)
    fa, fr, thresholds = operating_points(scores, labels)
    diff = fr - fa
    idx = int(np.argmax(diff < 0.0)) if (diff < 0.0).any() else diff.size - 1
    if diff[idx] >= 0.0:
        # no strictly negative point; the sweep ends exactly on the crossing
        return float(fr[idx]), float(thresholds[idx])
    prev = idx - 1
    if diff[prev] == 0.0:
        return float(fr[prev]), float(thresholds[prev])
    t = diff[prev] / (diff[prev] - diff[idx])
    value = fr[prev] + t * (fr[idx] - fr[prev])
    threshold = thresholds[prev] + t * (thresholds[idx] - thresholds[prev])
    return float(value), float(threshold)


def min_dcf(trials: list[Trial], p_target: float = P_TARGET,
            c_fa: float = C_FA, c_miss: float = C_MISS) -> float:
    """Minimum normalized detection cost over all thresholds."""
    scores, labels = _check_trials(trials)
    fa, fr, _ = operating_points(scores, labels)
    dcf = c_miss * p_target * fr + c_fa * (1.0 - p_target) * fa
    norm = min(c_miss * p_target, c_fa * (1.0 - p_target))
    return float(dcf.min() / norm)


def evaluate(trials: list[Trial], p_target: float = P_TARGET,
             c_fa: float = C_FA, c_miss: float = C_MISS) -> DetMetrics:
    value, threshold = eer(trials)
    return DetMetrics(value, min_dcf(trials, p_target, c_fa, c_miss), threshold)
