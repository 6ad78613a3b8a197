"""Per-iteration metrics rows and their CSV encoding.

Floats are written with 17 significant digits so two runs can be compared
byte for byte. Per-agent columns hold values joined with ``;``. The win rate
is left blank for games without a win condition, and the wall-clock column
is left blank unless timing was requested (timing would break determinism).
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

HEADER = ("seed", "iteration", "env_steps", "mean_return", "win_rate", "kl", "entropy", "critic_loss",
          "clip_fraction", "wall_clock_ms")


def fmt_float(x):
    x = float(x)
    return "%.17g" % x


def fmt_vector(values):
    return ";".join(fmt_float(v) for v in np.ravel(values))


def parse_vector(text):
    return np.array([float(v) for v in text.split(";")]) if text else np.zeros(0)


@dataclass
class MetricsRow:
    seed: int
    iteration: int
    env_steps: int
    mean_return: float
    win_rate: float
    kl: np.ndarray
    entropy: np.ndarray
    critic_loss: float
    clip_fraction: np.ndarray
    wall_clock_ms: float = None

    @classmethod
    def from_report(cls, seed, report, wall_clock_ms=None):
        return cls(seed, report.iteration, report.env_steps, report.mean_return, report.win_rate, report.kl,
                   report.entropy, report.critic_loss, report.clip_fraction, wall_clock_ms)

    def cells(self):
        win = "" if self.win_rate is None or math.isnan(self.win_rate) else fmt_float(self.win_rate)
        wall = "" if self.wall_clock_ms is None else fmt_float(self.wall_clock_ms)
        return [str(int(self.seed)), str(int(self.iteration)), str(int(self.env_steps)),
                fmt_float(self.mean_return), win, fmt_vector(self.kl), fmt_vector(self.entropy),
                fmt_float(self.critic_loss), fmt_vector(self.clip_fraction), wall]


class MetricsWriter:
    """Append rows to a CSV file, flushing after each one so partial runs stay readable."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(HEADER)
        self._fh.flush()
        self._last = {}

    def write(self, row):
        last = self._last.get(row.seed)
        if last is not None and row.iteration <= last:
            raise ValueError(f"seed {row.seed}: iteration {row.iteration} does not follow {last}")
        self._last[row.seed] = row.iteration
        self._writer.writerow(row.cells())
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    """Rows of a metrics CSV as dictionaries with parsed values."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file, expected a header")
        missing = [h for h in ("seed", "iteration", "env_steps", "mean_return") if h not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = []
        for rec in reader:
            rows.append({
                "seed": int(rec["seed"]),
                "iteration": int(rec["iteration"]),
                "env_steps": int(rec["env_steps"]),
                "mean_return": float(rec["mean_return"]),
                "win_rate": float(rec["win_rate"]) if rec.get("win_rate") else None,
                "kl": parse_vector(rec.get("kl", "")),
                "entropy": parse_vector(rec.get("entropy", "")),
                "critic_loss": float(rec["critic_loss"]) if rec.get("critic_loss") else None,
                "clip_fraction": parse_vector(rec.get("clip_fraction", "")),
                "wall_clock_ms": float(rec["wall_clock_ms"]) if rec.get("wall_clock_ms") else None,
            })
    return rows
