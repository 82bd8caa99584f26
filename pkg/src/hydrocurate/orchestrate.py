"""Drives external trainer processes over a line-delimited JSON protocol.

One study runs one trial at a time: suggest a configuration, launch the
trainer, stream per-epoch telemetry, apply the schedule policies, feed
the objective back to the optimizer, and append to the trial ledger.
The exact message grammar lives in docs/protocol.md.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .errors import AllTrialsFailed, ProtocolViolation
from .hpo import (
    CosineDecayPolicy,
    EarlyStopPolicy,
    PlateauPolicy,
    SchedulePolicy,
    SearchSpace,
    SurrogateState,
    TrialConfig,
    cosine_lr,
    early_stop_decision,
    new_state,
    observe,
    plateau_lr,
    suggest,
)
from .ingest import ParameterId

log = logging.getLogger("hydrocurate.orchestrate")

ARCHITECTURES = ("vgg16", "resnet50", "mobilenetv2", "densenet121", "vit")


@dataclass(frozen=True)
class TrainerSpec:
    command: tuple[str, ...]
    architecture: str
    parameter: Optional[ParameterId] = None
    workdir: Optional[str] = None
    max_epochs: int = 50
    epoch_timeout_s: float = 1800.0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")


@dataclass(frozen=True)
class EpochEvent:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_seconds: float


class StopReason(str, Enum):
    EARLY_STOP = "early_stop"
    EPOCH_CAP = "epoch_cap"
    TRAINER_FAILURE = "trainer_failure"


@dataclass
class TrialOutcome:
    config: TrialConfig
    stopped_reason: StopReason
    telemetry: list[EpochEvent]
    checkpoint: Optional[str] = None
    failure_detail: Optional[str] = None
    lr_adjustments: list[dict] = field(default_factory=list)

    @property
    def best_val_loss(self) -> Optional[float]:
        if not self.telemetry:
            return None
        return min(e.val_loss for e in self.telemetry)

    @property
    def best_epoch(self) -> Optional[int]:
        if not self.telemetry:
            return None
        best = self.best_val_loss
        # earliest epoch achieving the minimum
        return next(e.epoch for e in self.telemetry if e.val_loss == best)

    @property
    def ok(self) -> bool:
        return self.stopped_reason != StopReason.TRAINER_FAILURE


class _LineReader:
    """Reads trainer stdout on a thread so the consumer can time out."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream):
        for line in stream:
            self._queue.put(line)
        self._queue.put(None)  # EOF marker

    def read(self, timeout: float) -> Optional[str]:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no trainer output within {timeout}s")


def _parse_event(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolViolation(f"unparseable trainer message: {exc}", line=line) from exc
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolViolation("trainer message lacks a type", line=line)
    return msg


def _epoch_event(msg: dict, line: str) -> EpochEvent:
    try:
        return EpochEvent(
            epoch=int(msg["epoch"]),
            train_loss=float(msg["train_loss"]),
            val_loss=float(msg["val_loss"]),
            lr=float(msg["lr"]),
            wall_seconds=float(msg.get("wall_seconds", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation(f"bad epoch message: {exc}", line=line) from exc


def _send(proc: subprocess.Popen, message: dict) -> None:
    proc.stdin.write(json.dumps(message, sort_keys=True) + "\n")
    proc.stdin.flush()


def run_trial(
    spec: TrainerSpec,
    config: TrialConfig,
    policies: Sequence[SchedulePolicy] = (),
) -> TrialOutcome:
    """Run one trainer process to completion under the schedule policies.

    A crashing or hanging trainer yields a TRAINER_FAILURE outcome, never
    an exception; malformed protocol messages raise ProtocolViolation.
    """
    early: Optional[EarlyStopPolicy] = None
    plateau: Optional[PlateauPolicy] = None
    cosine: Optional[CosineDecayPolicy] = None
    for policy in policies:
        if isinstance(policy, EarlyStopPolicy):
            early = policy
        elif isinstance(policy, PlateauPolicy):
            plateau = policy
        elif isinstance(policy, CosineDecayPolicy):
            cosine = policy

    proc = subprocess.Popen(
        list(spec.command),
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        cwd=spec.workdir,
        text=True,
        bufsize=1,
    )
    telemetry: list[EpochEvent] = []
    adjustments: list[dict] = []
    outcome_reason: Optional[StopReason] = None
    failure_detail: Optional[str] = None
    checkpoint: Optional[str] = None

    initial_lr = float(config.values.get("learning_rate", 1e-3))
    current_lr = cosine_lr(0, cosine.total_steps, cosine.initial_lr) if cosine else initial_lr
    plateau_scale = 1.0
    losses: list[float] = []

    reader = _LineReader(proc.stdout)
    try:
        _send(
            proc,
            {
                "type": "config",
                "trial_id": config.trial_id,
                "seed": config.seed,
                "hyperparameters": dict(config.values),
                "max_epochs": spec.max_epochs,
                "architecture": spec.architecture,
                "options": dict(spec.options),
            },
        )
        awaiting_done = False
        while True:
            try:
                line = reader.read(spec.epoch_timeout_s)
            except TimeoutError as exc:
                outcome_reason = StopReason.TRAINER_FAILURE
                failure_detail = str(exc)
                proc.kill()
                break
            if line is None:  # EOF
                if awaiting_done:
                    outcome_reason = StopReason.TRAINER_FAILURE
                    failure_detail = "trainer exited before sending done"
                elif outcome_reason is None:
                    outcome_reason = StopReason.TRAINER_FAILURE
                    failure_detail = "trainer stream closed mid-trial"
                break
            line = line.strip()
            if not line:
                continue
            msg = _parse_event(line)

            if msg["type"] == "done":
                if not awaiting_done:
                    raise ProtocolViolation("done before stop was sent", line=line)
                checkpoint = msg.get("checkpoint")
                break
            if msg["type"] != "epoch":
                raise ProtocolViolation(f"unexpected message type {msg['type']}", line=line)
            if awaiting_done:
                raise ProtocolViolation("epoch event after stop", line=line)

            event = _epoch_event(msg, line)
            expected = len(telemetry) + 1
            if event.epoch != expected:
                raise ProtocolViolation(
                    f"epoch {event.epoch} out of order (expected {expected})", line=line
                )
            if not (math.isfinite(event.train_loss) and math.isfinite(event.val_loss)):
                telemetry.append(event)
                outcome_reason = StopReason.TRAINER_FAILURE
                failure_detail = f"non-finite loss at epoch {event.epoch}"
                _send(proc, {"type": "stop"})
                awaiting_done = True
                continue

            telemetry.append(event)
            losses.append(event.val_loss)

            if early and early_stop_decision(losses, early.patience, early.min_delta, early.mode):
                outcome_reason = StopReason.EARLY_STOP
                _send(proc, {"type": "stop"})
                awaiting_done = True
                continue
            if event.epoch >= spec.max_epochs:
                outcome_reason = StopReason.EPOCH_CAP
                _send(proc, {"type": "stop"})
                awaiting_done = True
                continue

            # Learning rate for the next epoch: cosine base schedule (when
            # present) scaled by accumulated plateau reductions; plateau
            # never raises the rate and never goes below its floor.
            next_lr = current_lr
            if cosine:
                next_lr = cosine_lr(
                    min(event.epoch, cosine.total_steps), cosine.total_steps, cosine.initial_lr
                ) * plateau_scale
                next_lr = max(next_lr, plateau.min_lr if plateau else 0.0)
                if next_lr != current_lr:
                    adjustments.append({"source": "cosine", "epoch": event.epoch, "lr": next_lr})
            if plateau:
                reduced = plateau_lr(
                    losses, next_lr, plateau.patience, plateau.factor,
                    plateau.min_lr, plateau.min_delta, plateau.mode,
                )
                if reduced < next_lr:
                    plateau_scale *= plateau.factor
                    adjustments.append({"source": "plateau", "epoch": event.epoch, "lr": reduced})
                next_lr = reduced
            current_lr = next_lr
            _send(proc, {"type": "set_lr", "lr": current_lr})
    except BrokenPipeError:
        outcome_reason = StopReason.TRAINER_FAILURE
        failure_detail = "trainer pipe closed"
    finally:
        try:
            proc.stdin.close()
        except OSError:
            pass
        proc.wait(timeout=10)

    if outcome_reason is None:
        outcome_reason = StopReason.TRAINER_FAILURE
        failure_detail = failure_detail or "trial ended without a stop reason"
    if outcome_reason != StopReason.TRAINER_FAILURE and proc.returncode not in (0, None):
        outcome_reason = StopReason.TRAINER_FAILURE
        failure_detail = f"trainer exited with code {proc.returncode}"

    return TrialOutcome(
        config=config,
        stopped_reason=outcome_reason,
        telemetry=telemetry,
        checkpoint=checkpoint,
        failure_detail=failure_detail,
        lr_adjustments=adjustments,
    )


# ---------------------------------------------------------------------------
# Studies and the trial ledger
# ---------------------------------------------------------------------------

@dataclass
class StudyResult:
    outcomes: list[TrialOutcome]
    state: SurrogateState

    @property
    def incumbent(self) -> tuple[TrialConfig, float]:
        best = self.state.incumbent()
        if best is None:
            raise AllTrialsFailed("no successful trial in the study")
        return best


def _ledger_record(outcome: TrialOutcome) -> dict:
    objective = outcome.best_val_loss if outcome.ok else None
    return {
        "trial_id": outcome.config.trial_id,
        "config": outcome.config.as_dict(),
        "objective": objective,
        "status": "ok" if outcome.ok else "failed",
        "epochs": len(outcome.telemetry),
    }


def _append_ledger(path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_ledger(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _state_from_records(space: SearchSpace, records: list[dict]) -> SurrogateState:
    state = new_state(space)
    for rec in records:
        cfg = rec["config"]
        config = TrialConfig(cfg["trial_id"], cfg["seed"], cfg["values"])
        state = observe(state, config, rec["objective"])
    return state


def run_study(
    spec: TrainerSpec,
    space: SearchSpace,
    budget: int,
    seed: int,
    policies: Sequence[SchedulePolicy] = (),
    ledger_path=None,
) -> StudyResult:
    """suggest -> run_trial -> observe for `budget` trials.

    Failed trials count against the budget. With a ledger path, prior
    records are replayed first so an interrupted study resumes exactly
    where it stopped.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    state = new_state(space)
    outcomes: list[TrialOutcome] = []

    if ledger_path is not None and Path(ledger_path).exists():
        state = _state_from_records(space, read_ledger(ledger_path))

    while state.n_recorded < budget:
        config = suggest(state, space, seed)
        outcome = run_trial(spec, config, policies)
        outcomes.append(outcome)
        objective = outcome.best_val_loss if outcome.ok else None
        state = observe(state, config, objective)
        if ledger_path is not None:
            _append_ledger(ledger_path, _ledger_record(outcome))
        log.info(
            "trial %s: %s objective=%s",
            config.trial_id,
            outcome.stopped_reason.value,
            objective,
        )

    if state.incumbent() is None:
        raise AllTrialsFailed("all trials in the study failed")
    return StudyResult(outcomes=outcomes, state=state)


def select_best_per_cell(
    ledgers: dict[tuple[str, str], list[dict]],
) -> dict[tuple[str, str], Optional[dict]]:
    """Best (lowest-objective) record per (parameter, architecture) cell;
    cells with no successful trial map to None."""
    cells: dict[tuple[str, str], Optional[dict]] = {}
    for key, records in ledgers.items():
        ok = [r for r in records if r["status"] == "ok" and r["objective"] is not None]
        cells[key] = min(ok, key=lambda r: r["objective"]) if ok else None
    return cells


def render_cell_table(cells: dict[tuple[str, str], Optional[dict]]) -> str:
    """Markdown table of incumbent objectives, empty cells rendered NaN."""
    lines = ["| Parameter | Architecture | Best objective | Trial |", "| --- | --- | --- | --- |"]
    for (parameter, architecture) in sorted(cells):
        record = cells[(parameter, architecture)]
        if record is None:
            lines.append(f"| {parameter} | {architecture} | NaN | - |")
        else:
            lines.append(
                f"| {parameter} | {architecture} | {record['objective']:.6g} "
                f"| {record['trial_id']} |"
            )
    return "\n".join(lines) + "\n"
