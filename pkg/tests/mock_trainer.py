#!/usr/bin/env python3
"""Scripted trainer speaking the orchestrator wire protocol.

Modes:
  --script FILE      one validation loss per line; train loss = val + 0.1
  --objective NAME   synthetic losses derived from the received config
                     ("quadratic" only)
  --crash-after N    exit(1) right after emitting epoch N
  --malformed-at N   print a junk line instead of epoch N

The trainer is lockstep: after every epoch event it waits for set_lr
(continue) or stop. All telemetry is deterministic; wall_seconds is 0.
"""

import argparse
import json
import math
import sys
import time


def read_message():
    line = sys.stdin.readline()
    if not line:
        sys.exit(0)
    return json.loads(line)


def send(message):
    sys.stdout.write(json.dumps(message, sort_keys=True) + "\n")
    sys.stdout.flush()


def quadratic_objective(values):
    # smooth bowl over the search space with categorical penalties
    loss = 0.05
    loss += (values["dropout"] - 0.4) ** 2 * 10.0
    loss += (math.log10(values["l2"]) + 3.0) ** 2 * 0.5
    loss += (math.log10(values["learning_rate"]) + 4.0) ** 2 * 0.5
    loss += 0.2 if values["dense_units"] == 512 else 0.0
    loss += 0.3 if values["optimizer"] == "sgd" else 0.0
    return loss


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--script", default=None)
    parser.add_argument("--objective", default=None)
    parser.add_argument("--crash-after", type=int, default=None)
    parser.add_argument("--malformed-at", type=int, default=None)
    parser.add_argument("--sleep-at", type=int, default=None)
    parser.add_argument("--crash-if-dropout-above", type=float, default=None)
    args = parser.parse_args()

    config = read_message()
    assert config["type"] == "config", config
    lr = float(config["hyperparameters"].get("learning_rate", 1e-3))
    max_epochs = int(config["max_epochs"])

    if (
        args.crash_if_dropout_above is not None
        and float(config["hyperparameters"]["dropout"]) > args.crash_if_dropout_above
    ):
        sys.exit(1)

    if args.script:
        with open(args.script) as fh:
            losses = [float(line) for line in fh if line.strip()]
    else:
        final = quadratic_objective(config["hyperparameters"])
        # geometric approach to the config-determined floor
        losses = [final + (2.0 - final) * (0.6 ** i) for i in range(max_epochs)]

    epoch = 0
    for loss in losses:
        epoch += 1
        if args.sleep_at is not None and epoch == args.sleep_at:
            time.sleep(2.0)
        if args.malformed_at is not None and epoch == args.malformed_at:
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
        else:
            send(
                {
                    "type": "epoch",
                    "epoch": epoch,
                    "train_loss": round(loss + 0.1, 10),
                    "val_loss": round(loss, 10),
                    "lr": lr,
                    "wall_seconds": 0.0,
                }
            )
        if args.crash_after is not None and epoch >= args.crash_after:
            sys.exit(1)
        msg = read_message()
        if msg["type"] == "stop":
            send({"type": "done", "checkpoint": f"ckpt/{config['trial_id']}/best.bin"})
            return
        assert msg["type"] == "set_lr", msg
        lr = float(msg["lr"])
    # losses exhausted without a stop: simulate a trainer that gives up
    sys.exit(0)


if __name__ == "__main__":
    main()
