/**
 * Line-delimited JSON over stdio, per docs/protocol.md in the parent
 * repository. Protocol messages go to stdout via process.stdout.write;
 * everything else (tfjs banners, diagnostics) belongs on stderr.
 */

import * as readline from "node:readline";

export interface ConfigMessage {
  type: "config";
  trial_id: string;
  seed: number;
  hyperparameters: {
    dropout: number;
    l2: number;
    learning_rate: number;
    dense_units: number;
    optimizer: string;
  };
  max_epochs: number;
  architecture?: string;
  options?: Record<string, unknown>;
}

export interface SetLrMessage {
  type: "set_lr";
  lr: number;
}

export interface StopMessage {
  type: "stop";
}

export type Inbound = ConfigMessage | SetLrMessage | StopMessage;

export interface EpochMessage {
  type: "epoch";
  epoch: number;
  train_loss: number;
  val_loss: number;
  lr: number;
  wall_seconds: number;
}

export interface DoneMessage {
  type: "done";
  checkpoint: string;
  best_epoch: number;
  trainable_params: number;
  unfrozen_layers: string[];
}

export function send(message: EpochMessage | DoneMessage): void {
  process.stdout.write(JSON.stringify(message) + "\n");
}

/** Async iterator over inbound messages; throws on anything malformed. */
export async function* messages(
  input: NodeJS.ReadableStream = process.stdin,
): AsyncGenerator<Inbound> {
  const rl = readline.createInterface({ input, crlfDelay: Infinity });
  for await (const line of rl) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    let parsed: unknown;
    try {
      parsed = JSON.parse(trimmed);
    } catch (err) {
      throw new Error(`unparseable message: ${trimmed}`);
    }
    const msg = parsed as { type?: string };
    if (msg.type !== "config" && msg.type !== "set_lr" && msg.type !== "stop") {
      throw new Error(`unknown message type: ${trimmed}`);
    }
    yield parsed as Inbound;
  }
}
