/**
 * The trial session: builds the model from a config message, trains one
 * epoch per continue signal, tracks the best validation loss for
 * checkpointing, and answers the protocol driver.
 */

import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";

import {
  augmentFlips,
  flipEnabled,
  mulberry32,
  preprocess,
  syntheticBrightness,
} from "./data.js";
import {
  ALL_TAGS,
  BackboneTag,
  buildModel,
  countTrainableParams,
  makeOptimizer,
  setLearningRate,
} from "./model.js";
import { ConfigMessage, DoneMessage, messages, send } from "./protocol.js";

interface SessionOptions {
  nImages: number;
  inputSize: number;
  batchSize: number;
  valFraction: number;
  unfrozenDepth: number;
  parameter?: string;
  horizontalFlip: boolean;
  checkpointDir: string;
}

function parseOptions(config: ConfigMessage): SessionOptions {
  const raw = config.options ?? {};
  const num = (key: string, fallback: number) =>
    typeof raw[key] === "number" ? (raw[key] as number) : fallback;
  const parameter = typeof raw["parameter"] === "string" ? (raw["parameter"] as string) : undefined;
  return {
    nImages: num("n_images", 16),
    inputSize: num("input_size", 32),
    batchSize: num("batch_size", 8),
    valFraction: num("val_fraction", 0.25),
    unfrozenDepth: num("unfrozen_depth", 10),
    parameter,
    horizontalFlip: flipEnabled(parameter, raw["horizontal_flip"]),
    checkpointDir:
      typeof raw["checkpoint_dir"] === "string" ? (raw["checkpoint_dir"] as string) : os.tmpdir(),
  };
}

export class TrialSession {
  readonly config: ConfigMessage;
  readonly options: SessionOptions;
  readonly unfrozenLayers: string[];
  readonly trainableParams: number;

  private model: tf.LayersModel;
  private optimizer: tf.Optimizer;
  private lr: number;
  private trainX: tf.Tensor4D;
  private trainY: tf.Tensor2D;
  private valX: tf.Tensor4D;
  private valY: tf.Tensor2D;
  private epoch = 0;
  private bestValLoss = Infinity;
  private bestEpoch = 0;
  private bestWeights: tf.Tensor[] = [];
  private flipRand: () => number;

  constructor(config: ConfigMessage) {
    this.config = config;
    this.options = parseOptions(config);
    const tag = (config.architecture ?? "densenet121") as BackboneTag;
    if (!ALL_TAGS.includes(tag)) {
      throw new Error(`unknown architecture tag ${tag}`);
    }

    const hp = config.hyperparameters;
    const built = buildModel({
      backbone: tag,
      denseUnits: hp.dense_units,
      dropout: hp.dropout,
      l2: hp.l2,
      unfrozenDepth: this.options.unfrozenDepth,
      inputSize: this.options.inputSize,
      seed: config.seed,
    });
    this.model = built.model;
    this.unfrozenLayers = built.unfrozenLayers;
    this.trainableParams = countTrainableParams(built.model);

    this.lr = hp.learning_rate;
    this.optimizer = makeOptimizer(hp.optimizer, this.lr);
    this.model.compile({ optimizer: this.optimizer, loss: "meanSquaredError" });

    const data = syntheticBrightness(
      this.options.nImages,
      this.options.inputSize,
      config.seed,
      this.options.valFraction,
    );
    this.trainX = preprocess(tag, data.trainX, this.options.inputSize);
    this.trainY = data.trainY;
    this.valX = preprocess(tag, data.valX, this.options.inputSize);
    this.valY = data.valY;
    this.flipRand = mulberry32(config.seed ^ 0x5f3759df);
  }

  setLr(lr: number): void {
    this.lr = lr;
    setLearningRate(this.optimizer, lr);
  }

  async runEpoch(): Promise<{ epoch: number; trainLoss: number; valLoss: number; lr: number }> {
    this.epoch += 1;
    const n = this.trainX.shape[0];
    const batch = this.options.batchSize;
    let lossSum = 0;
    let batches = 0;
    for (let start = 0; start < n; start += batch) {
      const size = Math.min(batch, n - start);
      const xs = this.trainX.slice([start, 0, 0, 0], [size, -1, -1, -1]) as tf.Tensor4D;
      const fed = this.options.horizontalFlip ? augmentFlips(xs, this.flipRand) : xs;
      const ys = this.trainY.slice([start, 0], [size, -1]);
      const loss = (await this.model.trainOnBatch(fed, ys)) as number;
      lossSum += loss;
      batches += 1;
      if (fed !== xs) fed.dispose();
      xs.dispose();
      ys.dispose();
    }

    const valLoss = tf.tidy(() => {
      const out = this.model.evaluate(this.valX, this.valY) as tf.Scalar;
      return out.dataSync()[0];
    });
    if (valLoss < this.bestValLoss) {
      this.bestValLoss = valLoss;
      this.bestEpoch = this.epoch;
      this.bestWeights.forEach((w) => w.dispose());
      this.bestWeights = this.model.getWeights().map((w) => w.clone());
    }
    return { epoch: this.epoch, trainLoss: lossSum / batches, valLoss, lr: this.lr };
  }

  /** Restore the best weights and write them out; returns the path. */
  saveBestCheckpoint(): { checkpoint: string; bestEpoch: number } {
    if (this.bestWeights.length) {
      this.model.setWeights(this.bestWeights);
    }
    const payload = {
      trial_id: this.config.trial_id,
      best_epoch: this.bestEpoch,
      best_val_loss: this.bestValLoss,
      weights: this.model.getWeights().map((w) => ({
        shape: w.shape,
        values: Array.from(w.dataSync()),
      })),
    };
    fs.mkdirSync(this.options.checkpointDir, { recursive: true });
    const file = path.join(
      this.options.checkpointDir,
      `${this.config.trial_id}.weights.json`,
    );
    fs.writeFileSync(file, JSON.stringify(payload));
    return { checkpoint: file, bestEpoch: this.bestEpoch };
  }

  dispose(): void {
    this.bestWeights.forEach((w) => w.dispose());
    this.trainX.dispose();
    this.trainY.dispose();
    this.valX.dispose();
    this.valY.dispose();
  }
}

/** Full protocol loop: config, then epoch/continue rounds until stop. */
export async function serve(input: NodeJS.ReadableStream = process.stdin): Promise<void> {
  await tf.setBackend("cpu");
  const inbox = messages(input);

  const first = await inbox.next();
  if (first.done || first.value.type !== "config") {
    throw new Error("expected a config message first");
  }
  const session = new TrialSession(first.value);

  try {
    while (true) {
      const started = Date.now();
      const result = await session.runEpoch();
      send({
        type: "epoch",
        epoch: result.epoch,
        train_loss: result.trainLoss,
        val_loss: result.valLoss,
        lr: result.lr,
        wall_seconds: (Date.now() - started) / 1000,
      });

      const reply = await inbox.next();
      if (reply.done) {
        throw new Error("controller closed the stream mid-trial");
      }
      if (reply.value.type === "stop") {
        const { checkpoint, bestEpoch } = session.saveBestCheckpoint();
        const done: DoneMessage = {
          type: "done",
          checkpoint,
          best_epoch: bestEpoch,
          trainable_params: session.trainableParams,
          unfrozen_layers: session.unfrozenLayers,
        };
        send(done);
        return;
      }
      if (reply.value.type === "set_lr") {
        session.setLr(reply.value.lr);
        continue;
      }
      throw new Error(`unexpected message ${JSON.stringify(reply.value)}`);
    }
  } finally {
    session.dispose();
  }
}
