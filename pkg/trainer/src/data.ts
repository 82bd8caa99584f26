/**
 * Input pipeline: per-backbone preprocessing (resize to 224 plus the
 * model-specific normalization), horizontal-flip augmentation, and the
 * synthetic brightness-regression fixture used by the tests.
 */

import * as tf from "@tensorflow/tfjs";
import type { BackboneTag } from "./model.js";

export const STANDARD_INPUT_SIZE = 224;

// ImageNet channel statistics (RGB, [0,1] scale) for the torch-style nets.
const IMAGENET_MEAN = [0.485, 0.456, 0.406];
const IMAGENET_STD = [0.229, 0.224, 0.225];

/**
 * Normalize a [0,1] RGB tensor the way the named backbone family expects:
 * caffe-style mean subtraction for vgg16/resnet50, [-1,1] scaling for
 * mobilenetv2 and vit, torch-style standardization for densenet121.
 */
export function normalizeFor(tag: BackboneTag, frames: tf.Tensor4D): tf.Tensor4D {
  return tf.tidy(() => {
    switch (tag) {
      case "vgg16":
      case "resnet50": {
        const mean = tf.tensor1d(IMAGENET_MEAN);
        return frames.sub(mean) as tf.Tensor4D;
      }
      case "densenet121": {
        const mean = tf.tensor1d(IMAGENET_MEAN);
        const std = tf.tensor1d(IMAGENET_STD);
        return frames.sub(mean).div(std) as tf.Tensor4D;
      }
      case "mobilenetv2":
      case "vit":
        return frames.mul(2).sub(1) as tf.Tensor4D;
    }
  });
}

/** Resize to the backbone input size (224 by default) and normalize. */
export function preprocess(
  tag: BackboneTag,
  frames: tf.Tensor4D,
  inputSize: number = STANDARD_INPUT_SIZE,
): tf.Tensor4D {
  return tf.tidy(() => {
    let x = frames;
    const [, h, w] = x.shape;
    if (h !== inputSize || w !== inputSize) {
      x = tf.image.resizeBilinear(x, [inputSize, inputSize]);
    }
    return normalizeFor(tag, x);
  });
}

/** Deterministic 32-bit PRNG so the fixture is reproducible. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export interface Dataset {
  trainX: tf.Tensor4D;
  trainY: tf.Tensor2D;
  valX: tf.Tensor4D;
  valY: tf.Tensor2D;
}

/**
 * Brightness-regression fixture: each frame is uniform noise around a
 * per-image base level, and the target is the frame's mean brightness.
 * Learnable by construction through global average pooling.
 */
export function syntheticBrightness(
  n: number,
  size: number,
  seed: number,
  valFraction = 0.25,
): Dataset {
  const rand = mulberry32(seed);
  const frames: number[] = [];
  const targets: number[] = [];
  for (let i = 0; i < n; i++) {
    const base = 0.1 + 0.8 * rand();
    let sum = 0;
    for (let p = 0; p < size * size; p++) {
      const v = Math.min(Math.max(base + (rand() - 0.5) * 0.1, 0), 1);
      sum += v;
      frames.push(v, v, v);
    }
    targets.push(sum / (size * size));
  }
  const x = tf.tensor4d(frames, [n, size, size, 3]);
  const y = tf.tensor2d(targets, [n, 1]);
  const nVal = Math.max(Math.round(n * valFraction), 1);
  const nTrain = n - nVal;
  return {
    trainX: x.slice([0, 0, 0, 0], [nTrain, -1, -1, -1]),
    trainY: y.slice([0, 0], [nTrain, -1]),
    valX: x.slice([nTrain, 0, 0, 0], [nVal, -1, -1, -1]),
    valY: y.slice([nTrain, 0], [nVal, -1]),
  };
}

/**
 * Random horizontal flips. Applied to the five visually symmetric
 * parameters and disabled under the turbidity preset.
 */
export function augmentFlips(frames: tf.Tensor4D, rand: () => number): tf.Tensor4D {
  return tf.tidy(() => {
    const parts: tf.Tensor4D[] = [];
    const n = frames.shape[0];
    for (let i = 0; i < n; i++) {
      const frame = frames.slice([i, 0, 0, 0], [1, -1, -1, -1]) as tf.Tensor4D;
      parts.push(rand() < 0.5 ? (tf.reverse(frame, 2) as tf.Tensor4D) : frame);
    }
    return tf.concat(parts, 0) as tf.Tensor4D;
  });
}

export function flipEnabled(parameter: string | undefined, explicit: unknown): boolean {
  if (typeof explicit === "boolean") return explicit;
  return parameter !== "turbidity";
}
