/**
 * Backbone and regression head construction.
 *
 * The backbone is a small convolutional stack standing in for the real
 * ImageNet networks: this adapter exists to exercise the protocol and the
 * head wiring, not to reproduce full-scale accuracy. The head follows the
 * transfer-learning recipe: global average pooling, dropout, one dense
 * ReLU layer with L2 on its kernel, and a single linear output unit. The
 * "vit" variant pools a patch embedding instead.
 */

import * as tf from "@tensorflow/tfjs";

export const CNN_TAGS = ["vgg16", "resnet50", "mobilenetv2", "densenet121"] as const;
export const ALL_TAGS = [...CNN_TAGS, "vit"] as const;
export type BackboneTag = (typeof ALL_TAGS)[number];

export interface HeadSpec {
  backbone: BackboneTag;
  denseUnits: number;
  dropout: number;
  l2: number;
  /** how many trailing backbone layers stay trainable (default 10) */
  unfrozenDepth: number;
  inputSize: number;
  seed: number;
}

export interface BuiltModel {
  model: tf.LayersModel;
  backboneLayers: string[];
  unfrozenLayers: string[];
  featureDim: number;
}

/** Head parameters: featureDim*units + units + units + 1. */
export function analyticHeadParams(featureDim: number, denseUnits: number): number {
  return featureDim * denseUnits + denseUnits + denseUnits + 1;
}

export function countTrainableParams(model: tf.LayersModel): number {
  let total = 0;
  for (const weight of model.trainableWeights) {
    let size = 1;
    for (const dim of weight.shape) {
      size *= dim ?? 1;
    }
    total += size;
  }
  return total;
}

function convBackbone(input: tf.SymbolicTensor, seed: number) {
  const conv1 = tf.layers.conv2d({
    name: "backbone_conv1",
    filters: 8,
    kernelSize: 3,
    padding: "same",
    activation: "relu",
    kernelInitializer: tf.initializers.glorotUniform({ seed }),
  });
  const pool1 = tf.layers.maxPooling2d({ name: "backbone_pool1", poolSize: 2 });
  const conv2 = tf.layers.conv2d({
    name: "backbone_conv2",
    filters: 16,
    kernelSize: 3,
    padding: "same",
    activation: "relu",
    kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 1 }),
  });
  const pool2 = tf.layers.maxPooling2d({ name: "backbone_pool2", poolSize: 2 });
  const layers = [conv1, pool1, conv2, pool2];
  let x = input;
  for (const layer of layers) {
    x = layer.apply(x) as tf.SymbolicTensor;
  }
  return { output: x, layers, featureDim: 16 };
}

function patchBackbone(input: tf.SymbolicTensor, seed: number) {
  // patch embedding: strided conv, one token per 8x8 patch
  const embed = tf.layers.conv2d({
    name: "backbone_patch_embed",
    filters: 24,
    kernelSize: 8,
    strides: 8,
    padding: "same",
    kernelInitializer: tf.initializers.glorotUniform({ seed }),
  });
  const output = embed.apply(input) as tf.SymbolicTensor;
  return { output, layers: [embed], featureDim: 24 };
}

export function buildModel(spec: HeadSpec): BuiltModel {
  const input = tf.input({ shape: [spec.inputSize, spec.inputSize, 3], name: "frame" });
  const backbone =
    spec.backbone === "vit" ? patchBackbone(input, spec.seed) : convBackbone(input, spec.seed);

  let x = tf.layers
    .globalAveragePooling2d({ name: "head_gap" })
    .apply(backbone.output) as tf.SymbolicTensor;
  x = tf.layers
    .dropout({ name: "head_dropout", rate: spec.dropout, seed: spec.seed + 7 })
    .apply(x) as tf.SymbolicTensor;
  x = tf.layers
    .dense({
      name: "head_dense",
      units: spec.denseUnits,
      activation: "relu",
      kernelRegularizer: tf.regularizers.l2({ l2: spec.l2 }),
      kernelInitializer: tf.initializers.glorotUniform({ seed: spec.seed + 11 }),
    })
    .apply(x) as tf.SymbolicTensor;
  const output = tf.layers
    .dense({
      name: "head_output",
      units: 1,
      activation: "linear",
      kernelInitializer: tf.initializers.glorotUniform({ seed: spec.seed + 13 }),
    })
    .apply(x) as tf.SymbolicTensor;

  const model = tf.model({ inputs: input, outputs: output });

  // freeze everything in the backbone except the trailing unfrozenDepth
  // entries of its flat layer list
  const names = backbone.layers.map((l) => l.name);
  const cut = Math.max(names.length - spec.unfrozenDepth, 0);
  const unfrozen: string[] = [];
  backbone.layers.forEach((layer, i) => {
    if (i < cut) {
      layer.trainable = false;
    } else {
      unfrozen.push(layer.name);
    }
  });

  return {
    model,
    backboneLayers: names,
    unfrozenLayers: unfrozen,
    featureDim: backbone.featureDim,
  };
}

export function makeOptimizer(name: string, lr: number): tf.Optimizer {
  if (name === "sgd") return tf.train.sgd(lr);
  if (name === "adam") return tf.train.adam(lr);
  throw new Error(`unknown optimizer ${name}`);
}

export function setLearningRate(optimizer: tf.Optimizer, lr: number): void {
  // both SGD and Adam read this field each applyGradients call
  (optimizer as unknown as { learningRate: number }).learningRate = lr;
}
