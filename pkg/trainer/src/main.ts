/**
 * Entry point: keep stdout reserved for protocol messages, then hand
 * control to the trial loop. Protocol errors exit nonzero with the
 * diagnostic on stderr.
 */

// anything that logs through console.log (library banners included) must
// not touch the protocol stream
console.log = (...args: unknown[]) => console.error(...args);

const { serve } = await import("./train.js");

try {
  await serve();
  process.exit(0);
} catch (err) {
  console.error(`trainer error: ${err instanceof Error ? err.message : err}`);
  process.exit(1);
}
