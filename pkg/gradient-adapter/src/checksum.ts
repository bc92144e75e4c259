/** Weight checksum: SHA-256 over every parameter block, in name order.
 * The service reports it so callers can verify no update was ever applied. */

import { createHash } from "node:crypto";

import type { TinyTransformer } from "./model.js";

export function weightChecksum(model: TinyTransformer): string {
  const hash = createHash("sha256");
  for (const name of model.paramNames()) {
    hash.update(name);
    const block = model.param(name);
    hash.update(Buffer.from(block.buffer, block.byteOffset, block.byteLength));
  }
  return hash.digest("hex");
}
