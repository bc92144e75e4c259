/** Byte-level tokenization: printable ASCII maps to ids 1..95, everything
 * else to 95; id 0 is the sequence-start token. */

export const BOS = 0;

export function charTokens(text: string, vocabSize: number): number[] {
  const tokens: number[] = [];
  for (const ch of text) {
    const code = ch.charCodeAt(0);
    const id = code >= 32 && code < 127 ? code - 31 : vocabSize - 1;
    tokens.push(Math.min(id, vocabSize - 1));
  }
  return tokens;
}

/** [BOS] + input + target; returns the sequence and where the target begins. */
export function buildSequence(
  inputText: string,
  targetText: string,
  vocabSize: number,
): { tokens: number[]; targetStart: number } {
  const input = charTokens(inputText, vocabSize);
  const target = charTokens(targetText, vocabSize);
  return { tokens: [BOS, ...input, ...target], targetStart: 1 + input.length };
}
