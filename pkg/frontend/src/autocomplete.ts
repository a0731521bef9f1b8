/** Vocabulary-scoped token suggestions for the query box.
 *
 * The engine only understands vocabulary tokens, so suggestions come
 * straight from /api/vocab: categories, values, and nothing else.
 */

import { VocabInfo } from './api.js';

export interface Suggestion {
  token: string;
  attribute: string;
}

export function buildSuggestionPool(vocab: VocabInfo): Suggestion[] {
  const pool: Suggestion[] = [];
  for (const [attribute, tokens] of Object.entries(vocab.values)) {
    for (const token of tokens) pool.push({ token, attribute });
  }
  pool.sort((a, b) => (a.token < b.token ? -1 : a.token > b.token ? 1 : 0));
  return pool;
}

/** Case-insensitive prefix matches first, then substring matches. */
export function suggest(pool: Suggestion[], prefix: string, limit = 8): Suggestion[] {
  const needle = prefix.trim().toLowerCase();
  if (!needle) return [];
  const starts: Suggestion[] = [];
  const contains: Suggestion[] = [];
  for (const s of pool) {
    const hay = s.token.toLowerCase();
    if (hay.startsWith(needle)) starts.push(s);
    else if (hay.includes(needle)) contains.push(s);
    if (starts.length >= limit) break;
  }
  return starts.concat(contains).slice(0, limit);
}

/** Split a free-text query into vocabulary tokens, longest match first, so
 * multi-word tokens like "sky blue" survive. Unmatched words pass through
 * untouched and let the server report them. */
export function tokenize(input: string, pool: Suggestion[]): string[] {
  const known = new Set(pool.map((s) => s.token));
  const words = input.trim().split(/\s+/).filter((w) => w.length > 0);
  const tokens: string[] = [];
  let i = 0;
  while (i < words.length) {
    let matched = false;
    for (let len = Math.min(3, words.length - i); len >= 1; len--) {
      const candidate = words.slice(i, i + len).join(' ');
      if (known.has(candidate)) {
        tokens.push(candidate);
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      tokens.push(words[i]);
      i += 1;
    }
  }
  return tokens;
}
