import type { Choice, ChoiceMap } from "./types.js";

// Unsubmitted choices live in localStorage keyed by the exact pending
// batch, so a refresh mid-batch restores them and a new batch (different
// indices) never sees stale entries.

export function batchKey(sessionId: string, indices: number[]): string {
  return `prepal:${sessionId}:${indices.join(",")}`;
}

export function saveChoices(key: string, choices: ChoiceMap): void {
  try {
    localStorage.setItem(key, JSON.stringify(choices));
  } catch {
    // storage full or unavailable; the session still works, a refresh
    // just will not restore these choices
  }
}

export function loadChoices(key: string, validIndices: number[]): ChoiceMap {
  let raw: string | null = null;
  try {
    raw = localStorage.getItem(key);
  } catch {
    return {};
  }
  if (!raw) return {};
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch {
    return {};
  }
  if (typeof parsed !== "object" || parsed === null) return {};
  const valid = new Set(validIndices);
  const out: ChoiceMap = {};
  for (const [key2, value] of Object.entries(parsed)) {
    const index = Number(key2);
    if (!valid.has(index)) continue;
    if (value === "skip" || typeof value === "number") {
      out[index] = value as Choice;
    }
  }
  return out;
}

export function clearChoices(key: string): void {
  try {
    localStorage.removeItem(key);
  } catch {
    // nothing to clean up if storage is unavailable
  }
}
