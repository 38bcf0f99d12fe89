import type { CompletionView, DiffRow } from "./types";

/** Rank-aligned comparison of a cold-start list against the current one.
 *
 * A row is "same" when the same text sits at the same rank, "changed" when
 * either of its texts belongs to only one of the lists (insertions and
 * drops), and "moved" when both texts exist in both lists but swapped ranks.
 * Only "same" rows go unhighlighted.
 */
export function diffRankings(cold: CompletionView[], warm: CompletionView[]): DiffRow[] {
  const coldTexts = new Set(cold.map((c) => c.text));
  const warmTexts = new Set(warm.map((c) => c.text));
  const rows: DiffRow[] = [];
  const n = Math.max(cold.length, warm.length);
  for (let i = 0; i < n; i++) {
    const c = cold[i];
    const w = warm[i];
    let status: DiffRow["status"];
    if (c && w && c.text === w.text) {
      status = "same";
    } else if ((c && !warmTexts.has(c.text)) || (w && !coldTexts.has(w.text))) {
      status = "changed";
    } else {
      status = "moved";
    }
    rows.push({ rank: i + 1, cold: c, warm: w, status });
  }
  return rows;
}

export function highlightedRanks(rows: DiffRow[]): number[] {
  return rows.filter((r) => r.status !== "same").map((r) => r.rank);
}
