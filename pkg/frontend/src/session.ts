import type { ApiClient } from "./api";
import type { CompletionView, SessionView } from "./types";

const STORAGE_KEY = "qac.user_id";

/** Restore the session user or create one; the id persists across page
 * interactions so reloads do not mint duplicate users. */
export async function ensureSession(
  api: ApiClient,
  storage: Storage = window.sessionStorage,
): Promise<SessionView> {
  const stored = storage.getItem(STORAGE_KEY);
  let userId = stored === null ? NaN : Number(stored);
  if (!Number.isInteger(userId) || userId < 1) {
    userId = await api.createUser();
    storage.setItem(STORAGE_KEY, String(userId));
  }
  return { userId, history: [], coldSnapshots: new Map() };
}

export function resetSession(storage: Storage = window.sessionStorage): void {
  storage.removeItem(STORAGE_KEY);
}

/** Record the first list ever seen for a prefix; that list is the cold-start
 * baseline the comparison panel diffs against. */
export function recordColdStart(
  session: SessionView,
  prefix: string,
  completions: CompletionView[],
): void {
  if (!session.coldSnapshots.has(prefix)) {
    session.coldSnapshots.set(prefix, completions.map((c) => ({ ...c })));
  }
}
