import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import type { ApiClient } from "../src/api";
import { createApp, type App } from "../src/app";
import { diffRankings, highlightedRanks } from "../src/diff";
import type { CompletionView } from "../src/types";

const SPORTS = ["baseball", "basketball", "baltimore ravens"];
const GENERIC = ["baby names", "bank of america", "barnes and noble"];

/** Stand-in for the completion service: ranking flips to the sports pool
 * once five queries have been selected, mimicking warm-start adaptation. */
class FakeBackend {
  users = 0;
  selects: string[] = [];
  completeCalls: string[] = [];
  failNext = false;

  asApi(): ApiClient {
    return this as unknown as ApiClient;
  }

  async createUser(): Promise<number> {
    this.users++;
    return this.users + 1;
  }

  async complete(_userId: number, prefix: string, topN: number): Promise<CompletionView[]> {
    if (this.failNext) {
      this.failNext = false;
      throw new Error("backend unavailable");
    }
    this.completeCalls.push(prefix);
    const warm = this.selects.length >= 5;
    const pool = warm ? [...SPORTS, ...GENERIC] : [...GENERIC, ...SPORTS];
    return pool
      .filter((text) => text.startsWith(prefix))
      .slice(0, topN)
      .map((text, i) => ({ text, rank: i + 1, logprob: -(i + 1) }));
  }

  async select(_userId: number, query: string): Promise<void> {
    this.selects.push(query);
  }

  async health(): Promise<boolean> {
    return true;
  }
}

function memoryStorage(): Storage {
  const map = new Map<string, string>();
  return {
    get length() {
      return map.size;
    },
    clear: () => map.clear(),
    getItem: (k) => map.get(k) ?? null,
    key: (i) => [...map.keys()][i] ?? null,
    removeItem: (k) => void map.delete(k),
    setItem: (k, v) => void map.set(k, String(v)),
  };
}

async function typeBurst(app: App, values: string[], gapMs: number) {
  for (const value of values) {
    app.input.value = value;
    app.input.dispatchEvent(new Event("input"));
    await vi.advanceTimersByTimeAsync(gapMs);
  }
  await vi.advanceTimersByTimeAsync(200);
}

describe("typeahead app", () => {
  let backend: FakeBackend;
  let storage: Storage;
  let root: HTMLElement;

  beforeEach(() => {
    vi.useFakeTimers();
    backend = new FakeBackend();
    storage = memoryStorage();
    root = document.createElement("div");
    document.body.replaceChildren(root);
  });

  afterEach(() => vi.useRealTimers());

  async function boot(): Promise<App> {
    const pending = createApp(root, backend.asApi(), { storage });
    await vi.advanceTimersByTimeAsync(1);
    return pending;
  }

  it("renders rank-ordered suggestions for a typed prefix", async () => {
    const app = await boot();
    await typeBurst(app, ["ba"], 10);
    const items = [...app.suggestions.querySelectorAll("li")];
    expect(items.length).toBeGreaterThan(0);
    expect(items.length).toBeLessThanOrEqual(10);
    expect(items.map((li) => li.dataset.rank)).toEqual(
      items.map((_li, i) => String(i + 1)),
    );
    expect(items.map((li) => li.firstChild?.textContent)).toEqual(
      GENERIC.concat(SPORTS).filter((t) => t.startsWith("ba")).slice(0, 10),
    );
  });

  it("a keystroke burst inside the debounce window issues one request", async () => {
    const app = await boot();
    await typeBurst(app, ["b", "ba", "ban"], 30);
    expect(backend.completeCalls).toEqual(["ban"]);
  });

  it("selection feedback warms the ranking and the diff panel highlights it", async () => {
    const app = await boot();
    await typeBurst(app, ["ba"], 10);
    const cold = app.session.coldSnapshots.get("ba");
    expect(cold).toBeDefined();

    for (const query of [...SPORTS, "nascar", "yankees"]) {
      await app.submitSelection(query);
      await vi.advanceTimersByTimeAsync(200);
    }
    expect(backend.selects).toHaveLength(5);
    expect([...app.historyList.querySelectorAll("li")].map((li) => li.textContent)).toEqual(
      [...SPORTS, "nascar", "yankees"],
    );

    // retype the original prefix: the rendered list must now differ
    await typeBurst(app, ["b", "ba"], 20);
    const warmTexts = [...app.suggestions.querySelectorAll("li")].map(
      (li) => li.firstChild?.textContent,
    );
    expect(warmTexts[0]).toBe("baseball");
    expect(warmTexts).not.toEqual(cold!.map((c) => c.text));

    const rows = [...app.comparison.querySelectorAll("tr")];
    const highlighted = rows
      .filter((tr) => tr.classList.contains("highlight"))
      .map((tr) => Number(tr.children[0].textContent));
    const oracle = highlightedRanks(diffRankings(cold!, app.current));
    expect(highlighted).toEqual(oracle);
    expect(highlighted.length).toBeGreaterThan(0);
  });

  it("keeps the previous list and shows a banner when the backend fails", async () => {
    const app = await boot();
    await typeBurst(app, ["ba"], 10);
    const before = [...app.suggestions.querySelectorAll("li")].map((li) => li.textContent);
    backend.failNext = true;
    await typeBurst(app, ["bas"], 10);
    expect(app.banner.hidden).toBe(false);
    const after = [...app.suggestions.querySelectorAll("li")].map((li) => li.textContent);
    expect(after).toEqual(before);
  });

  it("clicking a suggestion posts the selection and refetches", async () => {
    const app = await boot();
    await typeBurst(app, ["ba"], 10);
    const first = app.suggestions.querySelector("li")!;
    first.dispatchEvent(new Event("click"));
    await vi.advanceTimersByTimeAsync(200);
    expect(backend.selects).toEqual(["baby names"]);
    expect(backend.completeCalls.filter((p) => p === "ba")).toHaveLength(2);
  });

  it("select control is disabled for empty input", async () => {
    const app = await boot();
    expect(app.selectButton.disabled).toBe(true);
    await typeBurst(app, ["ba"], 10);
    expect(app.selectButton.disabled).toBe(false);
  });

  it("a second app instance reuses the stored session user", async () => {
    await boot();
    root = document.createElement("div");
    document.body.replaceChildren(root);
    await boot();
    expect(backend.users).toBe(1);
  });
});
