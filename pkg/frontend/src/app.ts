import { ApiClient, ApiError } from "./api";
import { DebouncedFetcher } from "./debounce";
import { diffRankings } from "./diff";
import { ensureSession, recordColdStart, resetSession } from "./session";
import type { CompletionView, SessionView } from "./types";

export type AppOptions = {
  debounceMs?: number;
  topN?: number;
  storage?: Storage;
};

export class App {
  readonly input: HTMLInputElement;
  readonly suggestions: HTMLOListElement;
  readonly historyList: HTMLOListElement;
  readonly banner: HTMLDivElement;
  readonly comparison: HTMLTableSectionElement;
  readonly selectButton: HTMLButtonElement;

  session!: SessionView;
  current: CompletionView[] = [];
  currentPrefix = "";

  private fetcher: DebouncedFetcher<CompletionView[]>;
  private topN: number;
  private storage: Storage;

  constructor(
    root: HTMLElement,
    private api: ApiClient,
    opts: AppOptions = {},
  ) {
    this.topN = opts.topN ?? 10;
    this.storage = opts.storage ?? window.sessionStorage;
    root.innerHTML = `
      <div class="banner" data-role="banner" hidden></div>
      <div class="entry">
        <input data-role="prefix" type="text" autocomplete="off"
               placeholder="start typing a query" />
        <button data-role="select" disabled>select</button>
      </div>
      <ol class="suggestions" data-role="suggestions"></ol>
      <div class="panels">
        <section>
          <h2>selections</h2>
          <ol class="history" data-role="history"></ol>
        </section>
        <section>
          <h2>cold start vs now</h2>
          <table class="comparison">
            <thead><tr><th>#</th><th>cold</th><th>now</th></tr></thead>
            <tbody data-role="comparison"></tbody>
          </table>
        </section>
      </div>`;
    this.banner = root.querySelector<HTMLDivElement>('[data-role="banner"]')!;
    this.input = root.querySelector<HTMLInputElement>('[data-role="prefix"]')!;
    this.selectButton = root.querySelector<HTMLButtonElement>('[data-role="select"]')!;
    this.suggestions = root.querySelector<HTMLOListElement>('[data-role="suggestions"]')!;
    this.historyList = root.querySelector<HTMLOListElement>('[data-role="history"]')!;
    this.comparison = root.querySelector<HTMLTableSectionElement>('[data-role="comparison"]')!;

    this.fetcher = new DebouncedFetcher(
      opts.debounceMs ?? 150,
      (prefix) => this.api.complete(this.session.userId, prefix, this.topN),
      (prefix, completions) => this.applyCompletions(prefix, completions),
      (_prefix, err) => this.showError(err),
    );

    this.input.addEventListener("input", () => this.onInput());
    this.input.addEventListener("keydown", (ev) => {
      if (ev.key === "Enter" && this.input.value.trim()) {
        void this.submitSelection(this.input.value.trim());
      }
    });
    this.selectButton.addEventListener("click", () => {
      if (this.input.value.trim()) void this.submitSelection(this.input.value.trim());
    });
  }

  async start(): Promise<void> {
    this.session = await ensureSession(this.api, this.storage);
  }

  private onInput(): void {
    const prefix = this.input.value.trim().toLowerCase();
    this.selectButton.disabled = prefix.length === 0;
    if (!prefix) {
      this.fetcher.cancel();
      this.currentPrefix = "";
      this.current = [];
      this.renderSuggestions();
      this.renderComparison();
      return;
    }
    this.fetcher.request(prefix);
  }

  private applyCompletions(prefix: string, completions: CompletionView[]): void {
    if (prefix !== this.input.value.trim().toLowerCase()) return; // superseded
    this.hideError();
    this.currentPrefix = prefix;
    this.current = completions;
    recordColdStart(this.session, prefix, completions);
    this.renderSuggestions();
    this.renderComparison();
  }

  async submitSelection(query: string): Promise<void> {
    try {
      await this.api.select(this.session.userId, query);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        resetSession(this.storage);
        this.showError(new Error("session expired: reload the page to start a new one"));
        return;
      }
      this.showError(err);
      return;
    }
    this.session.history.push(query);
    this.renderHistory();
    // show the adapted ranking for what the user is looking at right now
    if (this.currentPrefix) this.fetcher.fire(this.currentPrefix);
  }

  private renderSuggestions(): void {
    this.suggestions.replaceChildren(
      ...this.current.map((c) => {
        const li = document.createElement("li");
        li.className = "suggestion";
        li.dataset.rank = String(c.rank);
        const score = document.createElement("span");
        score.className = "score";
        score.textContent = c.logprob.toFixed(2);
        li.textContent = c.text;
        li.appendChild(score);
        li.addEventListener("click", () => void this.submitSelection(c.text));
        return li;
      }),
    );
  }

  private renderHistory(): void {
    this.historyList.replaceChildren(
      ...this.session.history.map((q) => {
        const li = document.createElement("li");
        li.textContent = q;
        return li;
      }),
    );
  }

  private renderComparison(): void {
    const cold = this.currentPrefix
      ? this.session.coldSnapshots.get(this.currentPrefix) ?? []
      : [];
    const rows = diffRankings(cold, this.current);
    this.comparison.replaceChildren(
      ...rows.map((row) => {
        const tr = document.createElement("tr");
        if (row.status !== "same") tr.className = "highlight";
        tr.dataset.status = row.status;
        for (const text of [String(row.rank), row.cold?.text ?? "", row.warm?.text ?? ""]) {
          const td = document.createElement("td");
          td.textContent = text;
          tr.appendChild(td);
        }
        return tr;
      }),
    );
  }

  private showError(err: unknown): void {
    this.banner.hidden = false;
    this.banner.textContent =
      err instanceof Error ? err.message : "request failed; showing the last good results";
  }

  private hideError(): void {
    this.banner.hidden = true;
    this.banner.textContent = "";
  }
}

export async function createApp(
  root: HTMLElement,
  api: ApiClient,
  opts: AppOptions = {},
): Promise<App> {
  const app = new App(root, api, opts);
  await app.start();
  return app;
}
