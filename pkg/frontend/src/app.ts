import { ApiClient, ApiError } from "./api.js";
import { attachShortcuts, type ShortcutHandler } from "./shortcuts.js";
import { batchKey, clearChoices, loadChoices, saveChoices } from "./storage.js";
import type { BatchQuery, Choice, ChoiceMap } from "./types.js";

export interface AppOptions {
  base: string;
  sessionId: string;
  root: HTMLElement;
  classNames?: string[];
  pollMs?: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function formatSeconds(value: number | null | undefined): string {
  if (value === null || value === undefined) return "-";
  return `${value.toFixed(2)} s`;
}

export class AnnotatorApp implements ShortcutHandler {
  private readonly api: ApiClient;
  private readonly pollMs: number;
  private choices: ChoiceMap = {};
  private batch: number[] = [];
  private locked = new Set<number>();
  private texts: string[] | null = null;
  private numClasses = 0;
  private allowSkip = false;
  private lastQuery: BatchQuery | null = null;
  private storageKey = "";
  private active = 0;
  private submitting = false;
  private stopped = false;
  private detach: (() => void) | null = null;
  private pollTimer: ReturnType<typeof setTimeout> | null = null;
  private elapsedTimer: ReturnType<typeof setInterval> | null = null;

  constructor(private readonly opts: AppOptions) {
    this.api = new ApiClient(opts.base);
    this.pollMs = opts.pollMs ?? 500;
  }

  async start(): Promise<void> {
    this.detach = attachShortcuts(document, this);
    await this.refresh();
  }

  // Simulates tab close in tests; timers and listeners must not leak.
  stop(): void {
    this.stopped = true;
    if (this.detach) this.detach();
    if (this.pollTimer !== null) clearTimeout(this.pollTimer);
    if (this.elapsedTimer !== null) clearInterval(this.elapsedTimer);
  }

  async refresh(): Promise<void> {
    try {
      const query = await this.api.query(this.opts.sessionId);
      this.show(query);
    } catch (err) {
      this.renderError(err, () => this.refresh());
    }
  }

  private show(query: BatchQuery): void {
    if (this.stopped) return;
    this.lastQuery = query;
    if (query.status === "retraining") {
      this.renderRetraining();
      this.pollTimer = setTimeout(() => void this.refresh(), this.pollMs);
      return;
    }
    if (query.status === "complete") {
      this.renderComplete(query);
      return;
    }
    this.adoptBatch(query);
    this.renderBatch();
  }

  private adoptBatch(query: BatchQuery): void {
    this.batch = query.indices ?? [];
    this.locked = new Set(query.already_received ?? []);
    this.texts = query.texts ?? null;
    this.numClasses = query.num_classes ?? 0;
    this.allowSkip = query.allow_skip ?? false;
    this.storageKey = batchKey(this.opts.sessionId, this.batch);
    this.choices = loadChoices(this.storageKey, this.open());
    this.active = 0;
    this.advanceToUnresolved();
  }

  // Indices the annotator can still act on.
  private open(): number[] {
    return this.batch.filter((index) => !this.locked.has(index));
  }

  private resolved(): boolean {
    return this.open().every((index) => this.choices[index] !== undefined);
  }

  private className(classId: number): string {
    return this.opts.classNames?.[classId] ?? `class ${classId}`;
  }

  // -------------------------------------------------- shortcut handling

  chooseClass(classId: number): void {
    if (classId >= this.numClasses) return;
    const target = this.open()[this.active];
    if (target === undefined) return;
    this.applyChoice(target, classId);
  }

  chooseSkip(): void {
    if (!this.allowSkip) return;
    const target = this.open()[this.active];
    if (target === undefined) return;
    this.applyChoice(target, "skip");
  }

  moveActive(delta: number): void {
    const count = this.open().length;
    if (count === 0) return;
    this.active = Math.min(Math.max(this.active + delta, 0), count - 1);
    this.renderBatch();
  }

  applyChoice(index: number, choice: Choice): void {
    if (this.locked.has(index) || !this.batch.includes(index)) return;
    this.choices[index] = choice;
    saveChoices(this.storageKey, this.choices);
    this.advanceToUnresolved();
    this.renderBatch();
  }

  private advanceToUnresolved(): void {
    const open = this.open();
    for (let i = 0; i < open.length; i++) {
      const position = (this.active + i) % open.length;
      const index = open[position];
      if (index !== undefined && this.choices[index] === undefined) {
        this.active = position;
        return;
      }
    }
  }

  // ------------------------------------------------------------ submit

  async submit(): Promise<void> {
    if (this.submitting || !this.resolved() || this.open().length === 0) {
      return;
    }
    // only indices from the server's own pending batch are submitted
    const payload: ChoiceMap = {};
    for (const index of this.open()) {
      const choice = this.choices[index];
      if (choice !== undefined) payload[index] = choice;
    }
    this.submitting = true;
    this.renderBatch();
    try {
      await this.api.submitLabels(this.opts.sessionId, payload);
      clearChoices(this.storageKey);
      this.submitting = false;
      await this.refresh();
    } catch (err) {
      this.submitting = false;
      this.renderBatch();
      this.renderError(err, () => this.submit());
    }
  }

  // --------------------------------------------------------- rendering

  private clearTimers(): void {
    if (this.elapsedTimer !== null) {
      clearInterval(this.elapsedTimer);
      this.elapsedTimer = null;
    }
  }

  private header(): HTMLElement {
    const progress = this.lastQuery?.progress;
    const head = el("header", "bar");
    head.appendChild(el("span", "session", `session ${this.opts.sessionId}`));
    if (progress) {
      head.appendChild(
        el(
          "span",
          "progress",
          `${progress.labeled} / ${progress.budget} labels` +
            ` | iteration ${progress.iteration} of ${progress.total_iterations}`,
        ),
      );
    }
    head.appendChild(
      el(
        "span",
        "latency",
        `last retrain + scoring: ${formatSeconds(this.lastQuery?.last_step_seconds)}`,
      ),
    );
    return head;
  }

  private renderBatch(): void {
    this.clearTimers();
    const root = this.opts.root;
    root.textContent = "";
    root.appendChild(this.header());
    if (this.lastQuery?.is_seed_batch) {
      root.appendChild(
        el("p", "note", "seed batch: label these to start the session"),
      );
    }

    const list = el("main", "cards");
    const open = this.open();
    this.batch.forEach((index, position) => {
      list.appendChild(this.card(index, position, open));
    });
    root.appendChild(list);

    const footer = el("footer", "bar");
    const submit = el("button", "submit", this.submitting ? "submitting..." : "submit batch");
    submit.disabled = this.submitting || !this.resolved() || open.length === 0;
    submit.addEventListener("click", () => void this.submit());
    footer.appendChild(submit);
    footer.appendChild(
      el("span", "hint", `keys: 1-${Math.min(this.numClasses, 9)} label, arrows move` +
        (this.allowSkip ? ", s skip" : "")),
    );
    root.appendChild(footer);
  }

  private card(index: number, position: number, open: number[]): HTMLElement {
    const card = el("article", "card");
    card.dataset.index = String(index);
    const isLocked = this.locked.has(index);
    if (isLocked) card.classList.add("locked");
    if (open[this.active] === index) card.classList.add("active");

    const title = this.texts
      ? this.texts[position] ?? `document ${index}`
      : `document ${index}`;
    card.appendChild(el("p", "text", title));
    card.appendChild(el("span", "doc-id", `#${index}`));

    if (isLocked) {
      card.appendChild(el("span", "done", "already labeled"));
      return card;
    }

    const row = el("div", "choices");
    for (let c = 0; c < this.numClasses; c++) {
      const button = el("button", "choice", this.className(c));
      if (c < 9) button.appendChild(el("kbd", undefined, String(c + 1)));
      if (this.choices[index] === c) button.classList.add("selected");
      button.addEventListener("click", () => {
        this.active = open.indexOf(index);
        this.applyChoice(index, c);
      });
      row.appendChild(button);
    }
    if (this.allowSkip) {
      const skip = el("button", "choice skip", "skip");
      if (this.choices[index] === "skip") skip.classList.add("selected");
      skip.addEventListener("click", () => {
        this.active = open.indexOf(index);
        this.applyChoice(index, "skip");
      });
      row.appendChild(skip);
    }
    card.appendChild(row);
    return card;
  }

  private renderRetraining(): void {
    this.clearTimers();
    const root = this.opts.root;
    root.textContent = "";
    root.appendChild(this.header());
    const box = el("main", "waiting");
    box.appendChild(el("div", "spinner"));
    box.appendChild(el("p", undefined, "retraining and scoring the pool"));
    const elapsed = el("p", "elapsed", "0 s elapsed");
    box.appendChild(elapsed);
    const startedAt = Date.now();
    this.elapsedTimer = setInterval(() => {
      elapsed.textContent = `${Math.round((Date.now() - startedAt) / 1000)} s elapsed`;
    }, 1000);
    root.appendChild(box);
  }

  private renderComplete(query: BatchQuery): void {
    this.clearTimers();
    const root = this.opts.root;
    root.textContent = "";
    root.appendChild(this.header());
    const box = el("main", "complete");
    box.appendChild(el("h2", undefined, "session complete"));
    box.appendChild(
      el("p", undefined, `${query.labeled_total ?? 0} documents labeled`),
    );
    if (query.final_accuracy !== null && query.final_accuracy !== undefined) {
      box.appendChild(
        el("p", "accuracy", `final accuracy ${(query.final_accuracy * 100).toFixed(1)}%`),
      );
    }
    const link = el("a", "export", "download run record");
    link.href = this.api.exportUrl(this.opts.sessionId);
    box.appendChild(link);
    root.appendChild(box);
  }

  private renderError(err: unknown, retry: () => void | Promise<void>): void {
    const root = this.opts.root;
    const previous = root.querySelector(".error-banner");
    if (previous) previous.remove();

    const banner = el("div", "error-banner");
    const message =
      err instanceof ApiError
        ? `server rejected the request: ${err.message}`
        : "network problem: the server could not be reached";
    banner.appendChild(el("span", undefined, message));
    const button = el("button", "retry", "retry");
    button.addEventListener("click", () => {
      banner.remove();
      void retry();
    });
    banner.appendChild(button);
    root.prepend(banner);
  }
}
