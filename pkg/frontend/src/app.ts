/**
 * Annotation UI for triage sessions.
 *
 * Single-module app: a typed client for the JSON API, pure helpers for
 * tag toggling and report formatting (unit tested), and a small DOM layer
 * with keyboard-driven review (digits toggle tags, Enter submits, n/p
 * navigate). The DOM layer only runs when mounted into a real document.
 */

export interface SessionSummary {
  session_id: string;
  focal_class: string;
  kind: string;
  taxonomy: string[];
  population_size: number;
  annotated: number;
  total: number;
}

export interface ItemView {
  id: string;
  text: string;
  gold: number;
  score: number;
  annotated: boolean;
  tags: string[] | null;
}

export interface ItemsPage {
  offset: number;
  total: number;
  items: ItemView[];
}

export interface AnnotationResult {
  ok: boolean;
  annotated: number;
  total: number;
  tags: string[];
}

export interface FrequencyReport {
  kind: string;
  annotated_count: number;
  undoubtful_count: number;
  raw: Record<string, number>;
  undoubtful: Record<string, number>;
}

export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed wrapper over the serving API. */
export class TriageClient {
  constructor(
    private readonly base = "",
    private readonly fetchImpl: FetchLike = (...a) => fetch(...a),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    const body = await resp.json();
    if (!resp.ok) {
      throw new ApiError(
        body.code ?? "unknown_error",
        body.message ?? resp.statusText,
        resp.status,
      );
    }
    return body as T;
  }

  getSession(): Promise<SessionSummary> {
    return this.request("/api/session");
  }

  getItems(offset = 0, limit = 50): Promise<ItemsPage> {
    return this.request(`/api/items?offset=${offset}&limit=${limit}`);
  }

  annotate(itemId: string, tags: string[]): Promise<AnnotationResult> {
    return this.request(`/api/items/${encodeURIComponent(itemId)}/annotation`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ tags }),
    });
  }

  getReport(): Promise<FrequencyReport> {
    return this.request("/api/report");
  }
}

/** Toggle membership of a tag, keeping the list sorted and duplicate free. */
export function toggleTag(tags: readonly string[], tag: string): string[] {
  const set = new Set(tags);
  if (set.has(tag)) {
    set.delete(tag);
  } else {
    set.add(tag);
  }
  return [...set].sort();
}

/** Map a digit key (1..9) to a taxonomy tag, or null when out of range. */
export function shortcutTag(
  taxonomy: readonly string[],
  digit: number,
): string | null {
  if (digit < 1 || digit > 9 || digit > taxonomy.length) return null;
  return taxonomy[digit - 1];
}

/** Clamp navigation so n/p never leave the loaded item range. */
export function nextIndex(current: number, delta: number, total: number): number {
  if (total <= 0) return 0;
  return Math.min(total - 1, Math.max(0, current + delta));
}

/** Render the frequency report as aligned text lines, rates descending. */
export function formatReportLines(report: FrequencyReport): string[] {
  const lines = [
    `${report.kind} report: ${report.annotated_count} annotated, ` +
      `${report.undoubtful_count} undoubtful`,
  ];
  const tags = Object.keys(report.raw).sort(
    (a, b) => report.raw[b] - report.raw[a] || a.localeCompare(b),
  );
  for (const tag of tags) {
    const raw = report.raw[tag].toFixed(1);
    const und =
      tag in report.undoubtful ? report.undoubtful[tag].toFixed(1) : "-";
    lines.push(`${tag}  raw ${raw}%  undoubtful ${und}%`);
  }
  return lines;
}

interface AppState {
  summary: SessionSummary;
  items: ItemView[];
  cursor: number;
  draft: string[];
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

export async function mount(root: HTMLElement, client: TriageClient): Promise<void> {
  const summary = await client.getSession();
  const page = await client.getItems(0, summary.total || 50);
  const state: AppState = {
    summary,
    items: page.items,
    cursor: 0,
    draft: page.items[0]?.tags ?? [],
  };

  const header = el("header");
  const list = el("ul", "item-list");
  const detail = el("section", "detail");
  const reportPane = el("pre", "report");
  const reportBtn = el("button", "", "refresh report");
  reportBtn.addEventListener("click", () => refreshReport());
  root.replaceChildren(header, list, detail, reportBtn, reportPane);

  function currentItem(): ItemView | undefined {
    return state.items[state.cursor];
  }

  function select(index: number): void {
    state.cursor = nextIndex(index, 0, state.items.length);
    state.draft = currentItem()?.tags ?? [];
    render();
  }

  function render(): void {
    header.textContent =
      `${state.summary.kind} on "${state.summary.focal_class}" - ` +
      `${state.summary.annotated}/${state.summary.total} annotated`;
    list.replaceChildren(
      ...state.items.map((item, i) => {
        const row = el(
          "li",
          i === state.cursor ? "selected" : "",
          `${item.annotated ? "[x]" : "[ ]"} ${item.id}`,
        );
        row.addEventListener("click", () => select(i));
        return row;
      }),
    );
    const item = currentItem();
    detail.replaceChildren();
    if (!item) return;
    detail.append(
      el("p", "text", item.text),
      el("p", "score", `score ${item.score.toFixed(3)}`),
    );
    state.summary.taxonomy.forEach((tag, i) => {
      const label = el("label");
      const box = el("input") as HTMLInputElement;
      box.type = "checkbox";
      box.checked = state.draft.includes(tag);
      box.addEventListener("change", () => {
        state.draft = toggleTag(state.draft, tag);
        render();
      });
      label.append(box, ` ${i + 1}. ${tag}`);
      detail.append(label);
    });
  }

  async function submit(): Promise<void> {
    const item = currentItem();
    if (!item) return;
    const result = await client.annotate(item.id, state.draft);
    item.annotated = true;
    item.tags = result.tags;
    state.summary.annotated = result.annotated;
    select(state.cursor + 1);
  }

  async function refreshReport(): Promise<void> {
    try {
      const report = await client.getReport();
      reportPane.textContent = formatReportLines(report).join("\n");
    } catch (err) {
      reportPane.textContent =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    }
  }

  document.addEventListener("keydown", (ev) => {
    if (ev.target instanceof HTMLInputElement && ev.target.type === "text") return;
    if (ev.key >= "1" && ev.key <= "9") {
      const tag = shortcutTag(state.summary.taxonomy, Number(ev.key));
      if (tag) {
        state.draft = toggleTag(state.draft, tag);
        render();
      }
    } else if (ev.key === "Enter") {
      void submit();
    } else if (ev.key === "n") {
      select(state.cursor + 1);
    } else if (ev.key === "p") {
      select(state.cursor - 1);
    }
  });

  render();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void mount(document.getElementById("app") as HTMLElement, new TriageClient());
}
