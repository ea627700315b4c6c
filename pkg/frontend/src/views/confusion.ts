/** Confusion matrix: diagonal cells shaded green, off-diagonal red, with a
 * toggle between raw counts and row-normalized percentages. Cell numbers are
 * the API payload verbatim (counts mode) or its row percentages. */

import type { ApiClient, ConfusionPayload } from "../api.js";
import { button, el } from "../dom.js";

export type MatrixMode = "counts" | "percent";

export function rowPercents(row: number[]): number[] {
  const total = row.reduce((a, b) => a + b, 0);
  if (total === 0) return row.map(() => 0);
  return row.map((v) => (v * 100) / total);
}

/** Zero cells stay uncolored, so a perfect matrix colors only its diagonal. */
export function cellColor(value: number, maxValue: number, diagonal: boolean): string {
  if (value === 0 || maxValue === 0) return "transparent";
  const alpha = 0.15 + 0.85 * (value / maxValue);
  const rgb = diagonal ? "22, 163, 74" : "220, 38, 38";
  return `rgba(${rgb}, ${alpha.toFixed(3)})`;
}

export interface ConfusionView {
  el: HTMLElement;
  refresh(): Promise<void>;
  toggleMode(): void;
  render(payload: ConfusionPayload): void;
  mode(): MatrixMode;
  cellText(row: number, col: number): string;
}

export function createConfusionView(api: ApiClient): ConfusionView {
  const root = el("section", { id: "confusion", class: "panel" });
  root.appendChild(el("h2", {}, "Confusion matrix"));
  const controls = el("div", {});
  controls.appendChild(button("Refresh", () => void refresh()));
  const modeButton = button("Show %", toggleMode);
  controls.appendChild(modeButton);
  root.appendChild(controls);
  const totalEl = el("p", { class: "confusion-total" }, "");
  root.appendChild(totalEl);
  const table = el("table", { class: "confusion-table" });
  root.appendChild(table);

  let mode: MatrixMode = "counts";
  let last: ConfusionPayload | null = null;

  function render(payload: ConfusionPayload): void {
    last = payload;
    table.textContent = "";
    const header = el("tr", {});
    header.appendChild(el("th", {}, "actual \\ predicted"));
    for (const label of payload.labels) header.appendChild(el("th", {}, label));
    table.appendChild(header);

    const maxValue = Math.max(...payload.matrix.flat());
    payload.matrix.forEach((row, r) => {
      const tr = el("tr", {});
      tr.appendChild(el("th", {}, payload.labels[r]));
      const percents = rowPercents(row);
      row.forEach((value, c) => {
        const text = mode === "counts" ? String(value) : percents[c].toFixed(1);
        const td = el("td", { "data-row": String(r), "data-col": String(c) }, text);
        td.style.backgroundColor = cellColor(value, maxValue, r === c);
        tr.appendChild(td);
      });
      table.appendChild(tr);
    });
    totalEl.textContent = `${payload.total} images`;
  }

  async function refresh(): Promise<void> {
    render(await api.confusion());
  }

  function toggleMode(): void {
    mode = mode === "counts" ? "percent" : "counts";
    modeButton.textContent = mode === "counts" ? "Show %" : "Show counts";
    if (last) render(last);
  }

  return {
    el: root,
    refresh,
    toggleMode,
    render,
    mode: () => mode,
    cellText(row, col) {
      const td = table.querySelector(`td[data-row="${row}"][data-col="${col}"]`);
      return td?.textContent ?? "";
    },
  };
}
