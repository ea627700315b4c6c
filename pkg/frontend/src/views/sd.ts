/** SD browser: list, navigate, preview JPEGs, delete. Listings are cached in
 * the session state by path. */

import type { ApiClient, SdEntry } from "../api.js";
import { button, el } from "../dom.js";
import type { UiSessionState } from "../state.js";

function joinPath(dir: string, name: string): string {
  return dir === "/" ? `/${name}` : `${dir}/${name}`;
}

function parentOf(path: string): string {
  if (path === "/") return "/";
  const cut = path.lastIndexOf("/");
  return cut <= 0 ? "/" : path.slice(0, cut);
}

export interface SdView {
  el: HTMLElement;
  open(path: string): Promise<void>;
  currentPath(): string;
  entries(): SdEntry[];
}

export function createSdView(api: ApiClient, state: UiSessionState): SdView {
  const root = el("section", { id: "sd", class: "panel" });
  root.appendChild(el("h2", {}, "SD card"));

  const pathInput = el("input", { type: "text", value: "/", class: "sd-path" });
  const bar = el("div", {});
  bar.appendChild(pathInput);
  bar.appendChild(button("Go", () => void open(pathInput.value || "/")));
  bar.appendChild(button("Up", () => void open(parentOf(pathInput.value || "/"))));
  root.appendChild(bar);

  const errorEl = el("p", { class: "sd-error", hidden: "" });
  root.appendChild(errorEl);
  const listEl = el("table", { class: "sd-list" });
  root.appendChild(listEl);
  const previewImg = el("img", { class: "sd-preview", alt: "file preview", hidden: "" });
  root.appendChild(previewImg);

  let current = "/";
  let shown: SdEntry[] = [];

  async function preview(path: string): Promise<void> {
    const bytes = await api.sdReadFile(path);
    // object URLs need a real browser; degrade to just fetching elsewhere
    if (typeof URL.createObjectURL === "function") {
      previewImg.src = URL.createObjectURL(new Blob([bytes as BlobPart], { type: "image/jpeg" }));
      previewImg.removeAttribute("hidden");
    }
  }

  function renderRows(): void {
    listEl.textContent = "";
    for (const entry of shown) {
      const tr = el("tr", { "data-name": entry.name });
      tr.appendChild(el("td", {}, entry.isDir ? "D" : "F"));
      const nameCell = el("td", {}, "");
      if (entry.isDir) {
        const link = button(entry.name, () => void open(joinPath(current, entry.name)));
        link.setAttribute("class", "sd-dir");
        nameCell.appendChild(link);
      } else {
        nameCell.textContent = entry.name;
      }
      tr.appendChild(nameCell);
      tr.appendChild(el("td", {}, entry.isDir ? "" : String(entry.size)));
      const actions = el("td", {});
      if (!entry.isDir && /\.jpe?g$/i.test(entry.name)) {
        actions.appendChild(button("Preview", () => void preview(joinPath(current, entry.name))));
      }
      actions.appendChild(
        button("Delete", () => void remove(entry)),
      );
      tr.appendChild(actions);
      listEl.appendChild(tr);
    }
  }

  async function remove(entry: SdEntry): Promise<void> {
    const path = joinPath(current, entry.name);
    if (entry.isDir) await api.sdDeleteDir(path);
    else await api.sdDeleteFile(path);
    await open(current);
  }

  async function open(path: string): Promise<void> {
    try {
      const listing = await api.sdList(path);
      current = listing.path;
      shown = listing.entries;
      state.sdTree[current] = listing.entries;
      pathInput.value = current;
      errorEl.setAttribute("hidden", "");
      renderRows();
    } catch (err) {
      errorEl.textContent = String(err instanceof Error ? err.message : err);
      errorEl.removeAttribute("hidden");
    }
  }

  return {
    el: root,
    open,
    currentPath: () => current,
    entries: () => [...shown],
  };
}
