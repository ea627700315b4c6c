/** Config editor. Loads the stored document, lets the training knobs be
 * edited, and writes the whole document back so fields this UI does not know
 * about survive the round trip. */

import type { ApiClient, ConfigDoc } from "../api.js";
import { button, el } from "../dom.js";
import type { UiSessionState } from "../state.js";

const EDITABLE = [
  ["learningRate", "Learning rate"],
  ["batchSize", "Batch size"],
  ["targetEpochs", "Target epochs"],
  ["validationImages", "Validation images"],
] as const;

export interface ConfigView {
  el: HTMLElement;
  load(): Promise<void>;
  save(): Promise<void>;
  setField(name: string, value: string): void;
  fieldValue(name: string): string;
}

export function createConfigView(api: ApiClient, state: UiSessionState): ConfigView {
  const root = el("section", { id: "config", class: "panel" });
  root.appendChild(el("h2", {}, "Config"));

  const summary = el("p", { class: "config-summary" }, "");
  root.appendChild(summary);
  const form = el("div", { class: "config-form" });
  root.appendChild(form);
  const inputs = new Map<string, HTMLInputElement>();
  for (const [name, labelText] of EDITABLE) {
    const label = el("label", {}, `${labelText} `);
    const input = el("input", { type: "number", step: "any", "data-field": name });
    inputs.set(name, input);
    label.appendChild(input);
    form.appendChild(label);
  }
  const augment = el("input", { type: "checkbox", "data-field": "useAugmentation" });
  const augmentLabel = el("label", {}, "Augmentation ");
  augmentLabel.appendChild(augment);
  form.appendChild(augmentLabel);

  const controls = el("div", {});
  controls.appendChild(button("Load", () => void load()));
  controls.appendChild(button("Save", () => void save()));
  root.appendChild(controls);
  const noteEl = el("p", { class: "config-note" }, "");
  root.appendChild(noteEl);

  function show(doc: ConfigDoc): void {
    state.configDoc = doc;
    summary.textContent =
      `v${doc.version}, input ${doc.inputSize}, ` +
      `${doc.numClasses} classes: ${doc.classLabels.join(", ")}`;
    for (const [name, input] of inputs) input.value = String(doc[name]);
    augment.checked = doc.useAugmentation;
  }

  async function load(): Promise<void> {
    show(await api.getConfig());
  }

  async function save(): Promise<void> {
    const base = state.configDoc;
    if (!base) throw new Error("load a config before saving");
    const doc: ConfigDoc = {
      ...base,
      learningRate: Number(inputs.get("learningRate")!.value),
      batchSize: Number(inputs.get("batchSize")!.value),
      targetEpochs: Number(inputs.get("targetEpochs")!.value),
      validationImages: Number(inputs.get("validationImages")!.value),
      useAugmentation: augment.checked,
    };
    try {
      show(await api.putConfig(doc));
      noteEl.textContent = "saved";
    } catch (err) {
      noteEl.textContent = `rejected: ${err instanceof Error ? err.message : err}`;
    }
  }

  return {
    el: root,
    load,
    save,
    setField(name, value) {
      const input = inputs.get(name);
      if (!input) throw new Error(`no editable field ${name}`);
      input.value = value;
    },
    fieldValue(name) {
      return inputs.get(name)?.value ?? "";
    },
  };
}
