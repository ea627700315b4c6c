export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function button(label: string, onClick: () => void): HTMLButtonElement {
  const b = el("button", { type: "button" }, label);
  b.addEventListener("click", onClick);
  return b;
}
