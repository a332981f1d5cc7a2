// Tiny string-template helpers for the render functions. Everything that
// reaches markup goes through escapeHtml so server data can never inject tags.

const REPLACEMENTS: Record<string, string> = {
  '&': '&amp;',
  '<': '&lt;',
  '>': '&gt;',
  '"': '&quot;',
  "'": '&#39;',
};

export function escapeHtml(raw: string): string {
  return raw.replace(/[&<>"']/g, (ch) => REPLACEMENTS[ch] ?? ch);
}

/** Render an attribute assignment, or an empty string when value is undefined. */
export function attr(name: string, value: string | undefined): string {
  return value === undefined ? '' : ` ${name}="${escapeHtml(value)}"`;
}

/** Render a boolean attribute ('required', 'selected', ...) when set. */
export function flag(name: string, on: boolean): string {
  return on ? ` ${name}` : '';
}
