// Entry forms are generated from archetype definitions fetched at runtime.
// A definition's field list maps 1:1 onto form widgets: quantity -> number
// input, text -> text input, coded -> select. The client never hard-codes a
// form; whatever the registry serves is what gets rendered.

import { attr, escapeHtml, flag } from './html.js';
import type {
  ArchetypeDefinition,
  ArchetypeField,
  EntryFieldValue,
  FieldRange,
} from './types.js';

export type WidgetType = 'number' | 'text' | 'select';

export interface FormField {
  name: string;
  widget: WidgetType;
  required: boolean;
  range?: FieldRange;
  unit?: string;
  options?: string[];
}

export interface FormModel {
  archetypeId: string;
  kind: string;
  fields: FormField[];
}

const WIDGET_BY_VALUE_TYPE: Record<ArchetypeField['value_type'], WidgetType> = {
  quantity: 'number',
  text: 'text',
  coded: 'select',
};

/** Derive the form for one archetype: same fields, same order, nothing added. */
export function formModelFromDefinition(definition: ArchetypeDefinition): FormModel {
  return {
    archetypeId: definition.archetype_id,
    kind: definition.kind,
    fields: definition.fields.map((field) => {
      const formField: FormField = {
        name: field.name,
        widget: WIDGET_BY_VALUE_TYPE[field.value_type],
        required: field.required,
      };
      if (field.range !== undefined) formField.range = field.range;
      if (field.unit !== undefined) formField.unit = field.unit;
      if (field.allowed_values !== undefined) formField.options = [...field.allowed_values];
      return formField;
    }),
  };
}

/** Render one form: a labelled widget per field, in definition order. */
export function renderEntryForm(model: FormModel): string {
  const rows = model.fields.map((field) => renderField(field)).join('');
  return (
    `<form class="entry-form"${attr('data-archetype', model.archetypeId)}` +
    `${attr('data-kind', model.kind)}>${rows}` +
    '<button type="submit">Save entry</button></form>'
  );
}

function renderField(field: FormField): string {
  const label = `<label${attr('for', field.name)}>${escapeHtml(field.name)}</label>`;
  let widget: string;
  if (field.widget === 'select') {
    const options = (field.options ?? [])
      .map((code) => `<option${attr('value', code)}>${escapeHtml(code)}</option>`)
      .join('');
    const placeholder = '<option value="" disabled selected>choose…</option>';
    widget =
      `<select${attr('id', field.name)}${attr('name', field.name)}` +
      `${flag('required', field.required)}>${placeholder}${options}</select>`;
  } else if (field.widget === 'number') {
    widget =
      `<input type="number"${attr('id', field.name)}${attr('name', field.name)}` +
      `${attr('min', field.range?.lo)}${attr('max', field.range?.hi)}` +
      ' step="any"' +
      `${attr('data-unit', field.unit)}${flag('required', field.required)}>` +
      (field.unit !== undefined ? `<span class="unit">${escapeHtml(field.unit)}</span>` : '');
  } else {
    widget =
      `<input type="text"${attr('id', field.name)}${attr('name', field.name)}` +
      `${flag('required', field.required)}>`;
  }
  return `<div class="field"${attr('data-field', field.name)}>${label}${widget}</div>`;
}

export interface FormViolation {
  field: string;
  kind: 'missing_field' | 'unknown_field' | 'type_mismatch' | 'range_exceeded' | 'value_not_allowed';
  message: string;
}

/**
 * Pre-flight the user's raw input against the same rules the server enforces.
 * This is a courtesy check for immediate feedback — the server remains the
 * authority and re-validates every submission. Unit mismatches cannot arise
 * here because the form pins each quantity's unit to the definition's.
 */
export function validateFormValues(
  model: FormModel,
  values: Record<string, string>,
): FormViolation[] {
  const violations: FormViolation[] = [];
  const known = new Map(model.fields.map((field) => [field.name, field]));

  for (const name of Object.keys(values)) {
    if (!known.has(name)) {
      violations.push({
        field: name,
        kind: 'unknown_field',
        message: `${name} is not part of this archetype`,
      });
    }
  }

  for (const field of model.fields) {
    const raw = values[field.name];
    const blank = raw === undefined || raw.trim() === '';
    if (blank) {
      if (field.required) {
        violations.push({
          field: field.name,
          kind: 'missing_field',
          message: `${field.name} is required`,
        });
      }
      continue;
    }
    if (field.widget === 'number') {
      const magnitude = Number(raw);
      if (!Number.isFinite(magnitude)) {
        violations.push({
          field: field.name,
          kind: 'type_mismatch',
          message: `${field.name} must be a number`,
        });
        continue;
      }
      if (field.range !== undefined) {
        const lo = Number(field.range.lo);
        const hi = Number(field.range.hi);
        if (magnitude < lo || magnitude > hi) {
          violations.push({
            field: field.name,
            kind: 'range_exceeded',
            message: `${field.name} must lie in ${field.range.lo}..${field.range.hi}`,
          });
        }
      }
    } else if (field.widget === 'select') {
      if (!(field.options ?? []).includes(raw)) {
        violations.push({
          field: field.name,
          kind: 'value_not_allowed',
          message: `${field.name} must be one of: ${(field.options ?? []).join(', ')}`,
        });
      }
    }
  }
  return violations;
}

/**
 * Convert validated form input into the wire encoding the entries endpoint
 * expects. Blank optional fields are omitted rather than sent empty.
 */
export function toEntryFields(
  model: FormModel,
  values: Record<string, string>,
): Record<string, EntryFieldValue> {
  const fields: Record<string, EntryFieldValue> = {};
  for (const field of model.fields) {
    const raw = values[field.name];
    if (raw === undefined || raw.trim() === '') continue;
    if (field.widget === 'number') {
      fields[field.name] = {
        type: 'quantity',
        magnitude: raw.trim(),
        unit: field.unit ?? '',
      };
    } else if (field.widget === 'select') {
      fields[field.name] = { type: 'coded', code: raw };
    } else {
      fields[field.name] = { type: 'text', value: raw };
    }
  }
  return fields;
}
