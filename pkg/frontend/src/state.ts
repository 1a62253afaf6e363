/** Mix draft state: per-input values, dirty flags, and soft range checks.
 *
 * Values start at the schema's observed means. Range violations never block
 * editing (the service is lenient too); they surface as warnings so the
 * designer knows the prediction extrapolates beyond the compiled data.
 */

import type { ColumnSpec, SchemaResponse } from "./api.js";

export interface FieldState {
  spec: ColumnSpec;
  value: number;
  dirty: boolean;
}

export interface FieldWarning {
  column: string;
  value: number;
  observed_min: number;
  observed_max: number;
  message: string;
}

export class MixDraft {
  private readonly fields = new Map<string, FieldState>();

  constructor(schema: SchemaResponse) {
    for (const col of schema.columns) {
      if (col.kind !== "input") continue;
      const fallback = (col.observed_min + col.observed_max) / 2;
      this.fields.set(col.name, {
        spec: col,
        value: col.observed_mean ?? fallback,
        dirty: false,
      });
    }
  }

  names(): string[] {
    return [...this.fields.keys()];
  }

  field(name: string): FieldState {
    const state = this.fields.get(name);
    if (!state) {
      throw new Error(`unknown input field: ${name}`);
    }
    return state;
  }

  set(name: string, value: number): FieldState {
    const state = this.field(name);
    if (!Number.isFinite(value)) {
      throw new Error(`${name}: value must be a finite number`);
    }
    state.value = value;
    state.dirty = value !== (state.spec.observed_mean ?? value);
    return state;
  }

  reset(name?: string): void {
    const targets = name ? [this.field(name)] : [...this.fields.values()];
    for (const state of targets) {
      state.value = state.spec.observed_mean ?? (state.spec.observed_min + state.spec.observed_max) / 2;
      state.dirty = false;
    }
  }

  values(): Record<string, number> {
    const out: Record<string, number> = {};
    for (const [name, state] of this.fields) {
      out[name] = state.value;
    }
    return out;
  }

  /** Soft validation: out-of-range fields warn, they never block. */
  warnings(): FieldWarning[] {
    const out: FieldWarning[] = [];
    for (const [name, state] of this.fields) {
      const { observed_min, observed_max } = state.spec;
      if (state.value < observed_min || state.value > observed_max) {
        out.push({
          column: name,
          value: state.value,
          observed_min,
          observed_max,
          message: `${name} = ${state.value} is outside the observed range [${observed_min}, ${observed_max}]`,
        });
      }
    }
    return out;
  }
}
