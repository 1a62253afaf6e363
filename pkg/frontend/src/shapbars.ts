/** Geometry for per-target attribution bars, framework-free and testable. */

import type { Attribution } from "./api.js";

export interface BarModel {
  feature: string;
  value: number;
  /** Bar length as a percentage of the largest absolute contribution. */
  widthPct: number;
  sign: "pos" | "neg";
}

export function shapBars(attr: Attribution, maxBars = 17): BarModel[] {
  const entries = Object.entries(attr.contributions)
    .map(([feature, value]) => ({ feature, value }))
    .sort((a, b) => Math.abs(b.value) - Math.abs(a.value))
    .slice(0, maxBars);
  const peak = Math.max(...entries.map((e) => Math.abs(e.value)), 0);
  return entries.map((e) => ({
    feature: e.feature,
    value: e.value,
    widthPct: peak > 0 ? (100 * Math.abs(e.value)) / peak : 0,
    sign: e.value >= 0 ? "pos" : "neg",
  }));
}

/** Local-accuracy check at display tolerance: base + sum(contributions)
 * must reproduce the displayed prediction. */
export function localAccuracyGap(attr: Attribution): number {
  let total = attr.base_value;
  for (const v of Object.values(attr.contributions)) {
    total += v;
  }
  return Math.abs(total - attr.prediction);
}

export function checksOut(attr: Attribution, tol = 1e-3): boolean {
  return localAccuracyGap(attr) <= tol;
}
