/** Named what-if snapshots and their side-by-side comparison table. */

import type { Attribution, PredictionEntry } from "./api.js";

export interface Scenario {
  name: string;
  inputs: Record<string, number>;
  predictions: Record<string, PredictionEntry>;
  explanations: Record<string, Attribution> | null;
}

export interface CompareRow {
  label: string;
  kind: "input" | "target";
  unit: string;
  values: number[];
  /** Per-scenario delta against the baseline column; null for the baseline itself. */
  deltas: (number | null)[] | null;
}

export interface CompareTable {
  scenarios: string[];
  baseline: number;
  rows: CompareRow[];
}

export function compareScenarios(scenarios: Scenario[], baseline = 0): CompareTable {
  if (scenarios.length === 0) {
    throw new Error("need at least one scenario to compare");
  }
  if (baseline < 0 || baseline >= scenarios.length) {
    throw new Error(`baseline index ${baseline} out of range`);
  }
  const first = scenarios[0]!;
  const inputNames = Object.keys(first.inputs);
  const targetNames = Object.keys(first.predictions);
  const withDeltas = scenarios.length > 1;

  const rows: CompareRow[] = [];
  for (const name of inputNames) {
    const values = scenarios.map((s) => s.inputs[name] ?? NaN);
    rows.push({
      label: name,
      kind: "input",
      unit: "",
      values,
      deltas: withDeltas ? values.map((v, i) => (i === baseline ? null : v - values[baseline]!)) : null,
    });
  }
  for (const name of targetNames) {
    const values = scenarios.map((s) => s.predictions[name]?.value ?? NaN);
    rows.push({
      label: name,
      kind: "target",
      unit: first.predictions[name]?.unit ?? "",
      values,
      deltas: withDeltas ? values.map((v, i) => (i === baseline ? null : v - values[baseline]!)) : null,
    });
  }
  return { scenarios: scenarios.map((s) => s.name), baseline, rows };
}

export function scenariosToJson(scenarios: Scenario[]): string {
  return JSON.stringify({ format: "mixforge-scenarios", version: 1, scenarios }, null, 2);
}

export function scenariosFromJson(text: string): Scenario[] {
  const doc = JSON.parse(text) as { format?: string; version?: number; scenarios?: Scenario[] };
  if (doc.format !== "mixforge-scenarios" || doc.version !== 1 || !Array.isArray(doc.scenarios)) {
    throw new Error("not a mixforge scenario export");
  }
  return doc.scenarios;
}

/** CSV layout: one row per field, one column per scenario; numbers round-trip
 * exactly because JS number-to-string conversion is shortest-repr. */
export function scenariosToCsv(scenarios: Scenario[]): string {
  if (scenarios.length === 0) {
    throw new Error("nothing to export");
  }
  const first = scenarios[0]!;
  const lines: string[] = [];
  lines.push(["field", "kind", "unit", ...scenarios.map((s) => quote(s.name))].join(","));
  for (const name of Object.keys(first.inputs)) {
    lines.push(
      [quote(name), "input", "", ...scenarios.map((s) => String(s.inputs[name] ?? ""))].join(","),
    );
  }
  for (const name of Object.keys(first.predictions)) {
    const unit = first.predictions[name]?.unit ?? "";
    lines.push(
      [
        quote(name),
        "target",
        quote(unit),
        ...scenarios.map((s) => String(s.predictions[name]?.value ?? "")),
      ].join(","),
    );
  }
  return lines.join("\n") + "\n";
}

export function scenariosFromCsv(text: string): Scenario[] {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length < 2) {
    throw new Error("CSV export is empty");
  }
  const header = parseCsvLine(lines[0]!);
  const names = header.slice(3);
  const scenarios: Scenario[] = names.map((name) => ({
    name,
    inputs: {},
    predictions: {},
    explanations: null,
  }));
  for (const line of lines.slice(1)) {
    const cells = parseCsvLine(line);
    const [field, kind, unit] = [cells[0]!, cells[1]!, cells[2] ?? ""];
    cells.slice(3).forEach((cell, i) => {
      const scenario = scenarios[i];
      if (!scenario || cell === "") return;
      const value = Number(cell);
      if (kind === "input") {
        scenario.inputs[field] = value;
      } else {
        scenario.predictions[field] = { value, unit, features_used: [] };
      }
    });
  }
  return scenarios;
}

function quote(cell: string): string {
  if (/[",\n]/.test(cell)) {
    return '"' + cell.replace(/"/g, '""') + '"';
  }
  return cell;
}

function parseCsvLine(line: string): string[] {
  const out: string[] = [];
  let cur = "";
  let inQuotes = false;
  for (let i = 0; i < line.length; i++) {
    const ch = line[i]!;
    if (inQuotes) {
      if (ch === '"') {
        if (line[i + 1] === '"') {
          cur += '"';
          i++;
        } else {
          inQuotes = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch === '"') {
      inQuotes = true;
    } else if (ch === ",") {
      out.push(cur);
      cur = "";
    } else {
      cur += ch;
    }
  }
  out.push(cur);
  return out;
}
