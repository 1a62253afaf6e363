/** Mix-designer single-page app.
 *
 * Every displayed number comes from a service response: the UI never
 * computes predictions locally. Edits debounce into a predict/explain pair;
 * superseded responses are discarded by sequence number.
 */

import { ApiError, MixforgeClient } from "./api.js";
import type { Attribution, PredictResponse, SchemaResponse } from "./api.js";
import { formatDelta, formatRange, formatValue } from "./format.js";
import { LiveUpdater } from "./live.js";
import {
  Scenario,
  compareScenarios,
  scenariosFromCsv,
  scenariosFromJson,
  scenariosToCsv,
  scenariosToJson,
} from "./scenarios.js";
import { checksOut, shapBars } from "./shapbars.js";
import { MixDraft } from "./state.js";

const SERVICE_URL = (window as { MIXFORGE_SERVICE_URL?: string }).MIXFORGE_SERVICE_URL
  ?? `${location.protocol}//${location.hostname}:8000`;

interface AppState {
  client: MixforgeClient;
  schema: SchemaResponse;
  draft: MixDraft;
  lastPredict: PredictResponse | null;
  lastExplain: Record<string, Attribution> | null;
  scenarios: Scenario[];
  baseline: number;
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

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const client = new MixforgeClient(SERVICE_URL);
  const banner = byId<HTMLDivElement>("banner");
  let schema: SchemaResponse;
  try {
    schema = await client.schema();
  } catch (err) {
    banner.hidden = false;
    banner.textContent = `Cannot reach the prediction service at ${SERVICE_URL} — is "mixforge serve" running? `;
    const retry = el("button", "retry", "Retry");
    retry.addEventListener("click", () => void boot());
    banner.appendChild(retry);
    return;
  }
  banner.hidden = true;

  const state: AppState = {
    client,
    schema,
    draft: new MixDraft(schema),
    lastPredict: null,
    lastExplain: null,
    scenarios: [],
    baseline: 0,
  };

  const updater = new LiveUpdater(async (token) => {
    const values = state.draft.values();
    try {
      const [pred, expl] = await Promise.all([
        state.client.predict(values),
        state.client.explain(values),
      ]);
      if (!updater.gate.isCurrent(token)) return; // superseded edit
      state.lastPredict = pred;
      state.lastExplain = expl.explanations;
      renderReadouts(state);
      renderWarnings(state);
      renderShap(state);
    } catch (err) {
      if (!updater.gate.isCurrent(token)) return;
      if (err instanceof ApiError) {
        const feature = err.feature;
        showFieldError(feature, `${err.message}${feature ? `: ${feature}` : ""}`);
      } else {
        banner.hidden = false;
        banner.textContent = `Service unreachable: ${String(err)}`;
      }
    }
  }, 300);

  renderInputs(state, updater);
  renderScenarioBar(state);
  byId<HTMLButtonElement>("predict-now").addEventListener("click", () => void updater.flush());
  await updater.flush();
}

function renderInputs(state: AppState, updater: LiveUpdater): void {
  const host = byId<HTMLDivElement>("inputs");
  host.textContent = "";
  for (const name of state.draft.names()) {
    const field = state.draft.field(name);
    const spec = field.spec;
    const row = el("div", "field");
    row.dataset.field = name;

    const label = el("label", "field-name", name);
    const unit = el("span", "unit", spec.unit);
    label.appendChild(unit);

    const slider = el("input") as HTMLInputElement;
    slider.type = "range";
    slider.min = String(spec.observed_min);
    slider.max = String(spec.observed_max);
    slider.step = String((spec.observed_max - spec.observed_min) / 200 || 1);
    slider.value = String(field.value);

    const number = el("input") as HTMLInputElement;
    number.type = "number";
    number.value = String(field.value);
    number.step = "any";

    const hint = el("span", "range-hint", formatRange(spec.observed_min, spec.observed_max));
    const badge = el("span", "warn-badge");
    badge.hidden = true;

    const apply = (raw: string) => {
      const value = Number(raw);
      if (!Number.isFinite(value)) return;
      state.draft.set(name, value);
      slider.value = raw;
      number.value = raw;
      const warning = state.draft
        .warnings()
        .find((w) => w.column === name);
      badge.hidden = !warning;
      badge.textContent = warning
        ? `outside ${formatRange(spec.observed_min, spec.observed_max)}`
        : "";
      badge.title = warning?.message ?? "";
      updater.trigger();
    };
    slider.addEventListener("input", () => apply(slider.value));
    number.addEventListener("input", () => apply(number.value));

    row.append(label, slider, number, hint, badge);
    host.appendChild(row);
  }
}

function renderReadouts(state: AppState): void {
  const host = byId<HTMLDivElement>("readouts");
  host.textContent = "";
  if (!state.lastPredict) return;
  for (const target of state.schema.targets) {
    const entry = state.lastPredict.predictions[target];
    if (!entry) continue;
    const card = el("div", "readout");
    card.dataset.target = target;
    card.append(
      el("div", "readout-name", target),
      el("div", "readout-value", formatValue(entry.value)),
      el("div", "readout-unit", entry.unit),
      el("div", "readout-feats", `${entry.features_used.length} features used`),
    );
    host.appendChild(card);
  }
}

function renderWarnings(state: AppState): void {
  const host = byId<HTMLDivElement>("warnings");
  host.textContent = "";
  const warnings = state.lastPredict?.warnings ?? [];
  for (const w of warnings) {
    host.appendChild(el("div", "warning", w.message));
  }
}

function renderShap(state: AppState): void {
  const host = byId<HTMLDivElement>("shap");
  host.textContent = "";
  if (!state.lastExplain || !state.lastPredict) return;
  for (const target of state.schema.targets) {
    const attr = state.lastExplain[target];
    if (!attr) continue;
    const panel = el("div", "shap-panel");
    panel.dataset.target = target;
    const consistent = checksOut(attr, 1e-3);
    panel.appendChild(
      el(
        "div",
        "shap-title",
        `${target} — base ${formatValue(attr.base_value)} → ${formatValue(attr.prediction)}` +
          (consistent ? "" : " (inconsistent!)"),
      ),
    );
    for (const bar of shapBars(attr, 10)) {
      const row = el("div", "shap-row");
      row.appendChild(el("span", "shap-feature", bar.feature));
      const track = el("div", "shap-track");
      const fill = el("div", `shap-fill ${bar.sign}`);
      fill.style.width = `${bar.widthPct}%`;
      track.appendChild(fill);
      row.appendChild(track);
      row.appendChild(el("span", "shap-value", formatDelta(bar.value, 3)));
      panel.appendChild(row);
    }
    host.appendChild(panel);
  }
}

function renderScenarioBar(state: AppState): void {
  const saveButton = byId<HTMLButtonElement>("save-scenario");
  const nameInput = byId<HTMLInputElement>("scenario-name");
  const exportCsv = byId<HTMLButtonElement>("export-csv");
  const exportJson = byId<HTMLButtonElement>("export-json");
  const importInput = byId<HTMLInputElement>("import-file");

  saveButton.addEventListener("click", () => {
    if (!state.lastPredict) return;
    const name = nameInput.value.trim() || `scenario ${state.scenarios.length + 1}`;
    state.scenarios.push({
      name,
      inputs: state.draft.values(),
      predictions: state.lastPredict.predictions,
      explanations: state.lastExplain,
    });
    nameInput.value = "";
    renderCompare(state);
  });

  exportCsv.addEventListener("click", () => {
    if (state.scenarios.length === 0) return;
    download("scenarios.csv", scenariosToCsv(state.scenarios), "text/csv");
  });
  exportJson.addEventListener("click", () => {
    if (state.scenarios.length === 0) return;
    download("scenarios.json", scenariosToJson(state.scenarios), "application/json");
  });
  importInput.addEventListener("change", () => {
    const file = importInput.files?.[0];
    if (!file) return;
    void file.text().then((text) => {
      state.scenarios = file.name.endsWith(".csv")
        ? scenariosFromCsv(text)
        : scenariosFromJson(text);
      state.baseline = 0;
      renderCompare(state);
    });
  });
}

function renderCompare(state: AppState): void {
  const host = byId<HTMLDivElement>("compare");
  host.textContent = "";
  if (state.scenarios.length === 0) return;
  const table = compareScenarios(state.scenarios, state.baseline);
  const dom = el("table", "compare-table");
  const head = el("tr");
  head.appendChild(el("th", "", "field"));
  table.scenarios.forEach((name, i) => {
    const th = el("th", i === table.baseline ? "baseline" : "", name);
    th.addEventListener("click", () => {
      state.baseline = i;
      renderCompare(state);
    });
    head.appendChild(th);
  });
  dom.appendChild(head);
  for (const row of table.rows) {
    const tr = el("tr", row.kind);
    tr.appendChild(el("td", "row-label", row.unit ? `${row.label} (${row.unit})` : row.label));
    row.values.forEach((v, i) => {
      const delta = row.deltas ? row.deltas[i] ?? null : null;
      const text = formatValue(v) + (delta !== null ? ` (${formatDelta(delta)})` : "");
      tr.appendChild(el("td", "", text));
    });
    dom.appendChild(tr);
  }
  host.appendChild(dom);
}

function showFieldError(feature: string | null, message: string): void {
  const host = byId<HTMLDivElement>("warnings");
  host.textContent = "";
  const node = el("div", "warning error", message);
  host.appendChild(node);
  if (feature) {
    const row = document.querySelector<HTMLDivElement>(`[data-field="${feature}"]`);
    row?.classList.add("field-error");
  }
}

function download(filename: string, text: string, mime: string): void {
  const blob = new Blob([text], { type: mime });
  const link = el("a") as HTMLAnchorElement;
  link.href = URL.createObjectURL(blob);
  link.download = filename;
  link.click();
  URL.revokeObjectURL(link.href);
}

if (typeof document !== "undefined" && document.getElementById("app-root")) {
  void boot();
}
