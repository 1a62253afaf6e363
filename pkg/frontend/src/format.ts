/** Display formatting helpers. */

export function formatValue(value: number, digits = 2): string {
  if (!Number.isFinite(value)) return "–";
  const abs = Math.abs(value);
  if (abs !== 0 && (abs >= 1e6 || abs < 1e-3)) {
    return value.toExponential(digits);
  }
  return value.toFixed(digits);
}

export function formatDelta(delta: number | null, digits = 2): string {
  if (delta === null || !Number.isFinite(delta)) return "";
  const sign = delta > 0 ? "+" : "";
  return sign + formatValue(delta, digits);
}

export function formatRange(min: number, max: number): string {
  return `${trimZeros(min)} – ${trimZeros(max)}`;
}

function trimZeros(v: number): string {
  return String(Number(v.toPrecision(6)));
}
