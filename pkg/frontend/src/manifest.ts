// Bundle manifest model: the JSON written next to the exported PNG tree.

export interface PlaneInfo {
  count: number;
  files: string[];
}

export interface CaseEntry {
  id: string;
  planes: Record<string, PlaneInfo>;
  labels?: Record<string, number>;
  predictions?: Record<string, number>;
}

export interface ExplorerManifest {
  cases: CaseEntry[];
}

export class ManifestError extends Error {}

function fail(path: string, message: string): never {
  throw new ManifestError(`${path}: ${message}`);
}

function checkPlane(path: string, value: unknown): PlaneInfo {
  if (typeof value !== 'object' || value === null) fail(path, 'must be an object');
  const plane = value as Record<string, unknown>;
  if (typeof plane.count !== 'number' || !Number.isInteger(plane.count) || plane.count < 1) {
    fail(`${path}.count`, 'must be a positive integer');
  }
  if (!Array.isArray(plane.files) || plane.files.length !== plane.count) {
    fail(`${path}.files`, 'must list exactly `count` slice paths');
  }
  for (const f of plane.files) {
    if (typeof f !== 'string' || f.length === 0) fail(`${path}.files`, 'paths must be strings');
  }
  return {count: plane.count, files: plane.files as string[]};
}

function checkScores(path: string, value: unknown): Record<string, number> {
  if (typeof value !== 'object' || value === null) fail(path, 'must be an object');
  const out: Record<string, number> = {};
  for (const [task, v] of Object.entries(value as Record<string, unknown>)) {
    if (typeof v !== 'number' || !Number.isFinite(v)) fail(`${path}.${task}`, 'must be a number');
    out[task] = v;
  }
  return out;
}

export function validateManifest(doc: unknown): ExplorerManifest {
  if (typeof doc !== 'object' || doc === null) fail('manifest', 'must be a JSON object');
  const root = doc as Record<string, unknown>;
  if (!Array.isArray(root.cases)) fail('manifest.cases', 'must be an array');
  const cases: CaseEntry[] = [];
  const seen = new Set<string>();
  root.cases.forEach((raw, i) => {
    const path = `cases[${i}]`;
    if (typeof raw !== 'object' || raw === null) fail(path, 'must be an object');
    const entry = raw as Record<string, unknown>;
    if (typeof entry.id !== 'string' || entry.id.length === 0) fail(`${path}.id`, 'must be a string');
    if (seen.has(entry.id)) fail(`${path}.id`, `duplicate case id ${entry.id}`);
    seen.add(entry.id);
    if (typeof entry.planes !== 'object' || entry.planes === null) {
      fail(`${path}.planes`, 'must be an object');
    }
    const planes: Record<string, PlaneInfo> = {};
    for (const [plane, info] of Object.entries(entry.planes as Record<string, unknown>)) {
      planes[plane] = checkPlane(`${path}.planes.${plane}`, info);
    }
    if (Object.keys(planes).length === 0) fail(`${path}.planes`, 'needs at least one plane');
    const out: CaseEntry = {id: entry.id, planes};
    if (entry.labels !== undefined) out.labels = checkScores(`${path}.labels`, entry.labels);
    if (entry.predictions !== undefined) {
      out.predictions = checkScores(`${path}.predictions`, entry.predictions);
    }
    cases.push(out);
  });
  return {cases};
}

export async function loadManifest(url: string): Promise<ExplorerManifest> {
  const response = await fetch(url);
  if (!response.ok) {
    throw new ManifestError(`fetching ${url} failed: HTTP ${response.status}`);
  }
  let doc: unknown;
  try {
    doc = await response.json();
  } catch (e) {
    throw new ManifestError(`manifest is not valid JSON: ${e}`);
  }
  return validateManifest(doc);
}

export function findCase(manifest: ExplorerManifest, caseId: string): CaseEntry | undefined {
  return manifest.cases.find((c) => c.id === caseId);
}
