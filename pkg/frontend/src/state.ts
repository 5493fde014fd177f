// Explorer state and its reducer. Every action is total: indices clamp at
// the bounds, plane changes clamp the slice index into the new plane's
// range, and case changes reset to the axial plane at slice 0. Rendering
// is a pure function of (manifest, state), so the slice image URL never
// depends on how the state was reached.

import {CaseEntry, ExplorerManifest, findCase} from './manifest';

export const PLANE_ORDER = ['axial', 'coronal', 'sagittal'];

export interface ExplorerState {
  caseId: string;
  plane: string;
  sliceIndex: number;
  zoom: number;
}

export type Action =
  | {type: 'next_slice'}
  | {type: 'prev_slice'}
  | {type: 'set_plane'; plane: string}
  | {type: 'set_case'; caseId: string}
  | {type: 'set_index'; index: number}
  | {type: 'set_zoom'; zoom: number};

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(Math.max(value, lo), hi);
}

function defaultPlane(entry: CaseEntry): string {
  for (const plane of PLANE_ORDER) {
    if (plane in entry.planes) return plane;
  }
  return Object.keys(entry.planes)[0];
}

function currentCase(manifest: ExplorerManifest, state: ExplorerState): CaseEntry {
  const entry = findCase(manifest, state.caseId);
  if (entry === undefined) throw new Error(`state points at unknown case ${state.caseId}`);
  return entry;
}

export function sliceCount(manifest: ExplorerManifest, state: ExplorerState): number {
  return currentCase(manifest, state).planes[state.plane].count;
}

export function initialState(manifest: ExplorerManifest): ExplorerState | null {
  if (manifest.cases.length === 0) return null;
  const first = manifest.cases[0];
  return {caseId: first.id, plane: defaultPlane(first), sliceIndex: 0, zoom: 1};
}

export function reduce(manifest: ExplorerManifest, state: ExplorerState,
                       action: Action): ExplorerState {
  const entry = currentCase(manifest, state);
  switch (action.type) {
    case 'next_slice': {
      const last = entry.planes[state.plane].count - 1;
      return {...state, sliceIndex: clamp(state.sliceIndex + 1, 0, last)};
    }
    case 'prev_slice': {
      const last = entry.planes[state.plane].count - 1;
      return {...state, sliceIndex: clamp(state.sliceIndex - 1, 0, last)};
    }
    case 'set_index': {
      const last = entry.planes[state.plane].count - 1;
      return {...state, sliceIndex: clamp(Math.trunc(action.index), 0, last)};
    }
    case 'set_plane': {
      if (!(action.plane in entry.planes)) return state;
      const last = entry.planes[action.plane].count - 1;
      return {...state, plane: action.plane,
              sliceIndex: clamp(state.sliceIndex, 0, last)};
    }
    case 'set_case': {
      const next = findCase(manifest, action.caseId);
      if (next === undefined) return state;
      return {...state, caseId: next.id, plane: defaultPlane(next), sliceIndex: 0};
    }
    case 'set_zoom':
      return {...state, zoom: clamp(action.zoom, 0.25, 8)};
  }
}

export function sliceUrl(manifest: ExplorerManifest, state: ExplorerState): string {
  return currentCase(manifest, state).planes[state.plane].files[state.sliceIndex];
}

export function checkInvariants(manifest: ExplorerManifest, state: ExplorerState): void {
  const entry = findCase(manifest, state.caseId);
  if (entry === undefined) throw new Error(`unknown case ${state.caseId}`);
  if (!(state.plane in entry.planes)) {
    throw new Error(`plane ${state.plane} not in case ${state.caseId}`);
  }
  const count = entry.planes[state.plane].count;
  if (!Number.isInteger(state.sliceIndex) || state.sliceIndex < 0
      || state.sliceIndex >= count) {
    throw new Error(`slice index ${state.sliceIndex} outside [0, ${count - 1}]`);
  }
}
