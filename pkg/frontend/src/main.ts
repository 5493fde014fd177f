// DOM wiring for the explorer. The reducer owns all state transitions;
// this file only renders (manifest, state) and translates UI events into
// actions. Adjacent slices are prefetched fire-and-forget.

import {ExplorerManifest, findCase, loadManifest} from './manifest';
import {Action, ExplorerState, PLANE_ORDER, initialState, reduce, sliceCount, sliceUrl} from './state';

const TASKS = ['acl', 'meniscus', 'abnormal'];

let manifest: ExplorerManifest | null = null;
let state: ExplorerState | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function dispatch(action: Action): void {
  if (!manifest || !state) return;
  state = reduce(manifest, state, action);
  render();
}

function prefetch(offset: number): void {
  if (!manifest || !state) return;
  const count = sliceCount(manifest, state);
  const index = state.sliceIndex + offset;
  if (index < 0 || index >= count) return;
  const img = new Image();
  img.src = sliceUrl(manifest, {...state, sliceIndex: index});
}

function badge(text: string, cls: string): string {
  return `<span class="badge ${cls}">${text}</span>`;
}

function render(): void {
  if (!manifest) return;
  if (!state) {
    el('viewer').hidden = true;
    el('empty').hidden = false;
    return;
  }
  el('viewer').hidden = false;
  el('empty').hidden = true;
  const entry = findCase(manifest, state.caseId)!;

  const picker = el<HTMLSelectElement>('case-picker');
  if (picker.value !== state.caseId) picker.value = state.caseId;

  for (const plane of PLANE_ORDER) {
    const tab = document.getElementById(`plane-${plane}`);
    if (tab) tab.classList.toggle('active', plane === state.plane);
  }

  const count = sliceCount(manifest, state);
  const slider = el<HTMLInputElement>('slice-slider');
  slider.max = String(count - 1);
  slider.value = String(state.sliceIndex);
  el('slice-label').textContent = `slice ${state.sliceIndex + 1} / ${count}`;

  const img = el<HTMLImageElement>('slice-image');
  img.src = sliceUrl(manifest, state);
  img.style.transform = `scale(${state.zoom})`;

  const parts: string[] = [];
  for (const task of TASKS) {
    if (entry.labels && task in entry.labels) {
      const value = entry.labels[task];
      parts.push(badge(`${task}: ${value}`, value ? 'positive' : 'negative'));
    }
    if (entry.predictions && task in entry.predictions) {
      parts.push(badge(`p(${task}) = ${entry.predictions[task].toFixed(3)}`, 'prediction'));
    }
  }
  el('badges').innerHTML = parts.join(' ');

  prefetch(1);
  prefetch(-1);
}

function showError(message: string): void {
  const banner = el('error-banner');
  banner.textContent = message;
  banner.hidden = false;
}

function bindEvents(): void {
  el<HTMLSelectElement>('case-picker').addEventListener('change', (e) => {
    dispatch({type: 'set_case', caseId: (e.target as HTMLSelectElement).value});
  });
  for (const plane of PLANE_ORDER) {
    const tab = document.getElementById(`plane-${plane}`);
    if (tab) tab.addEventListener('click', () => dispatch({type: 'set_plane', plane}));
  }
  el<HTMLInputElement>('slice-slider').addEventListener('input', (e) => {
    dispatch({type: 'set_index', index: Number((e.target as HTMLInputElement).value)});
  });
  document.addEventListener('keydown', (e) => {
    if (e.key === 'ArrowRight' || e.key === 'ArrowUp') {
      e.preventDefault();
      dispatch({type: 'next_slice'});
    } else if (e.key === 'ArrowLeft' || e.key === 'ArrowDown') {
      e.preventDefault();
      dispatch({type: 'prev_slice'});
    } else if (e.key === 'Tab' && manifest && state) {
      e.preventDefault();
      const entry = findCase(manifest, state.caseId)!;
      const planes = PLANE_ORDER.filter((p) => p in entry.planes);
      const next = planes[(planes.indexOf(state.plane) + 1) % planes.length];
      dispatch({type: 'set_plane', plane: next});
    } else if (e.key === '+') {
      dispatch({type: 'set_zoom', zoom: (state?.zoom ?? 1) * 1.25});
    } else if (e.key === '-') {
      dispatch({type: 'set_zoom', zoom: (state?.zoom ?? 1) / 1.25});
    }
  });
}

async function start(): Promise<void> {
  bindEvents();
  try {
    manifest = await loadManifest('manifest.json');
  } catch (e) {
    showError(`Could not load the bundle manifest: ${e}`);
    return;
  }
  const picker = el<HTMLSelectElement>('case-picker');
  picker.innerHTML = manifest.cases
      .map((c) => `<option value="${c.id}">${c.id}</option>`)
      .join('');
  state = initialState(manifest);
  render();
}

document.addEventListener('DOMContentLoaded', () => {
  void start();
});
