// Pure UI state machine: slider clamping, the busy flag, the operation
// counter (successful generates only) and the satisfy lock live here so the
// behavior is testable without a DOM.

import type { RetouchResponse, Scores } from "./api.js";

export const ATTRIBUTE_LABELS = [
  "colorfulness",
  "contrast",
  "color temperature",
  "brightness",
] as const;

export const NORMAL_BOUND = 1;
export const EXTENDED_BOUND = 3;
export const SLIDER_STEP = 0.1;

export interface UiState {
  sliders: [number, number, number, number];
  extended: boolean;
  busy: boolean;
  locked: boolean;
  operations: number;
  sessionId: string | null;
  lastSeed: number | null;
  resultImage: string | null; // base64 PNG of the last generate
  scores: Scores | null;
  error: string | null;
}

export function initialState(): UiState {
  return {
    sliders: [0, 0, 0, 0],
    extended: false,
    busy: false,
    locked: false,
    operations: 0,
    sessionId: null,
    lastSeed: null,
    resultImage: null,
    scores: null,
    error: null,
  };
}

export function sliderBound(state: UiState): number {
  return state.extended ? EXTENDED_BOUND : NORMAL_BOUND;
}

function clamp(v: number, bound: number): number {
  return Math.min(bound, Math.max(-bound, v));
}

export function setSlider(state: UiState, index: number, value: number): UiState {
  if (index < 0 || index > 3 || !Number.isFinite(value)) return state;
  const sliders = [...state.sliders] as UiState["sliders"];
  sliders[index] = clamp(value, sliderBound(state));
  return { ...state, sliders };
}

export function setExtended(state: UiState, on: boolean): UiState {
  const next = { ...state, extended: on };
  const bound = sliderBound(next);
  next.sliders = state.sliders.map((v) => clamp(v, bound)) as UiState["sliders"];
  return next;
}

export function canGenerate(state: UiState): boolean {
  return !state.busy && !state.locked;
}

export function generateStart(state: UiState): UiState {
  if (!canGenerate(state)) return state;
  return { ...state, busy: true, error: null };
}

export function generateSuccess(state: UiState, resp: RetouchResponse): UiState {
  return {
    ...state,
    busy: false,
    operations: state.operations + 1,
    sessionId: resp.session,
    lastSeed: resp.seed,
    resultImage: resp.image_b64,
    scores: resp.scores,
    error: null,
  };
}

export function generateFailure(state: UiState, message: string): UiState {
  // the counter only moves on success
  return { ...state, busy: false, error: message };
}

export function satisfy(state: UiState): UiState {
  return { ...state, locked: true };
}

export function requestPayload(
  state: UiState,
  imageB64: string,
  steps: number,
  seed?: number
) {
  return {
    image_b64: imageB64,
    c: [...state.sliders],
    steps,
    extended: state.extended,
    ...(seed !== undefined ? { seed } : {}),
    ...(state.sessionId ? { session: state.sessionId } : {}),
  };
}
