/** Client-side mirror of the server session: the camera orbit plus the
 *  edit overlay. The server is the single source of truth for hair; this
 *  state only tracks what has been requested. */

import type { WindParams } from "./api.js";
import { DEFAULT_ORBIT, OrbitState } from "./orbit.js";

export interface ViewerState {
  orbit: OrbitState;
  haircut: number;            // 1 = untouched
  wind: WindParams | null;
  latentDim: number;
  latentValue: number;
  selectedUV: [number, number];
  compare: boolean;
  lastRenderMs: number;
}

export function initialState(): ViewerState {
  return {
    orbit: { ...DEFAULT_ORBIT },
    haircut: 1.0,
    wind: null,
    latentDim: 0,
    latentValue: 0,
    selectedUV: [0.5, 0.5],
    compare: false,
    lastRenderMs: 0,
  };
}

export function isIdentityEdit(state: ViewerState): boolean {
  return state.haircut === 1.0 &&
    (state.wind === null || state.wind.amplitude === 0);
}

export function setHaircut(state: ViewerState, fraction: number):
    ViewerState {
  if (!(fraction >= 0 && fraction <= 1)) {
    throw new Error(`haircut fraction ${fraction} outside [0, 1]`);
  }
  return { ...state, haircut: fraction };
}

export function setWind(state: ViewerState,
                        wind: WindParams | null): ViewerState {
  if (wind) {
    const n = Math.hypot(...wind.direction);
    if (n < 1e-9) {
      throw new Error("wind direction must be nonzero");
    }
    wind = {
      ...wind,
      direction: wind.direction.map((v) => v / n) as
        [number, number, number],
    };
  }
  return { ...state, wind };
}
