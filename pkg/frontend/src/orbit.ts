/** Orbit camera math: drag deltas to spherical coordinates. */

import type { CameraSpec, OrbitCamera } from "./api.js";

export interface OrbitState {
  azimuth: number;
  elevation: number;
  distance: number;
}

export const DEFAULT_ORBIT: OrbitState = {
  azimuth: -90,
  elevation: 10,
  distance: 0.5,
};

const ELEVATION_LIMIT = 85;
const MIN_DISTANCE = 0.15;
const MAX_DISTANCE = 2.0;

export function orbitDrag(state: OrbitState, dxPixels: number,
                          dyPixels: number,
                          degreesPerPixel = 0.4): OrbitState {
  let azimuth = (state.azimuth - dxPixels * degreesPerPixel) % 360;
  if (azimuth < -180) azimuth += 360;
  if (azimuth > 180) azimuth -= 360;
  const elevation = clamp(state.elevation + dyPixels * degreesPerPixel,
                          -ELEVATION_LIMIT, ELEVATION_LIMIT);
  return { ...state, azimuth, elevation };
}

export function orbitZoom(state: OrbitState, factor: number): OrbitState {
  if (factor <= 0) {
    throw new Error("zoom factor must be positive");
  }
  return {
    ...state,
    distance: clamp(state.distance * factor, MIN_DISTANCE, MAX_DISTANCE),
  };
}

export function toCameraSpec(state: OrbitState): CameraSpec {
  const orbit: OrbitCamera = {
    azimuth: round4(state.azimuth),
    elevation: round4(state.elevation),
    distance: round4(state.distance),
  };
  return { orbit };
}

/** Project world points with a minimal look-at camera for the polyline
 *  preview canvas. Returns [x, y] in unit viewport coordinates. */
export function previewProject(state: OrbitState, center: number[],
                               point: number[]): [number, number] {
  const a = (state.azimuth * Math.PI) / 180;
  const e = (state.elevation * Math.PI) / 180;
  const eye = [
    center[0] + state.distance * Math.cos(e) * Math.cos(a),
    center[1] + state.distance * Math.cos(e) * Math.sin(a),
    center[2] + state.distance * Math.sin(e),
  ];
  const fwd = normalize([center[0] - eye[0], center[1] - eye[1],
                         center[2] - eye[2]]);
  let right = cross(fwd, [0, 0, 1]);
  const nr = Math.hypot(right[0], right[1], right[2]);
  right = nr < 1e-9 ? [1, 0, 0] : right.map((v) => v / nr);
  const down = cross(fwd, right);
  const rel = [point[0] - eye[0], point[1] - eye[1], point[2] - eye[2]];
  const z = dot(rel, fwd);
  const zSafe = Math.max(z, 1e-4);
  const scale = 1.8; // matches the rig focal scale
  return [
    0.5 + (scale * dot(rel, right)) / zSafe,
    0.5 + (scale * dot(rel, down)) / zSafe,
  ];
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}

function round4(v: number): number {
  return Math.round(v * 1e4) / 1e4;
}

function cross(a: number[], b: number[]): number[] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function dot(a: number[], b: number[]): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function normalize(a: number[]): number[] {
  const n = Math.hypot(a[0], a[1], a[2]);
  return a.map((v) => v / n);
}
