/**
 * Orbit camera and projection math for the strand viewer.
 *
 * Hand-rolled perspective projection: geometry fidelity, not shading, is
 * what the viewer exists for, so plain projected line segments suffice.
 */

export type Vec3 = [number, number, number];

export interface OrbitState {
  azimuth: number; // radians around +y
  elevation: number; // radians above the horizontal plane
  distance: number;
  target: Vec3;
}

export const DEFAULT_ORBIT: OrbitState = {
  azimuth: 0,
  elevation: 0.15,
  distance: 2.6,
  target: [0, 0.6, 0],
};

export function cameraPosition(orbit: OrbitState): Vec3 {
  const ce = Math.cos(orbit.elevation);
  return [
    orbit.target[0] + orbit.distance * ce * Math.sin(orbit.azimuth),
    orbit.target[1] + orbit.distance * Math.sin(orbit.elevation),
    orbit.target[2] + orbit.distance * ce * Math.cos(orbit.azimuth),
  ];
}

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}

export interface Projected {
  x: number;
  y: number;
  depth: number;
  visible: boolean;
}

/** Project a world point to pixel coordinates on a size x size viewport. */
export function project(
  point: Vec3,
  orbit: OrbitState,
  size: number,
  fov = Math.PI / 5
): Projected {
  const eye = cameraPosition(orbit);
  const forward = normalize(sub(orbit.target, eye));
  const right = normalize(cross(forward, [0, 1, 0]));
  const up = cross(right, forward);
  const rel = sub(point, eye);
  const depth = dot(rel, forward);
  if (depth <= 1e-6) {
    return { x: 0, y: 0, depth, visible: false };
  }
  const fx = dot(rel, right) / depth;
  const fy = dot(rel, up) / depth;
  const scale = size / (2 * Math.tan(fov / 2));
  return {
    x: size / 2 + fx * scale,
    y: size / 2 - fy * scale,
    depth,
    visible: true,
  };
}

/** Apply a drag delta (pixels) to the orbit angles. */
export function applyDrag(orbit: OrbitState, dx: number, dy: number): OrbitState {
  const maxEl = Math.PI / 2 - 0.05;
  return {
    ...orbit,
    azimuth: orbit.azimuth - dx * 0.01,
    elevation: Math.min(maxEl, Math.max(-maxEl, orbit.elevation + dy * 0.01)),
  };
}

export function applyZoom(orbit: OrbitState, deltaY: number): OrbitState {
  const factor = Math.exp(deltaY * 0.001);
  return { ...orbit, distance: Math.min(20, Math.max(0.3, orbit.distance * factor)) };
}
