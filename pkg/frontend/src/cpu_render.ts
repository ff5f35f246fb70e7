// Reference CPU rasterizer. Mirrors the exporter's renderer: EWA
// projection with a +0.3 px^2 low-pass floor, per-splat color along the
// camera-to-center direction, global front-to-back blending with the
// 0.99 alpha clamp and the 1e-4 transmittance cutoff. The WebGL path
// draws the same math back to front with premultiplied alpha; this
// version exists for exact comparisons against exporter output.

import { Camera, cameraCenter } from "./camera.js";
import { ViewerScene } from "./format.js";
import { splatColor } from "./sgcolor.js";
import { frontToBack } from "./sort.js";

export const ALPHA_MAX = 0.99;
export const T_CUTOFF = 1e-4;
export const LOWPASS = 0.3;

interface Projected {
    index: number;
    mx: number;
    my: number;
    c00: number;
    c01: number;
    c11: number;
    color: Float64Array;
    opacity: number;
}

function quatToRot(w: number, x: number, y: number, z: number): number[] {
    return [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ];
}

function projectOne(scene: ViewerScene, i: number, cam: Camera,
                    center: [number, number, number]): Projected | null {
    const r = cam.rotation, t = cam.translation;
    const px = scene.positions[3 * i];
    const py = scene.positions[3 * i + 1];
    const pz = scene.positions[3 * i + 2];
    const cx = r[0] * px + r[1] * py + r[2] * pz + t[0];
    const cy = r[3] * px + r[4] * py + r[5] * pz + t[1];
    const cz = r[6] * px + r[7] * py + r[8] * pz + t[2];
    if (cz <= cam.near) return null;

    let qw = scene.quats[4 * i], qx = scene.quats[4 * i + 1];
    let qy = scene.quats[4 * i + 2], qz = scene.quats[4 * i + 3];
    const qn = Math.hypot(qw, qx, qy, qz);
    qw /= qn; qx /= qn; qy /= qn; qz /= qn;
    const R = quatToRot(qw, qx, qy, qz);
    const s0 = scene.scales[3 * i] ** 2;
    const s1 = scene.scales[3 * i + 1] ** 2;
    const s2 = scene.scales[3 * i + 2] ** 2;
    // Sigma = R diag(s^2) R^T
    const S = new Array<number>(9);
    for (let a = 0; a < 3; a++) {
        for (let b = 0; b < 3; b++) {
            S[3 * a + b] = R[3 * a] * s0 * R[3 * b]
                + R[3 * a + 1] * s1 * R[3 * b + 1]
                + R[3 * a + 2] * s2 * R[3 * b + 2];
        }
    }
    // M = J W, J rows: [fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]
    const j00 = cam.fx / cz, j02 = -cam.fx * cx / (cz * cz);
    const j11 = cam.fy / cz, j12 = -cam.fy * cy / (cz * cz);
    const m = new Array<number>(6);
    for (let col = 0; col < 3; col++) {
        m[col] = j00 * r[col] + j02 * r[6 + col];
        m[3 + col] = j11 * r[3 + col] + j12 * r[6 + col];
    }
    let c00 = 0, c01 = 0, c11 = 0;
    for (let k = 0; k < 3; k++) {
        c00 += m[k] * (S[3 * k] * m[0] + S[3 * k + 1] * m[1] + S[3 * k + 2] * m[2]);
        c01 += m[k] * (S[3 * k] * m[3] + S[3 * k + 1] * m[4] + S[3 * k + 2] * m[5]);
        c11 += m[3 + k] * (S[3 * k] * m[3] + S[3 * k + 1] * m[4] + S[3 * k + 2] * m[5]);
    }
    c00 += LOWPASS;
    c11 += LOWPASS;
    const det = c00 * c11 - c01 * c01;
    const i00 = c11 / det, i01 = -c01 / det, i11 = c00 / det;

    const vx0 = px - center[0], vy0 = py - center[1], vz0 = pz - center[2];
    const vn = Math.hypot(vx0, vy0, vz0);
    const color = new Float64Array(3);
    splatColor(scene, i, [vx0 / vn, vy0 / vn, vz0 / vn], color);

    return {
        index: i,
        mx: cam.fx * cx / cz + cam.cx,
        my: cam.fy * cy / cz + cam.cy,
        c00: i00, c01: i01, c11: i11,
        color, opacity: scene.opacities[i],
    };
}

export function renderCpu(scene: ViewerScene, cam: Camera,
                          background: [number, number, number] = [0, 0, 0]
                          ): Float64Array {
    const W = cam.width, H = cam.height;
    const img = new Float64Array(W * H * 3);
    const center = cameraCenter(cam);
    const order = frontToBack(scene, cam);
    const splats: Projected[] = [];
    for (const i of order) {
        const p = projectOne(scene, i, cam, center);
        if (p !== null) splats.push(p);
    }
    for (let row = 0; row < H; row++) {
        const pyc = row + 0.5;
        for (let col = 0; col < W; col++) {
            const pxc = col + 0.5;
            let T = 1.0;
            let r = 0, g = 0, b = 0;
            for (const s of splats) {
                const dx = pxc - s.mx;
                const dy = pyc - s.my;
                const q = s.c00 * dx * dx + 2 * s.c01 * dx * dy
                    + s.c11 * dy * dy;
                const alpha = Math.min(s.opacity * Math.exp(-0.5 * q),
                                       ALPHA_MAX);
                const tAfter = T * (1 - alpha);
                if (tAfter < T_CUTOFF) break;
                const w = alpha * T;
                r += w * s.color[0];
                g += w * s.color[1];
                b += w * s.color[2];
                T = tAfter;
            }
            const at = 3 * (row * W + col);
            img[at] = r + T * background[0];
            img[at + 1] = g + T * background[1];
            img[at + 2] = b + T * background[2];
        }
    }
    return img;
}
