// Per-splat color: diffuse plus the sum of spherical-Gaussian lobes
// a * exp(s * (mu . v - 1)), evaluated once per splat along the
// camera-to-center direction and clamped at zero.

import { ViewerScene } from "./format.js";

export function splatColor(scene: ViewerScene, i: number,
                           view: [number, number, number],
                           out: Float64Array): void {
    out[0] = scene.diffuse[3 * i];
    out[1] = scene.diffuse[3 * i + 1];
    out[2] = scene.diffuse[3 * i + 2];
    for (let j = scene.lobeOffsets[i]; j < scene.lobeOffsets[i + 1]; j++) {
        const dot = scene.lobeAxes[3 * j] * view[0]
            + scene.lobeAxes[3 * j + 1] * view[1]
            + scene.lobeAxes[3 * j + 2] * view[2];
        const e = Math.exp(scene.lobeSharpness[j] * (dot - 1));
        out[0] += scene.lobeAmps[3 * j] * e;
        out[1] += scene.lobeAmps[3 * j + 1] * e;
        out[2] += scene.lobeAmps[3 * j + 2] * e;
    }
    out[0] = Math.max(out[0], 0);
    out[1] = Math.max(out[1], 0);
    out[2] = Math.max(out[2], 0);
}
