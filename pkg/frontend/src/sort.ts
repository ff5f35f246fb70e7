// View-depth ordering. The GPU path composites back to front with
// premultiplied alpha; the CPU reference walks front to back. Ties keep
// the lower primitive index in both directions.

import { Camera } from "./camera.js";
import { ViewerScene } from "./format.js";

export function viewDepths(scene: ViewerScene, cam: Camera): Float64Array {
    const r = cam.rotation, t = cam.translation;
    const depths = new Float64Array(scene.count);
    for (let i = 0; i < scene.count; i++) {
        const x = scene.positions[3 * i];
        const y = scene.positions[3 * i + 1];
        const z = scene.positions[3 * i + 2];
        depths[i] = r[6] * x + r[7] * y + r[8] * z + t[2];
    }
    return depths;
}

function stableOrder(depths: Float64Array, ascending: boolean): Uint32Array {
    const idx = new Uint32Array(depths.length);
    for (let i = 0; i < idx.length; i++) idx[i] = i;
    const sign = ascending ? 1 : -1;
    // Array.prototype.sort on typed arrays is not guaranteed stable;
    // break ties by index explicitly
    return idx.sort((a, b) => {
        const d = sign * (depths[a] - depths[b]);
        return d !== 0 ? d : a - b;
    });
}

export function frontToBack(scene: ViewerScene, cam: Camera): Uint32Array {
    return stableOrder(viewDepths(scene, cam), true);
}

export function backToFront(scene: ViewerScene, cam: Camera): Uint32Array {
    return stableOrder(viewDepths(scene, cam), false);
}
