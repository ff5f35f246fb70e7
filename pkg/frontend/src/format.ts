// Compact scene decoding. Layout (little-endian):
//   "MEGS2\0" | version u16 | count u32
//   per primitive: 14 f32 (pos3 quat4 scale3 opacity diffuse3),
//                  lobe count u8, then 7 f32 per lobe (axis3 sharp amp3)

export const MAGIC = "MEGS2\0";
export const FORMAT_VERSION = 1;

export class FormatError extends Error {}

export interface ViewerScene {
    count: number;
    lobeCount: number;
    positions: Float32Array;   // 3N
    quats: Float32Array;       // 4N
    scales: Float32Array;      // 3N
    opacities: Float32Array;   // N
    diffuse: Float32Array;     // 3N
    lobeOffsets: Uint32Array;  // N+1, monotone
    lobeAxes: Float32Array;    // 3L, normalized
    lobeSharpness: Float32Array; // L
    lobeAmps: Float32Array;    // 3L
}

export function decodeCompact(bytes: Uint8Array): ViewerScene {
    const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
    if (bytes.length < MAGIC.length + 6) {
        throw new FormatError("file too short for a header");
    }
    for (let i = 0; i < MAGIC.length; i++) {
        if (bytes[i] !== MAGIC.charCodeAt(i)) {
            throw new FormatError("bad magic: not a compact splat file");
        }
    }
    const version = view.getUint16(6, true);
    if (version !== FORMAT_VERSION) {
        throw new FormatError(`unsupported format version ${version}`);
    }
    const count = view.getUint32(8, true);

    const positions = new Float32Array(3 * count);
    const quats = new Float32Array(4 * count);
    const scales = new Float32Array(3 * count);
    const opacities = new Float32Array(count);
    const diffuse = new Float32Array(3 * count);
    const lobeOffsets = new Uint32Array(count + 1);

    // first pass bounds-checks while collecting scalar fields; lobe payload
    // is sliced in a second pass once total lobe count is known
    let offset = 12;
    const lobeStarts: number[] = [];
    for (let i = 0; i < count; i++) {
        if (offset + 14 * 4 + 1 > bytes.length) {
            throw new FormatError(`truncated at primitive ${i}`);
        }
        for (let k = 0; k < 3; k++) positions[3 * i + k] = view.getFloat32(offset + 4 * k, true);
        for (let k = 0; k < 4; k++) quats[4 * i + k] = view.getFloat32(offset + 4 * (3 + k), true);
        for (let k = 0; k < 3; k++) scales[3 * i + k] = view.getFloat32(offset + 4 * (7 + k), true);
        opacities[i] = view.getFloat32(offset + 4 * 10, true);
        for (let k = 0; k < 3; k++) diffuse[3 * i + k] = view.getFloat32(offset + 4 * (11 + k), true);
        offset += 14 * 4;
        const nLobes = bytes[offset];
        offset += 1;
        if (offset + nLobes * 7 * 4 > bytes.length) {
            throw new FormatError(`truncated lobe data at primitive ${i}`);
        }
        lobeStarts.push(offset);
        lobeOffsets[i + 1] = lobeOffsets[i] + nLobes;
        offset += nLobes * 7 * 4;
    }
    if (offset !== bytes.length) {
        throw new FormatError(`${bytes.length - offset} trailing bytes`);
    }

    const total = lobeOffsets[count];
    const lobeAxes = new Float32Array(3 * total);
    const lobeSharpness = new Float32Array(total);
    const lobeAmps = new Float32Array(3 * total);
    for (let i = 0; i < count; i++) {
        let at = lobeStarts[i];
        for (let j = lobeOffsets[i]; j < lobeOffsets[i + 1]; j++) {
            let ax = view.getFloat32(at, true);
            let ay = view.getFloat32(at + 4, true);
            let az = view.getFloat32(at + 8, true);
            // files store unit axes; renormalize only off-contract data so
            // well-formed values keep their exact 32-bit representation
            const norm = Math.hypot(ax, ay, az);
            if (norm > 0 && Math.abs(norm - 1) > 1e-6) {
                ax /= norm; ay /= norm; az /= norm;
            } else if (norm === 0) {
                az = 1;
            }
            lobeAxes[3 * j] = ax;
            lobeAxes[3 * j + 1] = ay;
            lobeAxes[3 * j + 2] = az;
            lobeSharpness[j] = view.getFloat32(at + 12, true);
            lobeAmps[3 * j] = view.getFloat32(at + 16, true);
            lobeAmps[3 * j + 1] = view.getFloat32(at + 20, true);
            lobeAmps[3 * j + 2] = view.getFloat32(at + 24, true);
            at += 28;
        }
    }
    return {
        count, lobeCount: total, positions, quats, scales, opacities,
        diffuse, lobeOffsets, lobeAxes, lobeSharpness, lobeAmps,
    };
}
