import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { FormatError, decodeCompact } from "../src/format.js";

const FIXTURES = join(__dirname, "..", "fixtures");

function fixture(name: string): Uint8Array {
    return new Uint8Array(readFileSync(join(FIXTURES, name)));
}

const expected = JSON.parse(
    readFileSync(join(FIXTURES, "expected.json"), "utf-8"));
const stats = JSON.parse(
    readFileSync(join(FIXTURES, "stats.json"), "utf-8"));

interface PrimitiveJson {
    position: number[];
    rotation: number[];
    scale: number[];
    opacity: number;
    diffuse: number[];
    lobes: Array<{ axis: number[]; sharpness: number; amplitude: number[] }>;
}

function checkPrimitive(scene: ReturnType<typeof decodeCompact>,
                        index: number, want: PrimitiveJson) {
    for (let k = 0; k < 3; k++) {
        expect(scene.positions[3 * index + k]).toBe(want.position[k]);
        expect(scene.scales[3 * index + k]).toBe(want.scale[k]);
        expect(scene.diffuse[3 * index + k]).toBe(want.diffuse[k]);
    }
    for (let k = 0; k < 4; k++) {
        expect(scene.quats[4 * index + k]).toBe(want.rotation[k]);
    }
    expect(scene.opacities[index]).toBe(want.opacity);
    const start = scene.lobeOffsets[index];
    expect(scene.lobeOffsets[index + 1] - start).toBe(want.lobes.length);
    want.lobes.forEach((lobe, j) => {
        for (let k = 0; k < 3; k++) {
            expect(scene.lobeAxes[3 * (start + j) + k]).toBe(lobe.axis[k]);
            expect(scene.lobeAmps[3 * (start + j) + k]).toBe(lobe.amplitude[k]);
        }
        expect(scene.lobeSharpness[start + j]).toBe(lobe.sharpness);
    });
}

describe("decodeCompact", () => {
    it("matches the exporter's counts", () => {
        const scene = decodeCompact(fixture("scene.megs2"));
        expect(scene.count).toBe(expected.primitive_count);
        expect(scene.lobeCount).toBe(expected.lobe_count);
        expect(scene.count).toBe(stats.primitive_count);
        expect(scene.lobeCount).toBe(stats.lobe_count);
    });

    it("decodes primitive fields exactly (32-bit values)", () => {
        const scene = decodeCompact(fixture("scene.megs2"));
        checkPrimitive(scene, 0, expected.first_primitive);
        checkPrimitive(scene, 1, expected.second_primitive);
        checkPrimitive(scene, scene.count - 1, expected.last_primitive);
    });

    it("keeps lobe offsets monotone and consistent", () => {
        const scene = decodeCompact(fixture("scene.megs2"));
        expect(scene.lobeOffsets[0]).toBe(0);
        for (let i = 0; i < scene.count; i++) {
            expect(scene.lobeOffsets[i + 1]).toBeGreaterThanOrEqual(
                scene.lobeOffsets[i]);
        }
        expect(scene.lobeOffsets[scene.count]).toBe(scene.lobeCount);
        expect(scene.lobeAxes.length).toBe(3 * scene.lobeCount);
    });

    it("loads the empty scene", () => {
        const scene = decodeCompact(fixture("empty.megs2"));
        expect(scene.count).toBe(0);
        expect(scene.lobeCount).toBe(0);
    });

    it("rejects truncated files without crashing", () => {
        expect(() => decodeCompact(fixture("truncated.megs2")))
            .toThrow(FormatError);
    });

    it("rejects a bad magic", () => {
        const data = fixture("scene.megs2");
        data[0] = 0x58;
        expect(() => decodeCompact(data)).toThrow(/magic/);
    });

    it("rejects an unknown version", () => {
        const data = fixture("scene.megs2");
        data[6] = 9;
        expect(() => decodeCompact(data)).toThrow(/version/);
    });

    it("rejects trailing bytes", () => {
        const data = fixture("scene.megs2");
        const padded = new Uint8Array(data.length + 1);
        padded.set(data);
        expect(() => decodeCompact(padded)).toThrow(/trailing/);
    });
});
