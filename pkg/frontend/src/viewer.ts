// WebGL2 splat renderer: instanced quads, 2D covariance computed in the
// vertex shader from per-splat 3D covariance, lobes evaluated per splat
// along the camera-to-center direction. Splats are drawn back to front
// with premultiplied alpha, which composites identically to the CPU
// reference's front-to-back walk (up to the alpha clamp and cutoff).

import { Camera, cameraCenter } from "./camera.js";
import { ViewerScene } from "./format.js";
import { backToFront } from "./sort.js";

const MAX_LOBES = 3;
const FLOATS_PER_SPLAT = 3 + 6 + 1 + 3 + MAX_LOBES * 7 + 1;

const VERT = `#version 300 es
precision highp float;
layout(location=0) in vec2 a_corner;
layout(location=1) in vec3 a_center;
layout(location=2) in vec3 a_cov0;   // xx xy xz
layout(location=3) in vec3 a_cov1;   // yy yz zz
layout(location=4) in float a_opacity;
layout(location=5) in vec3 a_diffuse;
layout(location=6) in vec4 a_lobe0;  // axis, sharpness
layout(location=7) in vec3 a_amp0;
layout(location=8) in vec4 a_lobe1;
layout(location=9) in vec3 a_amp1;
layout(location=10) in vec4 a_lobe2;
layout(location=11) in vec3 a_amp2;
layout(location=12) in float a_nlobes;

uniform mat3 u_rot;        // world-to-camera
uniform vec3 u_trans;
uniform vec2 u_focal;
uniform vec2 u_pp;
uniform vec2 u_viewport;
uniform vec3 u_campos;
uniform float u_near;

out vec2 v_local;
out vec3 v_color;
out float v_opacity;

vec3 lobeSum(vec3 dir) {
    vec3 c = a_diffuse;
    if (a_nlobes > 0.5)
        c += a_amp0 * exp(a_lobe0.w * (dot(a_lobe0.xyz, dir) - 1.0));
    if (a_nlobes > 1.5)
        c += a_amp1 * exp(a_lobe1.w * (dot(a_lobe1.xyz, dir) - 1.0));
    if (a_nlobes > 2.5)
        c += a_amp2 * exp(a_lobe2.w * (dot(a_lobe2.xyz, dir) - 1.0));
    return max(c, vec3(0.0));
}

void main() {
    vec3 pc = u_rot * a_center + u_trans;
    if (pc.z <= u_near) {
        gl_Position = vec4(0.0, 0.0, 2.0, 0.0);  // culled
        return;
    }
    mat3 sigma = mat3(
        a_cov0.x, a_cov0.y, a_cov0.z,
        a_cov0.y, a_cov1.x, a_cov1.y,
        a_cov0.z, a_cov1.y, a_cov1.z);
    float z2 = pc.z * pc.z;
    mat3 J = mat3(
        u_focal.x / pc.z, 0.0, 0.0,
        0.0, u_focal.y / pc.z, 0.0,
        -u_focal.x * pc.x / z2, -u_focal.y * pc.y / z2, 0.0);
    mat3 M = J * u_rot;      // column-major: rows of J W
    mat3 cov = M * sigma * transpose(M);
    float c00 = cov[0][0] + 0.3;
    float c11 = cov[1][1] + 0.3;
    float c01 = cov[0][1];

    float mid = 0.5 * (c00 + c11);
    float disc = sqrt(max(mid * mid - (c00 * c11 - c01 * c01), 1e-9));
    float l1 = mid + disc;
    float l2 = max(mid - disc, 1e-9);
    vec2 e1 = normalize(abs(c01) > 1e-9 ? vec2(c01, l1 - c00) : vec2(1.0, 0.0));
    vec2 e2 = vec2(-e1.y, e1.x);
    vec2 mean = vec2(u_focal.x * pc.x / pc.z + u_pp.x,
                     u_focal.y * pc.y / pc.z + u_pp.y);
    vec2 offset = a_corner.x * e1 * 3.0 * sqrt(l1)
                + a_corner.y * e2 * 3.0 * sqrt(l2);
    vec2 pix = mean + offset;
    gl_Position = vec4(2.0 * pix.x / u_viewport.x - 1.0,
                       1.0 - 2.0 * pix.y / u_viewport.y, 0.0, 1.0);
    v_local = a_corner * 3.0;
    v_opacity = a_opacity;
    v_color = lobeSum(normalize(a_center - u_campos));
}
`;

const FRAG = `#version 300 es
precision highp float;
in vec2 v_local;
in vec3 v_color;
in float v_opacity;
out vec4 frag;

void main() {
    float q = dot(v_local, v_local);
    float alpha = min(v_opacity * exp(-0.5 * q), 0.99);
    if (alpha < 1.0 / 255.0) discard;
    frag = vec4(v_color * alpha, alpha);
}
`;

function compile(gl: WebGL2RenderingContext, type: number, src: string) {
    const shader = gl.createShader(type)!;
    gl.shaderSource(shader, src);
    gl.compileShader(shader);
    if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
        throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failed");
    }
    return shader;
}

export class SplatRenderer {
    private gl: WebGL2RenderingContext;
    private program: WebGLProgram;
    private quad: WebGLBuffer;
    private instances: WebGLBuffer;
    private scene: ViewerScene | null = null;
    private packed: Float32Array = new Float32Array(0);
    private sorted: Float32Array = new Float32Array(0);
    private uniforms: Record<string, WebGLUniformLocation> = {};
    background: [number, number, number] = [0, 0, 0];

    constructor(gl: WebGL2RenderingContext) {
        this.gl = gl;
        const program = gl.createProgram()!;
        gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERT));
        gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAG));
        gl.linkProgram(program);
        if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
            throw new Error(gl.getProgramInfoLog(program) ?? "link failed");
        }
        this.program = program;
        for (const name of ["u_rot", "u_trans", "u_focal", "u_pp",
                            "u_viewport", "u_campos", "u_near"]) {
            this.uniforms[name] = gl.getUniformLocation(program, name)!;
        }
        this.quad = gl.createBuffer()!;
        gl.bindBuffer(gl.ARRAY_BUFFER, this.quad);
        gl.bufferData(gl.ARRAY_BUFFER,
                      new Float32Array([-1, -1, 1, -1, -1, 1, 1, 1]),
                      gl.STATIC_DRAW);
        this.instances = gl.createBuffer()!;
        gl.disable(gl.DEPTH_TEST);
        gl.enable(gl.BLEND);
        gl.blendFunc(gl.ONE, gl.ONE_MINUS_SRC_ALPHA);
    }

    setScene(scene: ViewerScene) {
        this.scene = scene;
        this.packed = packSplats(scene);
        this.sorted = new Float32Array(this.packed.length);
    }

    /** Draw one frame; re-sorts and re-uploads for the given camera. */
    draw(cam: Camera) {
        const gl = this.gl;
        gl.viewport(0, 0, cam.width, cam.height);
        const [br, bg, bb] = this.background;
        gl.clearColor(br, bg, bb, 1.0);
        gl.clear(gl.COLOR_BUFFER_BIT);
        if (!this.scene || this.scene.count === 0) return;

        const order = backToFront(this.scene, cam);
        for (let k = 0; k < order.length; k++) {
            this.sorted.set(
                this.packed.subarray(order[k] * FLOATS_PER_SPLAT,
                                     (order[k] + 1) * FLOATS_PER_SPLAT),
                k * FLOATS_PER_SPLAT);
        }

        gl.useProgram(this.program);
        gl.uniformMatrix3fv(this.uniforms.u_rot, true,
                            Float32Array.from(cam.rotation));
        gl.uniform3fv(this.uniforms.u_trans, Float32Array.from(cam.translation));
        gl.uniform2f(this.uniforms.u_focal, cam.fx, cam.fy);
        gl.uniform2f(this.uniforms.u_pp, cam.cx, cam.cy);
        gl.uniform2f(this.uniforms.u_viewport, cam.width, cam.height);
        gl.uniform3fv(this.uniforms.u_campos,
                      Float32Array.from(cameraCenter(cam)));
        gl.uniform1f(this.uniforms.u_near, cam.near);

        gl.bindBuffer(gl.ARRAY_BUFFER, this.quad);
        gl.enableVertexAttribArray(0);
        gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
        gl.vertexAttribDivisor(0, 0);

        gl.bindBuffer(gl.ARRAY_BUFFER, this.instances);
        gl.bufferData(gl.ARRAY_BUFFER, this.sorted, gl.DYNAMIC_DRAW);
        const stride = FLOATS_PER_SPLAT * 4;
        const layout: Array<[number, number, number]> = [
            [1, 3, 0],    // center
            [2, 3, 3],    // cov row 0
            [3, 3, 6],    // cov row 1
            [4, 1, 9],    // opacity
            [5, 3, 10],   // diffuse
            [6, 4, 13], [7, 3, 17],   // lobe 0
            [8, 4, 20], [9, 3, 24],   // lobe 1
            [10, 4, 27], [11, 3, 31], // lobe 2
            [12, 1, 34],  // lobe count
        ];
        for (const [loc, size, at] of layout) {
            gl.enableVertexAttribArray(loc);
            gl.vertexAttribPointer(loc, size, gl.FLOAT, false, stride, at * 4);
            gl.vertexAttribDivisor(loc, 1);
        }
        gl.drawArraysInstanced(gl.TRIANGLE_STRIP, 0, 4, this.scene.count);
    }
}

/** Per-splat instance record: center, 3D covariance, opacity, diffuse,
 *  three padded lobe slots, lobe count. */
export function packSplats(scene: ViewerScene): Float32Array {
    const out = new Float32Array(scene.count * FLOATS_PER_SPLAT);
    for (let i = 0; i < scene.count; i++) {
        const at = i * FLOATS_PER_SPLAT;
        out[at] = scene.positions[3 * i];
        out[at + 1] = scene.positions[3 * i + 1];
        out[at + 2] = scene.positions[3 * i + 2];

        let qw = scene.quats[4 * i], qx = scene.quats[4 * i + 1];
        let qy = scene.quats[4 * i + 2], qz = scene.quats[4 * i + 3];
        const qn = Math.hypot(qw, qx, qy, qz);
        qw /= qn; qx /= qn; qy /= qn; qz /= qn;
        const R = [
            1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy),
            2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx),
            2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy),
        ];
        const s = [scene.scales[3 * i] ** 2, scene.scales[3 * i + 1] ** 2,
                   scene.scales[3 * i + 2] ** 2];
        const cov = (a: number, b: number) =>
            R[3 * a] * s[0] * R[3 * b] + R[3 * a + 1] * s[1] * R[3 * b + 1]
            + R[3 * a + 2] * s[2] * R[3 * b + 2];
        out[at + 3] = cov(0, 0);
        out[at + 4] = cov(0, 1);
        out[at + 5] = cov(0, 2);
        out[at + 6] = cov(1, 1);
        out[at + 7] = cov(1, 2);
        out[at + 8] = cov(2, 2);

        out[at + 9] = scene.opacities[i];
        out[at + 10] = scene.diffuse[3 * i];
        out[at + 11] = scene.diffuse[3 * i + 1];
        out[at + 12] = scene.diffuse[3 * i + 2];

        const start = scene.lobeOffsets[i];
        const n = Math.min(scene.lobeOffsets[i + 1] - start, MAX_LOBES);
        for (let j = 0; j < n; j++) {
            const base = at + 13 + 7 * j;
            out[base] = scene.lobeAxes[3 * (start + j)];
            out[base + 1] = scene.lobeAxes[3 * (start + j) + 1];
            out[base + 2] = scene.lobeAxes[3 * (start + j) + 2];
            out[base + 3] = scene.lobeSharpness[start + j];
            out[base + 4] = scene.lobeAmps[3 * (start + j)];
            out[base + 5] = scene.lobeAmps[3 * (start + j) + 1];
            out[base + 6] = scene.lobeAmps[3 * (start + j) + 2];
        }
        out[at + 34] = n;
    }
    return out;
}
