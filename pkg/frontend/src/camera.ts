// Pinhole camera (world-to-camera rows: right, down, forward) plus the
// orbit parameterization the UI drives. Matches the exporter's camera JSON.

export interface Camera {
    rotation: Float64Array;    // 9, row-major world-to-camera
    translation: Float64Array; // 3
    fx: number;
    fy: number;
    cx: number;
    cy: number;
    width: number;
    height: number;
    near: number;
}

export interface CameraJson {
    rotation: number[];
    translation: number[];
    fx: number;
    fy: number;
    cx: number;
    cy: number;
    width: number;
    height: number;
    near?: number;
}

export function cameraFromJson(d: CameraJson): Camera {
    return {
        rotation: Float64Array.from(d.rotation),
        translation: Float64Array.from(d.translation),
        fx: d.fx, fy: d.fy, cx: d.cx, cy: d.cy,
        width: d.width, height: d.height, near: d.near ?? 0.1,
    };
}

export function cameraCenter(cam: Camera): [number, number, number] {
    // C = -R^T t
    const r = cam.rotation, t = cam.translation;
    return [
        -(r[0] * t[0] + r[3] * t[1] + r[6] * t[2]),
        -(r[1] * t[0] + r[4] * t[1] + r[7] * t[2]),
        -(r[2] * t[0] + r[5] * t[1] + r[8] * t[2]),
    ];
}

function cross(a: number[], b: number[]): number[] {
    return [a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]];
}

function normalize(v: number[]): number[] {
    const n = Math.hypot(v[0], v[1], v[2]);
    return [v[0] / n, v[1] / n, v[2] / n];
}

export function lookAt(eye: number[], target: number[], up: number[],
                       fx: number, width: number, height: number,
                       near = 0.1): Camera {
    const fwd = normalize([target[0] - eye[0], target[1] - eye[1],
                           target[2] - eye[2]]);
    const right = normalize(cross(fwd, up));
    const down = cross(fwd, right);
    const rotation = Float64Array.from([...right, ...down, ...fwd]);
    const translation = new Float64Array(3);
    for (let r = 0; r < 3; r++) {
        translation[r] = -(rotation[3 * r] * eye[0]
                           + rotation[3 * r + 1] * eye[1]
                           + rotation[3 * r + 2] * eye[2]);
    }
    return {
        rotation, translation, fx, fy: fx,
        cx: width / 2, cy: height / 2, width, height, near,
    };
}

export interface OrbitState {
    target: [number, number, number];
    radius: number;
    theta: number;   // azimuth, radians
    phi: number;     // elevation, radians
    fov: number;     // vertical, radians
}

export function defaultOrbit(): OrbitState {
    return { target: [0, 0, 0], radius: 3.0, theta: -Math.PI / 2,
             phi: 0.25, fov: 0.8 };
}

export function orbitCamera(o: OrbitState, width: number,
                            height: number): Camera {
    const phi = Math.max(-1.45, Math.min(1.45, o.phi));
    const eye = [
        o.target[0] + o.radius * Math.cos(phi) * Math.cos(o.theta),
        o.target[1] + o.radius * Math.cos(phi) * Math.sin(o.theta),
        o.target[2] + o.radius * Math.sin(phi),
    ];
    const fy = 0.5 * height / Math.tan(o.fov / 2);
    const cam = lookAt(eye, [...o.target], [0, 0, 1], fy, width, height);
    return { ...cam, fy, fx: fy };
}
