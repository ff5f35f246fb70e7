// Page wiring: canvas, orbit controls, FPS overlay, file-drop and
// ?scene=<url> loading, visible error banner on malformed files.

import { OrbitState, defaultOrbit, orbitCamera } from "./camera.js";
import { FormatError, ViewerScene, decodeCompact } from "./format.js";
import { SplatRenderer } from "./viewer.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const banner = document.getElementById("banner") as HTMLDivElement;
const fpsEl = document.getElementById("fps") as HTMLDivElement;
const hint = document.getElementById("hint") as HTMLDivElement;

const gl = canvas.getContext("webgl2", { premultipliedAlpha: true });
if (!gl) {
    banner.textContent = "WebGL2 is not available in this browser";
    banner.style.display = "block";
    throw new Error("no webgl2");
}
const renderer = new SplatRenderer(gl);
const orbit: OrbitState = defaultOrbit();
let scene: ViewerScene | null = null;

function showError(message: string) {
    banner.textContent = message;
    banner.style.display = "block";
}

function loadBytes(bytes: Uint8Array, label: string) {
    try {
        scene = decodeCompact(bytes);
        renderer.setScene(scene);
        banner.style.display = "none";
        hint.style.display = "none";
        console.log(`${label}: ${scene.count} splats, ${scene.lobeCount} lobes`);
    } catch (err) {
        if (err instanceof FormatError) {
            showError(`could not load ${label}: ${err.message}`);
        } else {
            throw err;
        }
    }
}

// -- input: drag-and-drop and ?scene= query parameter --------------------

window.addEventListener("dragover", (ev) => ev.preventDefault());
window.addEventListener("drop", async (ev) => {
    ev.preventDefault();
    const file = ev.dataTransfer?.files?.[0];
    if (!file) return;
    loadBytes(new Uint8Array(await file.arrayBuffer()), file.name);
});

const sceneUrl = new URLSearchParams(location.search).get("scene");
if (sceneUrl) {
    fetch(sceneUrl)
        .then(async (resp) => {
            if (!resp.ok) throw new FormatError(`HTTP ${resp.status}`);
            loadBytes(new Uint8Array(await resp.arrayBuffer()), sceneUrl);
        })
        .catch((err) => showError(`could not fetch ${sceneUrl}: ${err}`));
}

// -- orbit / pan / zoom ---------------------------------------------------

let dragging = false;
let panning = false;
let lastX = 0;
let lastY = 0;

canvas.addEventListener("mousedown", (ev) => {
    dragging = true;
    panning = ev.button === 2 || ev.shiftKey;
    lastX = ev.clientX;
    lastY = ev.clientY;
});
window.addEventListener("mouseup", () => (dragging = false));
canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());
window.addEventListener("mousemove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    if (panning) {
        const k = 0.002 * orbit.radius;
        orbit.target[0] -= k * (dx * Math.sin(orbit.theta));
        orbit.target[1] += k * (dx * Math.cos(orbit.theta));
        orbit.target[2] += k * dy;
    } else {
        orbit.theta -= 0.005 * dx;
        orbit.phi += 0.005 * dy;
    }
});
canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    orbit.radius *= Math.exp(0.001 * ev.deltaY);
    orbit.radius = Math.max(0.2, Math.min(50, orbit.radius));
}, { passive: false });

// -- render loop with a 60-frame FPS average ------------------------------

const frameTimes: number[] = [];

function frame(now: number) {
    const dpr = window.devicePixelRatio || 1;
    const w = Math.round(canvas.clientWidth * dpr);
    const h = Math.round(canvas.clientHeight * dpr);
    if (canvas.width !== w || canvas.height !== h) {
        canvas.width = w;
        canvas.height = h;
    }
    renderer.draw(orbitCamera(orbit, w, h));

    frameTimes.push(now);
    if (frameTimes.length > 60) frameTimes.shift();
    if (frameTimes.length > 1) {
        const span = frameTimes[frameTimes.length - 1] - frameTimes[0];
        const fps = (1000 * (frameTimes.length - 1)) / span;
        fpsEl.textContent = `${fps.toFixed(0)} fps`;
    }
    requestAnimationFrame(frame);
}

requestAnimationFrame(frame);
