import init, { FlowDemo } from "./pkg/jkoflow_wasm_demo.js";

const EXTENT = 5;
const DENSITY_RES = 90;

let demo = null;
let running = true;
let finished = false;
let stepsPerFrame = 4;

const $ = (id) => document.getElementById(id);
const leftCtx = $("left").getContext("2d");
const midCtx = $("mid").getContext("2d");
const rightCtx = $("right").getContext("2d");

function toPx(v, size) {
  return ((v + EXTENT) / (2 * EXTENT)) * size;
}

function drawScatter(ctx, points, color, size = 2, clear = true) {
  const { width, height } = ctx.canvas;
  if (clear) {
    ctx.fillStyle = "#0b0c0f";
    ctx.fillRect(0, 0, width, height);
  }
  ctx.fillStyle = color;
  for (let i = 0; i < points.length; i += 2) {
    const x = toPx(points[i], width);
    const y = height - toPx(points[i + 1], height);
    ctx.fillRect(x - size / 2, y - size / 2, size, size);
  }
}

function drawDensity(ctx, logp, res) {
  const { width, height } = ctx.canvas;
  let max = -Infinity;
  for (const v of logp) max = Math.max(max, v);
  const cell = width / res;
  for (let iy = 0; iy < res; iy++) {
    for (let ix = 0; ix < res; ix++) {
      const p = Math.exp(logp[iy * res + ix] - max);
      const shade = Math.round(255 * Math.pow(p, 0.5));
      ctx.fillStyle = `rgb(${shade},${Math.round(shade * 0.85)},${Math.round(shade * 0.4)})`;
      ctx.fillRect(ix * cell, height - (iy + 1) * cell, cell + 1, cell + 1);
    }
  }
}

function restart() {
  const dataset = $("dataset").value;
  const alpha = parseFloat($("alpha").value) || 5;
  const stages = parseInt($("stages").value) || 5;
  const width = parseInt($("width").value) || 5;
  const iters = parseInt($("iters").value) || 300;
  const seed = parseInt($("seed").value) || 0;
  demo = new FlowDemo(dataset, 2048, alpha, stages, width, iters, seed);
  finished = false;
  running = true;
  cachedGen = null;
  lastStages = 0;
  $("toggle").textContent = "pause";
  drawScatter(leftCtx, demo.data_points(), "#5b6472");
  drawScatter(midCtx, demo.pushed_points(), "#d0a040");
  drawDensity(rightCtx, demo.density_grid(DENSITY_RES, EXTENT), DENSITY_RES);
}

let cachedGen = null;

function redrawAll(progress) {
  const [stagesDone, stepInStage, kin, nll, total] = progress;
  drawScatter(leftCtx, demo.data_points(), "#5b6472");
  if (cachedGen) drawScatter(leftCtx, cachedGen, "#4f8fe8", 2, false);
  drawScatter(midCtx, demo.pushed_points(), "#d0a040");
  const mmds = Array.from(demo.stage_mmd());
  $("status").textContent =
    `stage ${Math.min(stagesDone + 1, demo.total_stages())}/${demo.total_stages()}` +
    `  step ${stepInStage}/${demo.iters_per_stage()}\n` +
    `loss  total ${total.toFixed(4)}\n` +
    `      kinetic ${kin.toFixed(4)}  nll ${nll.toFixed(4)}\n` +
    (mmds.length
      ? "mmd² per stage:\n" + mmds.map((v, i) => `  ${i + 1}: ${v.toExponential(2)}`).join("\n")
      : "");
}

let lastStages = 0;
function frame() {
  if (demo && running && !finished) {
    const progress = demo.step(stepsPerFrame);
    const stagesDone = progress[0];
    if (progress[5] === 1) {
      finished = true;
      running = false;
      $("toggle").textContent = "done";
    }
    if (stagesDone !== lastStages || finished) {
      lastStages = stagesDone;
      cachedGen = demo.generate(2048, 99);
      drawDensity(rightCtx, demo.density_grid(DENSITY_RES, EXTENT), DENSITY_RES);
    }
    redrawAll(progress);
  }
  requestAnimationFrame(frame);
}

init().then(() => {
  $("restart").addEventListener("click", restart);
  $("toggle").addEventListener("click", () => {
    if (finished) return;
    running = !running;
    $("toggle").textContent = running ? "pause" : "resume";
  });
  restart();
  requestAnimationFrame(frame);
});
