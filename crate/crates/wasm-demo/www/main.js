import init, { filterResponse, detectSynthetic, rasterizeSynthetic } from "./pkg/ecg_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plot(canvas, xs, series, yRange) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const [x0, x1] = [xs[0], xs[xs.length - 1]];
  const [y0, y1] = yRange;
  const px = (x) => ((x - x0) / (x1 - x0)) * (w - 1);
  const py = (y) => h - 1 - ((Math.min(Math.max(y, y0), y1) - y0) / (y1 - y0)) * (h - 1);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.ys.forEach((y, i) => (i ? ctx.lineTo(px(xs[i]), py(y)) : ctx.moveTo(px(xs[i]), py(y))));
    ctx.stroke();
  }
  return { px, py, ctx };
}

function showError(el, e) {
  el.textContent = String(e);
  el.className = "err";
}

function updateFilter() {
  const info = $("f-info");
  try {
    const r = JSON.parse(filterResponse(num("f-fs"), num("f-low"), num("f-high"), num("f-order"), 512));
    const db = r.db.map((d) => (Number.isFinite(d) ? d : -200));
    const { ctx, py } = plot($("response"), r.hz, [{ ys: db, color: "#1565c0" }], [-80, 5]);
    ctx.strokeStyle = "#aaa";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(0, py(-3.0103));
    ctx.lineTo($("response").width, py(-3.0103));
    ctx.stroke();
    ctx.setLineDash([]);
    info.className = "";
    info.textContent = `${r.a.length} coefficients, ${r.stable ? "stable" : "UNSTABLE"}; dashed line at -3 dB`;
  } catch (e) {
    showError(info, e);
  }
}

function updateBeats() {
  const info = $("s-info");
  try {
    const [bpm, noise, seed] = [num("s-bpm"), num("s-noise"), num("s-seed")];
    const d = JSON.parse(detectSynthetic(bpm, noise, seed));
    const t = d.signal.map((_, i) => i / d.fs);
    const lo = Math.min(...d.signal, ...d.filtered);
    const hi = Math.max(...d.signal, ...d.filtered);
    const { ctx, px, py } = plot(
      $("trace"),
      t,
      [
        { ys: d.signal, color: "#999" },
        { ys: d.filtered, color: "#2e7d32" },
      ],
      [lo, hi],
    );
    const mark = (idx, color, r) => {
      ctx.fillStyle = color;
      for (const i of idx) {
        ctx.beginPath();
        ctx.arc(px(t[i]), py(d.signal[i]), r, 0, 2 * Math.PI);
        ctx.fill();
      }
    };
    mark(d.r_peaks, "#c62828", 4);
    mark(d.q_peaks, "#6a1b9a", 2.5);
    mark(d.s_peaks, "#ef6c00", 2.5);
    info.className = "";
    info.textContent = `${d.r_peaks.length} R peaks detected, ${d.truth.length} beats generated`;

    const img = rasterizeSynthetic(bpm, noise, seed);
    const canvas = $("raster");
    canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(img.rgba()), img.width, img.height), 0, 0);
    img.free();
  } catch (e) {
    showError(info, e);
  }
}

await init();
for (const id of ["f-fs", "f-low", "f-high", "f-order"]) $(id).addEventListener("input", updateFilter);
for (const id of ["s-bpm", "s-noise", "s-seed"]) $(id).addEventListener("input", updateBeats);
updateFilter();
updateBeats();
