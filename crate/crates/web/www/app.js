import init, { sigmaSweep, Cohort } from "./pkg/cohortguard_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const SIGMAS = [0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2];
const COLORS = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666"];

function report(fn) {
  try {
    $("error").textContent = "";
    fn();
  } catch (e) {
    $("error").textContent = String(e.message ?? e);
  }
}

// Plot frame with data range [x0,x1] x [y0,y1]; returns a mapper to pixels.
function frame(canvas, x0, x1, y0, y1, xlabel, ylabel) {
  const ctx = canvas.getContext("2d");
  const pad = { l: 46, r: 12, t: 12, b: 34 };
  const w = canvas.width - pad.l - pad.r;
  const h = canvas.height - pad.t - pad.b;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad.l, pad.t, w, h);
  ctx.fillStyle = "#333";
  ctx.font = "11px sans-serif";
  ctx.textAlign = "center";
  for (let i = 0; i <= 4; i++) {
    const xv = x0 + ((x1 - x0) * i) / 4;
    ctx.fillText(+xv.toFixed(2), pad.l + (w * i) / 4, pad.t + h + 14);
  }
  ctx.fillText(xlabel, pad.l + w / 2, canvas.height - 4);
  ctx.textAlign = "right";
  for (let i = 0; i <= 4; i++) {
    const yv = y0 + ((y1 - y0) * i) / 4;
    ctx.fillText(+yv.toFixed(2), pad.l - 4, pad.t + h - (h * i) / 4 + 4);
  }
  ctx.save();
  ctx.translate(12, pad.t + h / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.textAlign = "center";
  ctx.fillText(ylabel, 0, 0);
  ctx.restore();
  const map = (x, y) => [pad.l + ((x - x0) / (x1 - x0)) * w, pad.t + h - ((y - y0) / (y1 - y0)) * h];
  return { ctx, map };
}

function polyline(ctx, pts, color) {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
  ctx.stroke();
}

function runSweep() {
  const points = JSON.parse(
    sigmaSweep(num("sw-speakers"), num("sw-samples"), num("sw-dim"), new Float64Array(SIGMAS), num("sw-seed")),
  );
  const maxEer = Math.max(0.05, ...points.map((p) => p.eer * 100));
  const eer = frame($("sw-eer"), 0, SIGMAS[SIGMAS.length - 1], 0, maxEer, "noise sigma", "EER (%)");
  polyline(eer.ctx, points.map((p) => eer.map(p.sigma, p.eer * 100)), "#333");
  points.forEach((p, i) => {
    const [x, y] = eer.map(p.sigma, p.eer * 100);
    eer.ctx.fillStyle = COLORS[i % COLORS.length];
    eer.ctx.fillRect(x - 3, y - 3, 6, 6);
  });
  const det = frame($("sw-det"), 0, 1, 0, 1, "false accept rate", "false reject rate");
  polyline(det.ctx, [det.map(0, 0), det.map(1, 1)], "#ddd");
  points.forEach((p, i) => {
    polyline(det.ctx, p.det.fpr.map((f, j) => det.map(f, p.det.fnr[j])), COLORS[i % COLORS.length]);
  });
  $("sw-table").innerHTML =
    "<table><tr><th>sigma</th><th>EER (%)</th><th>threshold</th></tr>" +
    points
      .map(
        (p, i) =>
          `<tr><td style="color:${COLORS[i % COLORS.length]}">${p.sigma}</td>` +
          `<td>${(p.eer * 100).toFixed(2)}</td><td>${p.threshold.toFixed(4)}</td></tr>`,
      )
      .join("") +
    "</table>";
}

let cohort = null;
let summary = null;

function drawHistogram(threshold) {
  const h = summary.histogram;
  const bins = h.same.length;
  // Normalise each class so both are visible despite the class imbalance.
  const tot = (v) => Math.max(1, v.reduce((a, b) => a + b, 0));
  const same = h.same.map((c) => c / tot(h.same));
  const diff = h.different.map((c) => c / tot(h.different));
  const top = Math.max(...same, ...diff);
  const { ctx, map } = frame($("c-hist"), h.lo, h.hi, 0, top, "cosine score", "share of pairs");
  const width = (h.hi - h.lo) / bins;
  const bar = (v, i, color) => {
    const [x0, y0] = map(h.lo + i * width, v);
    const [x1, y1] = map(h.lo + (i + 1) * width, 0);
    ctx.fillStyle = color;
    ctx.fillRect(x0, y0, x1 - x0 - 1, y1 - y0);
  };
  diff.forEach((v, i) => bar(v, i, "rgba(217,95,2,0.55)"));
  same.forEach((v, i) => bar(v, i, "rgba(27,158,119,0.55)"));
  polyline(ctx, [map(threshold, 0), map(threshold, top)], "#000");
  ctx.fillStyle = "#333";
  ctx.textAlign = "left";
  ctx.fillText("same speaker", 60, 24);
  ctx.fillStyle = "#d95f02";
  ctx.fillText("different speaker", 60, 38);
}

function updateRates() {
  const t = num("c-threshold");
  const r = JSON.parse(cohort.ratesAt(t));
  $("c-rates").textContent = `t = ${t.toFixed(3)}   TPR | TNR = ${r.label}`;
  drawHistogram(t);
}

function updateDedup() {
  const t = num("d-threshold");
  $("d-threshold-val").textContent = t.toFixed(3);
  const v = JSON.parse(cohort.dedup(t, num("d-frac")));
  $("d-summary").textContent =
    `${v.clusters.length} clusters: ${v.recovered} of ${v.planted} planted aliases recovered, ${v.spurious} spurious`;
  $("d-clusters").innerHTML = v.clusters.length
    ? "<table><tr><th>#</th><th>speakers</th><th></th></tr>" +
      v.clusters
        .map(
          (c, i) =>
            `<tr class="${c.planted ? "planted" : "spurious"}"><td>${i}</td>` +
            `<td class="mono">${c.speakers.join(", ")}</td><td>${c.planted ? "planted" : "spurious"}</td></tr>`,
        )
        .join("") +
      "</table>"
    : "";
}

function generate() {
  if (cohort) cohort.free();
  cohort = new Cohort(num("c-speakers"), num("c-samples"), num("c-dim"), num("c-sigma"), num("c-dups"), num("c-seed"));
  summary = JSON.parse(cohort.summary());
  $("c-summary").textContent =
    `${summary.speakers} speaker ids, ${summary.samples} samples, ${summary.positives} same / ` +
    `${summary.negatives} different pairs; EER ${(summary.eer * 100).toFixed(2)}% at ${summary.eer_threshold.toFixed(4)}`;
  $("c-threshold").value = summary.eer_threshold;
  $("d-threshold").value = summary.eer_threshold;
  updateRates();
  updateDedup();
}

await init();
$("sw-run").onclick = () => report(runSweep);
$("c-run").onclick = () => report(generate);
$("c-threshold").oninput = () => report(updateRates);
$("c-eer").onclick = () =>
  report(() => {
    $("c-threshold").value = summary.eer_threshold;
    updateRates();
  });
$("d-threshold").oninput = () => report(updateDedup);
$("d-frac").onchange = () => report(updateDedup);
report(runSweep);
report(generate);
