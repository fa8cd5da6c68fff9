import init, { deflection, spline, trial } from "./pkg/bonedrill_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function show(el, text, isError = false) {
  el.textContent = text;
  el.className = isError ? "err" : "";
}

function runDeflection() {
  try {
    const view = deflection(num("d-disp"), num("d-sigma"), num("d-thr"), num("d-seed") >>> 0);
    const canvas = $("d-canvas");
    canvas.width = view.width;
    canvas.height = view.height;
    const img = new ImageData(new Uint8ClampedArray(view.rgba()), view.width, view.height);
    canvas.getContext("2d").putImageData(img, 0, 0);
    const r = JSON.parse(view.json());
    show($("d-out"), [
      `state       ${r.state}`,
      `delta       ${r.delta.toFixed(4)} mm`,
      `threshold   ${r.threshold} mm`,
      `mean inner  ${r.mean_inner.toFixed(4)} mm (${r.inner_px} px)`,
      `mean outer  ${r.mean_outer.toFixed(4)} mm (${r.outer_px} px)`,
    ].join("\n"));
    view.free();
  } catch (e) {
    show($("d-out"), String(e), true);
  }
}

const editor = { z: [], drag: -1 };
const Z_MAX = 0.5;

function resetKnots() {
  const n = Math.min(64, Math.max(3, num("s-n") | 0));
  editor.z = Array.from({ length: n }, (_, k) => 0.25 + 0.15 * Math.sin((2 * Math.PI * k) / n) * (k % 3 === 0 ? 1 : 0.4));
  drawSpline();
}

function splineXY(canvas, theta, z) {
  const pad = 20;
  return [pad + (theta / (2 * Math.PI)) * (canvas.width - 2 * pad), pad + (z / Z_MAX) * (canvas.height - 2 * pad)];
}

function drawSpline() {
  const canvas = $("s-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let s;
  try {
    s = JSON.parse(spline(Float64Array.from(editor.z), 720));
  } catch (e) {
    ctx.fillStyle = "#b00";
    ctx.fillText(String(e), 30, 30);
    return;
  }
  ctx.strokeStyle = "#ddd";
  for (let z = 0; z <= Z_MAX + 1e-9; z += 0.1) {
    const [, y] = splineXY(canvas, 0, z);
    ctx.beginPath();
    ctx.moveTo(20, y);
    ctx.lineTo(canvas.width - 20, y);
    ctx.stroke();
    ctx.fillStyle = "#888";
    ctx.fillText(`${z.toFixed(1)} mm`, 22, y - 2);
  }
  ctx.strokeStyle = "#1f5fbf";
  ctx.lineWidth = 2;
  ctx.beginPath();
  s.theta.forEach((t, i) => {
    const [x, y] = splineXY(canvas, t, s.z[i]);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.lineWidth = 1;
  ctx.fillStyle = "#c33";
  s.knot_angles.forEach((a, k) => {
    const [x, y] = splineXY(canvas, a, editor.z[k]);
    ctx.beginPath();
    ctx.arc(x, y, 5, 0, 2 * Math.PI);
    ctx.fill();
  });
}

function knotAt(ev) {
  const canvas = $("s-canvas");
  const rect = canvas.getBoundingClientRect();
  const x = ev.clientX - rect.left;
  const y = ev.clientY - rect.top;
  const n = editor.z.length;
  let best = -1;
  let bestD = 12;
  for (let k = 0; k < n; k++) {
    const [kx, ky] = splineXY(canvas, (2 * Math.PI * k) / n, editor.z[k]);
    const d = Math.hypot(kx - x, ky - y);
    if (d < bestD) {
      best = k;
      bestD = d;
    }
  }
  return best;
}

function dragKnot(ev) {
  if (editor.drag < 0) return;
  const canvas = $("s-canvas");
  const rect = canvas.getBoundingClientRect();
  const y = ev.clientY - rect.top;
  const z = ((y - 20) / (canvas.height - 40)) * Z_MAX;
  editor.z[editor.drag] = Math.min(Z_MAX, Math.max(0, z));
  drawSpline();
}

const PRESS_COLORS = ["#1f5fbf", "#c33", "#2a8a3a", "#a0f"];

function runTrial() {
  const canvas = $("t-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let r;
  try {
    r = JSON.parse(trial(num("t-seed") >>> 0, num("t-bias"), num("t-sb")));
  } catch (e) {
    show($("t-out"), String(e), true);
    return;
  }
  const lines = [
    `final state   ${r.final_state}`,
    `case          ${r.case}${r.successful ? " (success)" : ""}, detachable=${r.detachable}`,
    `total         ${r.total_s.toFixed(1)} s, palpation ${r.palpation_s.toFixed(1)} s (${r.palpation_pct})`,
    `cycles        ${r.drilling_cycles} drilling, ${r.repeat_cycles} repeat`,
    "",
  ];
  let last = "";
  for (const e of r.events) {
    if (e.event === "PassComplete" || e.event === "RepeatCycleComplete") continue;
    const line = `${e.t.toFixed(2).padStart(9)} s  ${e.event.padEnd(20)} -> ${e.state}`;
    if (e.event === "CycleComplete" && e.state === last) continue;
    last = e.state;
    lines.push(line);
  }
  show($("t-out"), lines.join("\n"));

  const round = r.rounds[r.rounds.length - 1];
  if (!round) {
    ctx.fillText("no palpation in this trial", 30, 30);
    return;
  }
  const fMax = r.force_max * 1.15;
  const tMax = Math.max(...round.presses.map((p) => (p.trace.length ? p.trace[p.trace.length - 1][0] - p.trace[0][0] : 0)), 1e-3);
  const X = (t) => 40 + (t / tMax) * (canvas.width - 60);
  const Y = (f) => canvas.height - 25 - (f / fMax) * (canvas.height - 45);
  ctx.strokeStyle = "#999";
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(40, Y(r.force_max));
  ctx.lineTo(canvas.width - 20, Y(r.force_max));
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.fillStyle = "#555";
  ctx.fillText(`${r.force_max} N`, 4, Y(r.force_max) + 4);
  ctx.fillText(`contact force during the descents of the last palpation round (${round.final}, ${round.detachable_count} of ${round.presses.length} D)`, 40, 14);
  round.presses.forEach((p, i) => {
    if (!p.trace.length) return;
    const t0 = p.trace[0][0];
    ctx.strokeStyle = PRESS_COLORS[i % PRESS_COLORS.length];
    ctx.beginPath();
    p.trace.forEach(([t, , f], j) => {
      if (j === 0) ctx.moveTo(X(t - t0), Y(Math.abs(f)));
      else ctx.lineTo(X(t - t0), Y(Math.abs(f)));
    });
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(`knot ${p.index}: ${p.verdict}, ${p.exit}`, canvas.width - 260, 30 + 14 * i);
  });
}

async function main() {
  await init();
  show($("status"), "Simulator loaded.");
  $("d-run").addEventListener("click", runDeflection);
  $("s-reset").addEventListener("click", resetKnots);
  $("s-n").addEventListener("change", resetKnots);
  const sc = $("s-canvas");
  sc.addEventListener("mousedown", (ev) => {
    editor.drag = knotAt(ev);
  });
  sc.addEventListener("mousemove", dragKnot);
  window.addEventListener("mouseup", () => {
    editor.drag = -1;
  });
  $("t-run").addEventListener("click", runTrial);
  runDeflection();
  resetKnots();
}

main().catch((e) => show($("status"), `Failed to load: ${e}`, true));
