import init, { frame, solve, delay_sweep } from "./pkg/tactile_ra_web.js";

const $ = (id) => document.getElementById(id);
const log = (text) => { $("log").textContent = text; };
const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"];

function params() {
  return {
    sbs: Number($("sbs").value),
    users: Number($("users").value),
    delay: Number($("delay").value),
    seed: Number($("seed").value),
    carve: Number($("carve").value),
    seeds: Number($("seeds").value),
  };
}

// Draws the frame; when `run` is given, dashed lines join each user to the
// base station hosting its NFs.
function drawMap(f, run) {
  const c = $("map");
  const g = c.getContext("2d");
  const s = (c.width / 2 - 10) / f.radius_km;
  const px = (x, y) => [c.width / 2 + x * s, c.height / 2 - y * s];
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#bbb";
  g.beginPath();
  g.arc(c.width / 2, c.height / 2, f.radius_km * s, 0, 2 * Math.PI);
  g.stroke();

  f.users.forEach((u, i) => {
    const [x, y] = px(u.x, u.y);
    const [bx, by] = px(...f.base_stations[u.bs]);
    g.strokeStyle = COLORS[u.bs % COLORS.length] + "66";
    g.setLineDash([]);
    g.beginPath(); g.moveTo(x, y); g.lineTo(bx, by); g.stroke();
    const host = run && run.nf_host[i];
    if (host !== null && host !== undefined && host !== u.bs) {
      const [hx, hy] = px(...f.base_stations[host]);
      g.strokeStyle = "#000";
      g.setLineDash([4, 4]);
      g.beginPath(); g.moveTo(bx, by); g.lineTo(hx, hy); g.stroke();
    }
  });
  g.setLineDash([]);
  f.teleoperators.forEach((o) => {
    const [x, y] = px(o.x, o.y);
    g.fillStyle = COLORS[o.bs % COLORS.length];
    g.beginPath(); g.moveTo(x, y - 5); g.lineTo(x + 4, y + 3); g.lineTo(x - 4, y + 3); g.fill();
  });
  f.users.forEach((u) => {
    const [x, y] = px(u.x, u.y);
    g.fillStyle = COLORS[u.bs % COLORS.length];
    g.beginPath(); g.arc(x, y, 4, 0, 2 * Math.PI); g.fill();
  });
  f.base_stations.forEach((b, i) => {
    const [x, y] = px(...b);
    const r = i === 0 ? 9 : 6;
    g.fillStyle = "#000";
    g.fillRect(x - r, y - r, 2 * r, 2 * r);
    g.fillStyle = "#fff";
    g.font = "10px sans-serif";
    g.fillText(String(i), x - 3, y + 3);
  });
}

function axes(g, c, title) {
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#000";
  g.beginPath(); g.moveTo(50, 20); g.lineTo(50, c.height - 40); g.lineTo(c.width - 10, c.height - 40); g.stroke();
  g.fillStyle = "#000";
  g.font = "13px sans-serif";
  g.fillText(title, 60, 16);
}

function drawBars(runs) {
  const c = $("chart");
  const g = c.getContext("2d");
  axes(g, c, "Total cost by approach");
  const top = Math.max(...runs.map((r) => r.cost)) * 1.15 || 1;
  const h = c.height - 60;
  runs.forEach((r, i) => {
    const x = 100 + i * 180;
    const yOf = (v) => c.height - 40 - (v / top) * h;
    g.fillStyle = r.feasible ? COLORS[i] : "#999";
    g.fillRect(x, yOf(r.cost), 100, (r.cost / top) * h);
    g.fillStyle = "#000";
    g.fillText(`${r.mode.toUpperCase()} ${r.cost.toFixed(4)}${r.feasible ? "" : " (infeasible)"}`, x, yOf(r.cost) - 6);
    g.fillText(`${r.power_w.toFixed(4)} W, ${r.exec_ms.toFixed(5)} ms`, x, c.height - 24);
  });
}

function drawSweep(points) {
  const c = $("chart");
  const g = c.getContext("2d");
  axes(g, c, "Mean cost vs delay budget (ms)");
  const xs = [...new Set(points.map((p) => p.delay_ms))].sort((a, b) => a - b);
  const top = Math.max(...points.map((p) => p.mean_cost ?? 0)) * 1.15 || 1;
  const xOf = (d) => 70 + (xs.indexOf(d) / Math.max(xs.length - 1, 1)) * (c.width - 110);
  const yOf = (v) => c.height - 40 - (v / top) * (c.height - 60);
  ["ja", "sa"].forEach((mode, i) => {
    const pts = points.filter((p) => p.mode === mode && p.mean_cost !== null);
    g.strokeStyle = g.fillStyle = COLORS[i];
    g.beginPath();
    pts.forEach((p, k) => (k ? g.lineTo : g.moveTo).call(g, xOf(p.delay_ms), yOf(p.mean_cost)));
    g.stroke();
    pts.forEach((p) => { g.beginPath(); g.arc(xOf(p.delay_ms), yOf(p.mean_cost), 3, 0, 2 * Math.PI); g.fill(); });
    g.fillText(mode.toUpperCase(), c.width - 60, 30 + 16 * i);
  });
  g.fillStyle = "#000";
  xs.forEach((d) => g.fillText(String(d), xOf(d) - 4, c.height - 24));
}

// Lets the page repaint before a blocking solver call.
const defer = (fn) => setTimeout(() => {
  try { fn(); } catch (e) { log(String(e)); }
}, 20);

function onDraw() {
  const p = params();
  drawMap(JSON.parse(frame(p.sbs, p.users, p.delay, p.seed)));
  log(`Frame drawn. Squares: base stations (0 is the macro cell). Dots: users. Triangles: teleoperators.`);
}

function onSolve() {
  const p = params();
  log("Solving…");
  defer(() => {
    const f = JSON.parse(frame(p.sbs, p.users, p.delay, p.seed));
    const runs = JSON.parse(solve(p.sbs, p.users, p.delay, p.seed, p.carve));
    drawMap(f, runs[0]);
    drawBars(runs);
    const lines = runs.map((r) =>
      `${r.mode.toUpperCase()}: ${r.feasible ? "feasible" : "infeasible"}, cost ${r.cost.toFixed(5)} ` +
      `after ${r.iterations} iterations` + (r.diagnostics.length ? `\n  ${r.diagnostics.slice(-3).join("\n  ")}` : ""));
    log(lines.join("\n") + "\nDashed lines: NFs hosted away from the user's cell (joint approach).");
  });
}

function onSweep() {
  const p = params();
  log("Sweeping…");
  defer(() => {
    const pts = JSON.parse(delay_sweep(p.sbs, p.users, p.seeds, new Float64Array([1, 2, 5, 10])));
    drawSweep(pts);
    log(pts.map((q) => `${q.delay_ms} ms ${q.mode}: ${q.feasible}/${q.runs} feasible, mean ${q.mean_cost?.toFixed(5) ?? "-"}`).join("\n"));
  });
}

await init();
$("draw").onclick = onDraw;
$("solve").onclick = onSolve;
$("sweep").onclick = onSweep;
onDraw();
