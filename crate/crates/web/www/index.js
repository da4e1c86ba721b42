import init, { score_pair, ranking_curve, session_profile } from "./pkg/conveval_web.js";

const $ = (id) => document.getElementById(id);
const fmt = (v) => v.toFixed(4);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

function table(el, rows) {
  el.innerHTML = rows
    .map(([k, v]) => `<tr><th>${k}</th><td class="num">${typeof v === "number" ? fmt(v) : v}</td></tr>`)
    .join("");
}

function run(prefix, fn) {
  const err = $(`${prefix}-error`);
  try {
    err.textContent = "";
    fn();
  } catch (e) {
    err.textContent = e.message ?? String(e);
    table($(`${prefix}-table`), []);
    const c = $(`${prefix}-canvas`);
    c.getContext("2d").clearRect(0, 0, c.width, c.height);
  }
}

function axes(ctx, x, y, w, h, title, top = "1") {
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(x, y);
  ctx.lineTo(x, y + h);
  ctx.lineTo(x + w, y + h);
  ctx.stroke();
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.fillText(title, x + 4, y - 6);
  ctx.fillText(top, x - 6 - ctx.measureText(top).width, y + 4);
  ctx.fillText("0", x - 12, y + h + 4);
}

function drawAlignment(r) {
  const c = $("pair-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.font = "13px system-ui";
  const place = (tokens, y) => {
    const xs = [];
    let x = 10;
    for (const t of tokens) {
      const w = ctx.measureText(t).width;
      xs.push(x + w / 2);
      ctx.fillStyle = "#222";
      ctx.fillText(t, x, y);
      x += w + 12;
    }
    return xs;
  };
  ctx.fillStyle = "#666";
  const top = place(r.candidate, 30);
  const bottom = place(r.reference, 170);
  ctx.strokeStyle = "#1f77b4";
  for (const [i, j] of r.alignment) {
    ctx.beginPath();
    ctx.moveTo(top[i], 38);
    ctx.lineTo(bottom[j], 156);
    ctx.stroke();
  }
}

function scorePair() {
  const r = JSON.parse(score_pair($("cand").value, $("ref").value));
  table($("pair-table"), [
    ["BLEU-1", r.bleu[0]],
    ["BLEU-2", r.bleu[1]],
    ["BLEU-3", r.bleu[2]],
    ["BLEU-4", r.bleu[3]],
    ["METEOR", r.meteor],
    ["  precision / recall", `${fmt(r.precision)} / ${fmt(r.recall)}`],
    ["  matches / chunks", `${r.alignment.length} / ${r.chunks}`],
    ["  penalty", r.penalty],
    ["ROUGE-L", r.rouge_l],
  ]);
  drawAlignment(r);
}

function rankingCurves() {
  const r = JSON.parse(ranking_curve($("grades").value));
  table($("ranking-table"), [
    [`nDCG@${r.grades.length}`, r.ndcg[r.ndcg.length - 1]],
    ["RBP p=0.5", r.rbp.find(([p]) => p === 0.5)[1]],
    ["RBP p=0.7", r.rbp.find(([p]) => Math.abs(p - 0.7) < 1e-9)[1]],
    ["ERR", r.err],
  ]);
  const c = $("ranking-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const h = 180, y0 = 30;

  // Left: grades, nDCG@k and ERR of each prefix by rank.
  const w = 380, x0 = 30, n = r.grades.length, step = w / n;
  axes(ctx, x0, y0, w, h, "by rank: grade (bars), nDCG@k (blue), ERR prefix (red)");
  r.grades.forEach((g, i) => {
    ctx.fillStyle = "#ddd";
    ctx.fillRect(x0 + i * step + step * 0.2, y0 + h * (1 - g), step * 0.6, h * g);
    ctx.fillStyle = "#444";
    ctx.fillText(String(i + 1), x0 + i * step + step / 2 - 3, y0 + h + 14);
  });
  const line = (vals, color, xAt) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    vals.forEach((v, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, xAt(i), y0 + h * (1 - v)));
    ctx.stroke();
  };
  line(r.ndcg, COLORS[0], (i) => x0 + i * step + step / 2);
  line(r.err_prefix, COLORS[1], (i) => x0 + i * step + step / 2);

  // Right: RBP as a function of persistence.
  const x1 = 480, w1 = 380;
  axes(ctx, x1, y0, w1, h, "RBP against persistence p");
  line(r.rbp.map(([, v]) => v), COLORS[2], (i) => x1 + (r.rbp[i][0]) * w1);
  ctx.fillStyle = "#444";
  ctx.fillText("p=0", x1, y0 + h + 14);
  ctx.fillText("p=1", x1 + w1 - 20, y0 + h + 14);
}

function sessionProfile() {
  const r = JSON.parse(session_profile($("rel").value, Number($("bq").value)));
  table($("session-table"), [
    ["sCG", r.scg],
    ["sDCG", r.sdcg],
    ["sDCG/q", r.sdcg_per_q],
    ...r.schemes.map((s) => [s.name.replace("_", " "), s.value]),
    ["Max", r.max],
    ["Min", r.min],
  ]);
  const c = $("session-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const h = 180, y0 = 30, n = r.gains.length;

  const w = 300, x0 = 30, step = w / n;
  axes(ctx, x0, y0, w, h, "gain 2^rel - 1 by turn");
  r.gains.forEach((g, i) => {
    ctx.fillStyle = "#8aa";
    ctx.fillRect(x0 + i * step + step * 0.2, y0 + h * (1 - g), step * 0.6, h * g);
    ctx.fillStyle = "#444";
    ctx.fillText(String(i + 1), x0 + i * step + step / 2 - 3, y0 + h + 14);
  });

  const x1 = 400, w1 = 300;
  const top = Math.max(...r.schemes.flatMap((s) => s.weights));
  axes(ctx, x1, y0, w1, h, "normalized turn weights", top.toFixed(2));
  const at = (i) => (n === 1 ? x1 + w1 / 2 : x1 + (i / (n - 1)) * w1);
  r.schemes.forEach((s, k) => {
    ctx.strokeStyle = COLORS[k];
    ctx.beginPath();
    s.weights.forEach((v, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, at(i), y0 + h * (1 - v / top)));
    ctx.stroke();
    ctx.fillStyle = COLORS[k];
    ctx.fillText(s.name, x1 + w1 + 16, y0 + 14 + k * 16);
  });
}

await init();
const wire = (ids, prefix, fn) => {
  const go = () => run(prefix, fn);
  ids.forEach((id) => $(id).addEventListener("input", go));
  go();
};
wire(["cand", "ref"], "pair", scorePair);
wire(["grades"], "ranking", rankingCurves);
wire(["rel", "bq"], "session", sessionProfile);
