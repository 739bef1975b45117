import init, { modulations, generateSample, augmentPreview, complexityTable } from "./pkg/mamr_demo.js";

const $ = (id) => document.getElementById(id);
let original = null;
let current = null;

function num(id) {
  return Number($(id).value);
}

function report(fn) {
  try {
    $("error").textContent = "";
    fn();
  } catch (e) {
    $("error").textContent = String(e.message ?? e);
  }
}

function draw(data, antennas) {
  const n = data.length / (2 * antennas);
  const plots = $("plots");
  plots.replaceChildren();
  for (let a = 0; a < antennas; a++) {
    const i = data.subarray(2 * a * n, (2 * a + 1) * n);
    const q = data.subarray((2 * a + 1) * n, (2 * a + 2) * n);
    const row = document.createElement("div");
    row.append(scatter(i, q), trace(i, q), `antenna ${a + 1}`);
    plots.append(row);
  }
}

function scatter(i, q) {
  const c = document.createElement("canvas");
  c.width = c.height = 160;
  const g = c.getContext("2d");
  const lim = Math.max(...i.map(Math.abs), ...q.map(Math.abs), 1e-9);
  g.fillStyle = "#1565c0";
  for (let k = 0; k < i.length; k++) {
    g.fillRect(80 + (i[k] / lim) * 75, 80 - (q[k] / lim) * 75, 2, 2);
  }
  return c;
}

function trace(i, q) {
  const c = document.createElement("canvas");
  c.width = 600;
  c.height = 160;
  const g = c.getContext("2d");
  const lim = Math.max(...i.map(Math.abs), ...q.map(Math.abs), 1e-9);
  const line = (v, color, mid) => {
    g.strokeStyle = color;
    g.beginPath();
    for (let k = 0; k < v.length; k++) {
      const x = (k / (v.length - 1)) * c.width;
      const y = mid - (v[k] / lim) * 35;
      k ? g.lineTo(x, y) : g.moveTo(x, y);
    }
    g.stroke();
  };
  line(i, "#1565c0", 40);
  line(q, "#c62828", 120);
  return c;
}

function costTable() {
  const rows = JSON.parse(complexityTable(num("c-antennas"), num("c-f")));
  const head = "<tr><th>method</th><th>FLOPs</th><th>params</th><th>feature mem</th><th>FLOPs / single</th></tr>";
  const single = rows.find((r) => r.method === "single").flops;
  $("table").innerHTML = head + rows
    .map((r) => `<tr><td>${r.method}</td><td>${r.flops}</td><td>${r.params}</td><td>${r.feature_mem}</td><td>${(r.flops / single).toFixed(5)}</td></tr>`)
    .join("");
}

await init();
for (const m of modulations()) {
  $("mod").add(new Option(m, m));
}
$("mod").value = "16QAM";

$("gen").onclick = () => report(() => {
  original = generateSample($("mod").value, num("antennas"), num("length"), num("snr"), num("seed"));
  current = original;
  draw(current, num("antennas"));
});
$("aug").onclick = () => report(() => {
  if (!current) return;
  current = augmentPreview(current, num("antennas"), num("ex-i") - 1, num("ex-j") - 1, $("flip").value);
  draw(current, num("antennas"));
});
$("reset").onclick = () => report(() => {
  if (!original) return;
  current = original;
  draw(current, num("antennas"));
});
$("cost").onclick = () => report(costTable);

$("gen").click();
costTable();
