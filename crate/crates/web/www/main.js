import init, {
  synthesize_tone, analyze_wav, caption_from_spec, spec_from_caption, gaussian_flow,
} from "./pkg/captionvoice_web.js";

const $ = (id) => document.getElementById(id);
let audio;
let seed = 1;

function show(el, fn) {
  try {
    el.classList.remove("error");
    el.textContent = fn();
  } catch (e) {
    el.classList.add("error");
    el.textContent = String(e.message ?? e);
  }
}

function drawLine(canvas, values) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.beginPath();
  const step = Math.max(1, Math.floor(values.length / canvas.width));
  for (let x = 0; x < canvas.width && x * step < values.length; x++) {
    const y = canvas.height / 2 - values[x * step] * canvas.height / 2;
    x === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  }
  ctx.stroke();
}

function drawHistogram(canvas, values, bins = 60) {
  const lo = Math.min(...values), hi = Math.max(...values);
  const counts = new Array(bins).fill(0);
  for (const v of values) counts[Math.min(bins - 1, Math.floor((v - lo) / (hi - lo) * bins))]++;
  const top = Math.max(...counts);
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const w = canvas.width / bins;
  counts.forEach((c, i) => ctx.fillRect(i * w, canvas.height * (1 - c / top), w - 1, canvas.height * c / top));
}

for (const input of document.querySelectorAll("#tone input[type=range]")) {
  const label = input.nextElementSibling;
  const update = () => (label.textContent = input.value);
  input.addEventListener("input", update);
  update();
}

function playTone() {
  const v = (id) => parseFloat($(id).value);
  show($("features"), () => {
    const tone = synthesize_tone(v("f0"), v("f0_var"), v("level_db"), v("jitter_pct"), v("shimmer_pct"), 1.0, BigInt(seed++));
    const samples = tone.samples();
    drawLine($("wave"), samples.subarray(0, 2000));
    audio ??= new AudioContext();
    const buffer = audio.createBuffer(1, samples.length, tone.sample_rate);
    buffer.copyToChannel(samples, 0);
    const src = audio.createBufferSource();
    src.buffer = buffer;
    src.connect(audio.destination);
    src.start();
    const link = $("download");
    link.href = URL.createObjectURL(new Blob([tone.wav()], { type: "audio/wav" }));
    link.hidden = false;
    return JSON.stringify(JSON.parse(tone.features_json()), null, 2);
  });
}

async function analyzeUpload(event) {
  const file = event.target.files[0];
  if (!file) return;
  const bytes = new Uint8Array(await file.arrayBuffer());
  show($("features"), () => JSON.stringify(JSON.parse(analyze_wav(bytes)), null, 2));
}

function runFlow() {
  show($("flow-out"), () => {
    const out = JSON.parse(gaussian_flow(parseFloat($("mean").value), parseFloat($("var").value), 4000,
      parseInt($("steps").value, 10), BigInt(seed++)));
    drawHistogram($("hist"), out.samples);
    const forward = out.forward.filter((_, i) => i % 5 === 0)
      .map(([t, m, v]) => `t=${t.toFixed(2)}  mean=${m.toFixed(3)}  var=${v.toFixed(3)}`).join("\n");
    return `sample mean ${out.sample_mean.toFixed(4)}, variance ${out.sample_var.toFixed(4)}\n\nforward marginal:\n${forward}`;
  });
}

await init();
$("play").addEventListener("click", playTone);
$("upload").addEventListener("change", analyzeUpload);
$("generate").addEventListener("click", () => show($("caption-out"), () => caption_from_spec($("spec").value, BigInt(seed++))));
$("parse").addEventListener("click", () => show($("caption-out"), () => spec_from_caption($("text").value)));
$("run-flow").addEventListener("click", runFlow);
