#pragma once

namespace orthotrace::pipeline::detail {

// Minimal page served at /. The full annotation client is built separately
// against the same API.
inline constexpr const char* kIndexHtml = R"html(<!doctype html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>orthotrace</title>
<style>
body { font-family: sans-serif; margin: 1.5em; }
#view { display: flex; gap: 1em; }
#list { min-width: 14em; }
#list li { cursor: pointer; }
canvas { border: 1px solid #888; max-width: 100%; }
</style>
</head>
<body>
<h1>orthotrace</h1>
<div id="view">
  <ul id="list"></ul>
  <div><canvas id="canvas" width="800" height="600"></canvas><p id="info"></p></div>
</div>
<script>
const api = '/api/v1';
const canvas = document.getElementById('canvas');
const ctx = canvas.getContext('2d');

async function show(img) {
  const [bitmap, ann] = await Promise.all([
    fetch(`${api}/images/${img.id}/file`).then(r => r.blob()).then(createImageBitmap),
    fetch(`${api}/images/${img.id}/annotations`).then(r => r.json()),
  ]);
  const scale = Math.min(canvas.width / img.width, canvas.height / img.height);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(bitmap, 0, 0, img.width * scale, img.height * scale);
  ctx.strokeStyle = 'red';
  for (const a of ann.annotations) {
    const [x, y, w, h] = a.bbox;
    ctx.strokeRect(x * scale, y * scale, w * scale, h * scale);
  }
  document.getElementById('info').textContent =
    `${img.file_name}: ${ann.annotations.length} boxes, version ${ann.version}`;
}

fetch(`${api}/images`).then(r => r.json()).then(images => {
  const list = document.getElementById('list');
  for (const img of images) {
    const li = document.createElement('li');
    li.textContent = img.file_name;
    li.onclick = () => show(img);
    list.appendChild(li);
  }
});
</script>
</body>
</html>
)html";

}  // namespace orthotrace::pipeline::detail
