"""End-to-end smoke: the optimization engine driving the live scoring service
over HTTP for 50 steps, touching only public interfaces (uvicorn process,
wire protocol, engine CLI)."""

import csv
import os
import socket
import subprocess
import sys
import time
import urllib.request

import numpy as np
import pytest


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def live_service():
    port = _free_port()
    env = dict(os.environ, CLIP_SERVICE_MODEL="builtin")
    proc = subprocess.Popen(
        [sys.executable, "-m", "clip_service", "--port", str(port)],
        env=env, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
    )
    url = f"http://127.0.0.1:{port}"
    try:
        deadline = time.time() + 60
        ready = False
        while time.time() < deadline:
            if proc.poll() is not None:
                out = proc.stdout.read().decode(errors="replace")
                raise RuntimeError(f"service died during startup:\n{out}")
            try:
                with urllib.request.urlopen(url + "/v1/health", timeout=2) as resp:
                    if resp.status == 200:
                        ready = True
                        break
            except Exception:
                time.sleep(0.2)
        if not ready:
            raise RuntimeError("service never became healthy")
        yield url
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_fifty_steps_against_live_service(live_service, tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text(f"""
model: {{source: humanoid, segments: 1}}
seed: 21
prompts:
  - {{text: "a moss-covered stone golem"}}
scorer: {{kind: remote, endpoint: "{live_service}"}}
optimizer:
  max_steps: 50
  batch_views: 1
  enabled: [texture, delta]
render:
  train_resolution: [64, 64]
  texture_resolution: [32, 32]
output: {{directory: out, snapshot_every: 0, checkpoint_every: 0}}
""")
    out_dir = tmp_path / "run_out"
    proc = subprocess.run(
        [sys.executable, "-m", "meshforge.cli", "optimize",
         "--config", str(config), "--out", str(out_dir)],
        capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0, proc.stderr or proc.stdout

    with open(out_dir / "loss_log.csv") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    assert len(data) == 50
    col = header.index("prompt_0")
    losses = np.array([float(r[col]) for r in data])
    assert np.all(np.isfinite(losses))
    assert np.all(losses >= -1.0) and np.all(losses <= 1.0)
    print(f"ACCEPTANCE secondary-smoke: PASS (50 steps, losses in "
          f"[{losses.min():.4f}, {losses.max():.4f}])")
