/**
 * Vitest global setup: spawn the generation service with a micro
 * checkpoint so the integration test exercises the real HTTP API.
 * If python or the package is unavailable the URL file is not written
 * and the integration test skips itself.
 */

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { existsSync, mkdirSync, rmSync, writeFileSync } from "node:fs";
import path from "node:path";

const WORK_DIR = path.resolve(__dirname, "..", ".tmp-service");
const URL_FILE = path.join(WORK_DIR, "url.txt");
const PORT = 8731;

let child: ChildProcess | null = null;

async function waitForHealth(url: string, timeoutMs: number): Promise<boolean> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${url}/v1/healthz`);
      if (resp.ok) return true;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 300));
  }
  return false;
}

export default async function setup(): Promise<() => void> {
  rmSync(WORK_DIR, { recursive: true, force: true });
  mkdirSync(WORK_DIR, { recursive: true });
  const ckptDir = path.join(WORK_DIR, "ckpt");
  try {
    execFileSync(
      "python3",
      [path.join(__dirname, "make_checkpoint.py"), ckptDir],
      { stdio: "pipe", timeout: 300_000 }
    );
  } catch (err) {
    console.warn("integration service unavailable (checkpoint build failed)", err);
    return () => {};
  }
  const serveCfg = path.join(WORK_DIR, "serve.json");
  writeFileSync(
    serveCfg,
    JSON.stringify({ checkpoint_dir: ckptDir, host: "127.0.0.1", port: PORT })
  );
  child = spawn("python3", ["-m", "strandforge.cli", "serve", serveCfg], {
    stdio: "pipe",
  });
  const url = `http://127.0.0.1:${PORT}`;
  if (await waitForHealth(url, 120_000)) {
    writeFileSync(URL_FILE, url);
  } else {
    console.warn("integration service did not become healthy; test will skip");
    child.kill();
    child = null;
  }
  return () => {
    if (child) child.kill();
    if (existsSync(URL_FILE)) rmSync(URL_FILE);
  };
}
