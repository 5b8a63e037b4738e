// End-to-end checks against a real seeded server process. Skipped unless
// RUN_SERVER_TESTS=1 (needs the python package installed).

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { ApiClient } from "../src/api.js";
import { orderQueue } from "../src/state.js";

const enabled = process.env.RUN_SERVER_TESTS === "1";
const PORT = 8765;
const BASE = `http://127.0.0.1:${PORT}`;

const SEED_SCRIPT = `
import sys
from gmlnbts.feedback import FeedbackStore
from gmlnbts.phantom import PhantomConfig, generate_dataset
from gmlnbts.train import segment_volume, study_input
from gmlnbts.model import GmlnModel, tiny_config
from gmlnbts import checkpoint as ckpt

root, ckpt_path = sys.argv[1], sys.argv[2]
store = FeedbackStore(root)
model = GmlnModel(tiny_config(), seed=3)
ckpt.save_model(ckpt_path, model)
for s in generate_dataset(PhantomConfig(size=(16, 16, 16), seed=21), 3):
    store.add_study(s)
    pred = segment_volume(model, study_input(s))
    store.record_prediction(s.id, pred, model.version)
print("seeded")
`;

let proc: ChildProcess | null = null;
let workdir = "";

async function waitForServer(api: ApiClient): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      await api.modelInfo();
      return;
    } catch {
      await new Promise((r) => setTimeout(r, 200));
    }
  }
  throw new Error("server did not come up");
}

describe.skipIf(!enabled)("review flow against a seeded server", () => {
  const api = new ApiClient(BASE);

  beforeAll(async () => {
    workdir = mkdtempSync(join(tmpdir(), "review-ui-"));
    const store = join(workdir, "store");
    const ckpt = join(workdir, "model.vckp");
    const seeded = spawnSync("python3", ["-c", SEED_SCRIPT, store, ckpt], {
      encoding: "utf-8",
    });
    if (!seeded.stdout.includes("seeded")) {
      throw new Error(`seeding failed: ${seeded.stderr}`);
    }
    proc = spawn("python3", ["-m", "gmlnbts.cli", "serve", "--store", store,
                             "--port", String(PORT)], { stdio: "ignore" });
    await waitForServer(api);
  }, 120000);

  afterAll(() => {
    proc?.kill();
    if (workdir) rmSync(workdir, { recursive: true, force: true });
  });

  it("lists the seeded studies in the queue", async () => {
    const summary = await api.summary();
    expect(summary.studies.length).toBe(3);
    expect(summary.unrated).toBe(3);
    const queue = orderQueue(summary.studies);
    expect(queue.every((s) => s.prediction !== null)).toBe(true);
    expect(queue[0].dims).toEqual([16, 16, 16]);
  });

  it("round-trips axis/index/modality/overlay through the slice endpoint", async () => {
    const { studies } = await api.summary();
    const sid = studies[0].study;
    for (const params of [
      { axis: "d" as const, index: 8, modality: "T1", overlay: false },
      { axis: "h" as const, index: 0, modality: "FLAIR", overlay: true },
      { axis: "w" as const, index: 15, modality: "T1ce", overlay: true },
    ]) {
      const res = await fetch(api.slice(sid, params));
      expect(res.status).toBe(200);
      expect(res.headers.get("content-type")).toBe("image/png");
      const bytes = new Uint8Array(await res.arrayBuffer());
      expect(Array.from(bytes.slice(1, 4))).toEqual([0x50, 0x4e, 0x47]); // "PNG"
    }
    const bad = await fetch(api.slice(sid, { axis: "d", index: 99, modality: "T1", overlay: false }));
    expect(bad.status).toBe(416);
  });

  it("makes a submitted rating visible in the next summary fetch", async () => {
    const before = await api.summary();
    const target = orderQueue(before.studies)[0];
    await api.submitRating(target.study, "Adequate", "ui-test");
    const after = await api.summary();
    expect(after.adequate).toBe(before.adequate + 1);
    expect(after.studies.find((s) => s.study === target.study)?.verdict).toBe("Adequate");
  });
});
