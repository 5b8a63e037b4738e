import { describe, expect, it } from "vitest";

import type { StudyStatus } from "../src/api.js";
import { sliceUrl } from "../src/api.js";
import {
  clampIndex, keyBinding, nextUnrated, openCase, orderQueue, stepSlice,
  switchAxis, switchModality, toggleOverlay,
} from "../src/state.js";

function study(id: string, verdict: StudyStatus["verdict"] = null): StudyStatus {
  return { study: id, dims: [16, 32, 8], prediction: `${id}--v0`, model_version: 0, verdict };
}

describe("queue ordering", () => {
  it("lists unrated studies first", () => {
    const ordered = orderQueue([study("a", "Adequate"), study("b"), study("c")]);
    expect(ordered.map((s) => s.study)).toEqual(["b", "c", "a"]);
  });

  it("moves a rated case into the rated section", () => {
    const before = orderQueue([study("a"), study("b")]);
    expect(before[0].study).toBe("a");
    const after = orderQueue([study("a", "Inadequate"), study("b")]);
    expect(after.map((s) => s.study)).toEqual(["b", "a"]);
  });

  it("finds the next unrated case after a submission", () => {
    const studies = [study("a"), study("b"), study("c", "Adequate")];
    expect(nextUnrated(studies, "a")?.study).toBe("b");
    expect(nextUnrated([study("z", "Adequate")], null)).toBeNull();
  });
});

describe("slice navigation", () => {
  it("clamps the slider to the axis length", () => {
    const view = openCase(study("a"));
    expect(clampIndex(view, 999)).toBe(15); // depth axis of 16
    expect(clampIndex(view, -4)).toBe(0);
    const max = stepSlice({ ...view, index: 15 }, +5);
    expect(max.index).toBe(15);
  });

  it("axis switch recenters on the new axis", () => {
    const view = switchAxis(openCase(study("a")), "h");
    expect(view.axis).toBe("h");
    expect(view.index).toBe(16); // 32 / 2
  });

  it("modality switch preserves the slice index", () => {
    const view = { ...openCase(study("a")), index: 7 };
    expect(switchModality(view, "FLAIR").index).toBe(7);
    expect(switchModality(view, "FLAIR").modality).toBe("FLAIR");
  });

  it("overlay toggles and round-trips into the slice URL", () => {
    let view = openCase(study("a"));
    expect(view.overlay).toBe(true); // prediction exists
    view = toggleOverlay(view);
    const url = sliceUrl("", "a", {
      axis: view.axis, index: view.index, modality: view.modality, overlay: view.overlay,
    });
    expect(url).toBe("/studies/a/slice?axis=d&index=8&modality=T1&overlay=0");
  });
});

describe("keyboard bindings", () => {
  it("arrows step slices", () => {
    expect(keyBinding("ArrowRight")).toEqual({ kind: "step", delta: 1 });
    expect(keyBinding("ArrowLeft")).toEqual({ kind: "step", delta: -1 });
  });
  it("A and I submit verdicts", () => {
    expect(keyBinding("a")).toEqual({ kind: "rate", verdict: "Adequate" });
    expect(keyBinding("I")).toEqual({ kind: "rate", verdict: "Inadequate" });
  });
  it("other keys do nothing", () => {
    expect(keyBinding("x")).toBeNull();
  });
});
