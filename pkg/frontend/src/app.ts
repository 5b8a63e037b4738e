// DOM wiring for the review client: a case queue on the left, the slice
// viewer with axis/slice/modality/overlay controls on the right.
// Keyboard: arrows step slices, A rates Adequate, I rates Inadequate.

import { ApiClient, StudyStatus, Verdict } from "./api.js";
import {
  AXES, CaseView, MODALITIES, axisLength, clampIndex, keyBinding, nextUnrated,
  openCase, orderQueue, stepSlice, switchAxis, switchModality, toggleOverlay,
} from "./state.js";

export class ReviewApp {
  private view: CaseView | null = null;
  private studies: StudyStatus[] = [];
  private submitting = false;
  private raterId: string;

  constructor(private api: ApiClient, private root: HTMLElement) {
    this.raterId = localStorage.getItem("rater") ?? "rater";
    this.root.innerHTML = `
      <div class="layout">
        <aside>
          <h1>Review queue</h1>
          <div id="badge"></div>
          <ul id="queue"></ul>
          <div id="banner" class="hidden"></div>
        </aside>
        <main id="viewer" class="hidden">
          <div class="controls">
            <label>Axis <select id="axis"></select></label>
            <label>Slice <input id="slice" type="range" min="0" value="0"/>
              <span id="slice-num"></span></label>
            <label>Modality <select id="modality"></select></label>
            <label><input id="overlay" type="checkbox"/> Overlay</label>
          </div>
          <img id="slice-img" alt="slice"/>
          <div class="verdict">
            <button id="rate-adequate">Adequate (A)</button>
            <button id="rate-inadequate">Inadequate (I)</button>
            <span id="verdict-note"></span>
          </div>
        </main>
      </div>`;
    this.bind();
  }

  private el<T extends HTMLElement>(id: string): T {
    return this.root.querySelector<T>(`#${id}`)!;
  }

  private bind(): void {
    const axisSel = this.el<HTMLSelectElement>("axis");
    axisSel.innerHTML = AXES.map((a) => `<option value="${a}">${a}</option>`).join("");
    axisSel.addEventListener("change", () => {
      if (this.view) this.setView(switchAxis(this.view, axisSel.value as CaseView["axis"]));
    });
    const modSel = this.el<HTMLSelectElement>("modality");
    modSel.innerHTML = MODALITIES.map((m) => `<option>${m}</option>`).join("");
    modSel.addEventListener("change", () => {
      if (this.view) this.setView(switchModality(this.view, modSel.value));
    });
    this.el<HTMLInputElement>("slice").addEventListener("input", (e) => {
      if (!this.view) return;
      const raw = Number((e.target as HTMLInputElement).value);
      this.setView({ ...this.view, index: clampIndex(this.view, raw) });
    });
    this.el<HTMLInputElement>("overlay").addEventListener("change", () => {
      if (this.view) this.setView(toggleOverlay(this.view));
    });
    this.el("rate-adequate").addEventListener("click", () => this.rate("Adequate"));
    this.el("rate-inadequate").addEventListener("click", () => this.rate("Inadequate"));
    document.addEventListener("keydown", (e) => {
      const action = keyBinding(e.key);
      if (!action || !this.view) return;
      e.preventDefault();
      if (action.kind === "step") this.setView(stepSlice(this.view, action.delta));
      else void this.rate(action.verdict);
    });
  }

  async refresh(): Promise<void> {
    const banner = this.el("banner");
    try {
      const summary = await this.api.summary();
      banner.classList.add("hidden");
      this.studies = orderQueue(summary.studies);
      this.el("badge").textContent =
        `${summary.unrated} to review | ${summary.adequate} adequate | ${summary.inadequate} inadequate`;
      this.renderQueue();
      if (!this.view && this.studies.length) {
        const first = nextUnrated(this.studies, null) ?? this.studies[0];
        this.open(first);
      }
    } catch (err) {
      banner.classList.remove("hidden");
      banner.innerHTML = `Server unreachable. <button id="retry">Retry</button>`;
      this.el("retry").addEventListener("click", () => void this.refresh());
    }
  }

  private renderQueue(): void {
    const list = this.el("queue");
    if (!this.studies.length) {
      list.innerHTML = `<li class="empty">No studies uploaded yet.</li>`;
      return;
    }
    list.innerHTML = this.studies
      .map((s) => {
        const state = s.verdict ?? (s.prediction ? "unrated" : "no prediction");
        const active = this.view?.study.study === s.study ? "active" : "";
        return `<li class="${active}" data-id="${s.study}">
          <span class="sid">${s.study}</span><span class="state ${state.replace(" ", "-")}">${state}</span></li>`;
      })
      .join("");
    list.querySelectorAll("li[data-id]").forEach((li) =>
      li.addEventListener("click", () => {
        const found = this.studies.find((s) => s.study === li.getAttribute("data-id"));
        if (found) this.open(found);
      }),
    );
  }

  private open(study: StudyStatus): void {
    this.el("viewer").classList.remove("hidden");
    this.setView(openCase(study));
    this.renderQueue();
  }

  private setView(view: CaseView): void {
    this.view = view;
    const n = axisLength(view.study.dims, view.axis);
    const slider = this.el<HTMLInputElement>("slice");
    slider.max = String(n - 1);
    slider.value = String(view.index);
    this.el("slice-num").textContent = `${view.index} / ${n - 1}`;
    this.el<HTMLSelectElement>("axis").value = view.axis;
    this.el<HTMLSelectElement>("modality").value = view.modality;
    const overlayBox = this.el<HTMLInputElement>("overlay");
    overlayBox.checked = view.overlay;
    overlayBox.disabled = view.study.prediction === null;
    this.el("verdict-note").textContent =
      view.study.verdict ? `rated ${view.study.verdict}` : "";
    this.el<HTMLImageElement>("slice-img").src = this.api.slice(view.study.study, {
      axis: view.axis,
      index: view.index,
      modality: view.modality,
      overlay: view.overlay && view.study.prediction !== null,
    });
  }

  // One rating per prediction per submission flow: the buttons lock until
  // the server acknowledges, and the local verdict is only shown after a
  // fresh summary confirms it.
  private async rate(verdict: Verdict): Promise<void> {
    if (!this.view || this.submitting || !this.view.study.prediction) return;
    this.submitting = true;
    const buttons = [this.el<HTMLButtonElement>("rate-adequate"),
                     this.el<HTMLButtonElement>("rate-inadequate")];
    buttons.forEach((b) => (b.disabled = true));
    const rated = this.view.study.study;
    try {
      await this.api.submitRating(rated, verdict, this.raterId);
      await this.refresh();
      const next = nextUnrated(this.studies, rated);
      if (next) this.open(next);
    } catch (err) {
      this.el("banner").classList.remove("hidden");
      this.el("banner").textContent = String(err);
    } finally {
      this.submitting = false;
      buttons.forEach((b) => (b.disabled = false));
    }
  }
}
