// DOM wiring: four attribute sliders, generate / satisfy / unsatisfy,
// before/after panes, score readout and the visible operation counter.

import { ApiClient, ApiError } from "./api.js";
import {
  ATTRIBUTE_LABELS,
  SLIDER_STEP,
  UiState,
  canGenerate,
  generateFailure,
  generateStart,
  generateSuccess,
  initialState,
  requestPayload,
  satisfy,
  setExtended,
  setSlider,
  sliderBound,
} from "./state.js";

const DEFAULT_STEPS = 20;

export class App {
  state: UiState = initialState();
  private sourceB64: string | null = null;
  private root: HTMLElement;

  constructor(root: HTMLElement, private client: ApiClient) {
    this.root = root;
    this.build();
    this.render();
  }

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    cls?: string,
    parent?: HTMLElement
  ): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    if (cls) node.className = cls;
    (parent ?? this.root).appendChild(node);
    return node;
  }

  private sliders: HTMLInputElement[] = [];
  private sliderValues: HTMLSpanElement[] = [];
  private extendedBox!: HTMLInputElement;
  private generateBtn!: HTMLButtonElement;
  private rerollBtn!: HTMLButtonElement;
  private satisfyBtn!: HTMLButtonElement;
  private unsatisfyBtn!: HTMLButtonElement;
  private counter!: HTMLSpanElement;
  private beforePane!: HTMLImageElement;
  private afterPane!: HTMLImageElement;
  private scoreBox!: HTMLPreElement;
  private toast!: HTMLDivElement;
  private fileInput!: HTMLInputElement;

  private build() {
    const controls = this.el("div", "controls");
    this.fileInput = this.el("input", "upload", controls);
    this.fileInput.type = "file";
    this.fileInput.accept = "image/png";
    this.fileInput.addEventListener("change", () => this.onUpload());

    ATTRIBUTE_LABELS.forEach((label, i) => {
      const row = this.el("div", "slider-row", controls);
      const name = this.el("label", "slider-label", row);
      name.textContent = label;
      const slider = this.el("input", "slider", row);
      slider.type = "range";
      slider.step = String(SLIDER_STEP);
      slider.addEventListener("input", () => {
        this.update(setSlider(this.state, i, Number(slider.value)));
      });
      const value = this.el("span", "slider-value", row);
      this.sliders.push(slider);
      this.sliderValues.push(value);
    });

    const extRow = this.el("div", "extended-row", controls);
    this.extendedBox = this.el("input", "extended", extRow);
    this.extendedBox.type = "checkbox";
    this.extendedBox.id = "extended";
    const extLabel = this.el("label", "", extRow);
    extLabel.htmlFor = "extended";
    extLabel.textContent = "extended range (±3)";
    this.extendedBox.addEventListener("change", () => {
      this.update(setExtended(this.state, this.extendedBox.checked));
    });

    const buttons = this.el("div", "buttons", controls);
    this.generateBtn = this.el("button", "generate", buttons);
    this.generateBtn.textContent = "Generate";
    this.generateBtn.addEventListener("click", () => void this.generate());
    this.rerollBtn = this.el("button", "reroll", buttons);
    this.rerollBtn.textContent = "Re-roll same settings";
    this.rerollBtn.addEventListener("click", () => void this.generate(this.state.lastSeed ?? undefined));
    this.satisfyBtn = this.el("button", "satisfy", buttons);
    this.satisfyBtn.textContent = "Satisfy";
    this.satisfyBtn.addEventListener("click", () => void this.finish(true));
    this.unsatisfyBtn = this.el("button", "unsatisfy", buttons);
    this.unsatisfyBtn.textContent = "Unsatisfy";
    this.unsatisfyBtn.addEventListener("click", () => void this.finish(false));

    const status = this.el("div", "status", controls);
    status.append("operations: ");
    this.counter = this.el("span", "counter", status);

    const panes = this.el("div", "panes");
    const beforeBox = this.el("figure", "pane", panes);
    this.el("figcaption", "", beforeBox).textContent = "input";
    this.beforePane = this.el("img", "before", beforeBox);
    const afterBox = this.el("figure", "pane", panes);
    this.el("figcaption", "", afterBox).textContent = "output";
    this.afterPane = this.el("img", "after", afterBox);

    this.scoreBox = this.el("pre", "scores");
    this.toast = this.el("div", "toast");
  }

  private onUpload() {
    const file = this.fileInput.files?.[0];
    if (!file) return;
    const reader = new FileReader();
    reader.onload = () => {
      const url = reader.result as string;
      this.sourceB64 = url.slice(url.indexOf(",") + 1);
      this.beforePane.src = url;
      this.render();
    };
    reader.readAsDataURL(file);
  }

  update(next: UiState) {
    this.state = next;
    this.render();
  }

  async generate(seed?: number) {
    if (!canGenerate(this.state) || this.sourceB64 === null) return;
    this.update(generateStart(this.state));
    try {
      const resp = await this.client.retouch(
        requestPayload(this.state, this.sourceB64, DEFAULT_STEPS, seed)
      );
      this.update(generateSuccess(this.state, resp));
    } catch (err) {
      const msg = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
      this.update(generateFailure(this.state, msg));
    }
  }

  async finish(satisfied: boolean) {
    if (this.state.sessionId === null) return;
    try {
      await this.client.feedback(this.state.sessionId, satisfied);
      if (satisfied) this.update(satisfy(this.state));
    } catch (err) {
      this.update(generateFailure(this.state, String(err)));
    }
  }

  render() {
    const bound = sliderBound(this.state);
    this.sliders.forEach((slider, i) => {
      slider.min = String(-bound);
      slider.max = String(bound);
      slider.value = String(this.state.sliders[i]);
      slider.disabled = this.state.locked;
      this.sliderValues[i].textContent = this.state.sliders[i].toFixed(1);
    });
    this.extendedBox.checked = this.state.extended;
    this.generateBtn.disabled =
      !canGenerate(this.state) || this.sourceB64 === null;
    this.rerollBtn.disabled =
      this.generateBtn.disabled || this.state.lastSeed === null;
    const noSession = this.state.sessionId === null || this.state.locked;
    this.satisfyBtn.disabled = noSession;
    this.unsatisfyBtn.disabled = noSession;
    this.counter.textContent = String(this.state.operations);
    if (this.state.resultImage) {
      this.afterPane.src = `data:image/png;base64,${this.state.resultImage}`;
    }
    this.scoreBox.textContent = this.state.scores
      ? JSON.stringify(this.state.scores, null, 2)
      : "";
    this.toast.textContent = this.state.locked
      ? `operations: ${this.state.operations}`
      : this.state.error ?? "";
    this.toast.classList.toggle("error", this.state.error !== null);
  }
}
