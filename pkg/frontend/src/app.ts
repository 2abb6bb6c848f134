/** Browser bootstrap: wires the editor state to a canvas and a small toolbar.
 *
 * All behaviour lives in the pure modules (state/render/client); this file is
 * only DOM glue, so the test suite exercises everything that matters without
 * a browser.
 */
import { generate, generateStream } from "./client.js";
import { drawToCanvas, renderModel } from "./render.js";
import { current, goTo, makeScrubber, type Scrubber } from "./scrubber.js";
import {
  adoptResult,
  applyEdit,
  type Edit,
  type EditorState,
  initialState,
  redo,
  undo,
} from "./state.js";
import type { AttrName, TrajectoryStep } from "./types.js";

interface AppElements {
  canvas: HTMLCanvasElement;
  status: HTMLElement;
  scrubber: HTMLInputElement;
}

export class EditorApp {
  state: EditorState = initialState();
  scrubber: Scrubber = makeScrubber([]);
  private readonly els: AppElements;
  private readonly baseUrl: string;
  private selection = 0;
  private generating = false;

  constructor(els: AppElements, baseUrl = "") {
    this.els = els;
    this.baseUrl = baseUrl;
  }

  private scale(): number {
    return this.els.canvas.width / this.state.layout.canvas.width;
  }

  repaint(): void {
    const frame = current(this.scrubber);
    const model = renderModel(frame ? frame.layout : this.state.layout);
    const ctx = this.els.canvas.getContext("2d");
    if (ctx) drawToCanvas(model, ctx, this.scale());
  }

  private say(message: string): void {
    this.els.status.textContent = message;
  }

  edit(edit: Edit): void {
    const result = applyEdit(this.state, edit);
    if (result.ok) {
      this.state = result.state;
      this.scrubber = makeScrubber([]);
      this.repaint();
    } else {
      this.say(result.reason);
    }
  }

  undo(): void {
    this.state = undo(this.state);
    this.repaint();
  }

  redo(): void {
    this.state = redo(this.state);
    this.repaint();
  }

  addElement(): void {
    this.edit({ kind: "add-element" });
  }

  select(index: number): void {
    this.selection = index;
  }

  toggle(attr: AttrName, to: "precise" | "coarse" | "missing"): void {
    this.edit({ kind: "toggle-status", index: this.selection, attr, to });
  }

  async generateFinal(): Promise<void> {
    if (this.generating) return;
    this.generating = true;
    this.say("generating…");
    try {
      const resp = await generate(this.baseUrl, this.state.layout, this.state.options);
      this.state = { ...this.state, lastResult: resp.layout };
      this.say(
        resp.retention === undefined
          ? `done (seed ${resp.seed_used})`
          : `done (seed ${resp.seed_used}, retention ${resp.retention.toFixed(1)}%)`,
      );
      this.repaint();
    } catch (e) {
      this.say(String(e));
    } finally {
      this.generating = false;
    }
  }

  async generateStreamed(): Promise<void> {
    if (this.generating) return;
    this.generating = true;
    const frames: TrajectoryStep[] = [];
    try {
      const result = await generateStream(
        this.baseUrl,
        this.state.layout,
        { ...this.state.options, trajectory: true },
        (step) => {
          frames.push(step);
          this.scrubber = makeScrubber(frames.slice());
          this.scrubber = goTo(this.scrubber, frames.length - 1);
          this.els.scrubber.max = String(frames.length - 1);
          this.els.scrubber.value = String(frames.length - 1);
          this.repaint();
        },
      );
      this.state = { ...this.state, lastResult: result.final, lastTrajectory: frames };
      this.say(`streamed ${frames.length} steps`);
    } catch (e) {
      this.say(String(e));
    } finally {
      this.generating = false;
    }
  }

  scrubTo(index: number): void {
    this.scrubber = goTo(this.scrubber, index);
    this.repaint();
  }

  adopt(): void {
    if (!this.state.lastResult) {
      this.say("nothing to adopt yet");
      return;
    }
    this.state = adoptResult(this.state, this.state.lastResult);
    this.scrubber = makeScrubber([]);
    this.repaint();
    this.say("adopted generation result");
  }
}

/** Attach the editor to the ids used by index.html. */
export function mount(doc: Document = document): EditorApp | null {
  const canvas = doc.getElementById("editor-canvas") as HTMLCanvasElement | null;
  const status = doc.getElementById("editor-status");
  const scrubber = doc.getElementById("editor-scrubber") as HTMLInputElement | null;
  if (!canvas || !status || !scrubber) return null;
  const app = new EditorApp({ canvas, status, scrubber });
  doc.getElementById("btn-add")?.addEventListener("click", () => app.addElement());
  doc.getElementById("btn-undo")?.addEventListener("click", () => app.undo());
  doc.getElementById("btn-redo")?.addEventListener("click", () => app.redo());
  doc.getElementById("btn-generate")?.addEventListener("click", () => {
    void app.generateFinal();
  });
  doc.getElementById("btn-stream")?.addEventListener("click", () => {
    void app.generateStreamed();
  });
  doc.getElementById("btn-adopt")?.addEventListener("click", () => app.adopt());
  scrubber.addEventListener("input", () => app.scrubTo(Number(scrubber.value)));
  app.repaint();
  return app;
}
