import { ApiClient } from './api.js';
import { Editor } from './editor.js';
import { colorOf } from './groups.js';
import type { ImageSummary, Point } from './types.js';
import {
  fitView,
  imageToScreen,
  pan,
  screenToImage,
  zoomAt,
  type Viewport,
} from './viewport.js';

const HANDLE_RADIUS = 5;
const LENS_RADIUS = 60;
const LENS_ZOOM = 4;

class App {
  private api = new ApiClient('');
  private editor = new Editor();
  private viewport: Viewport = { zoom: 1, panX: 0, panY: 0 };
  private canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private image = new Image();
  private imageLoaded = false;
  private images: ImageSummary[] = [];
  private dragIndex = -1;
  private selected = -1;
  private panning = false;
  private lastPointer: Point = { x: 0, y: 0 };
  private lensVisible = false;

  constructor() {
    this.canvas = document.getElementById('canvas') as HTMLCanvasElement;
    this.ctx = this.canvas.getContext('2d')!;
    this.bindToolbar();
    this.bindCanvas();
    this.bindKeyboard();
    window.addEventListener('beforeunload', (ev) => {
      if (this.editor.dirty) {
        ev.preventDefault();
        ev.returnValue = '';
      }
    });
    window.addEventListener('resize', () => this.resizeCanvas());
    this.resizeCanvas();
    void this.refreshList();
  }

  // ---- server interaction -------------------------------------------------

  private async refreshList(): Promise<void> {
    try {
      this.images = await this.api.listImages();
      const select = document.getElementById('image-select') as HTMLSelectElement;
      select.innerHTML = '';
      for (const img of this.images) {
        const opt = document.createElement('option');
        opt.value = img.id;
        opt.textContent = `${img.image} [${img.status} r${img.revision}]`;
        select.appendChild(opt);
      }
      if (this.images.length) await this.openImage(this.images[0].id);
    } catch (err) {
      this.setStatus(`cannot reach service: ${err}`, 'error');
    }
  }

  private async openImage(id: string): Promise<void> {
    if (this.editor.dirty && !confirm('Discard unsaved landmark edits?')) {
      return;
    }
    try {
      const record = await this.api.getLandmarks(id);
      this.editor.loadRecord(record);
      this.imageLoaded = false;
      this.image = new Image();
      this.image.onload = () => {
        this.imageLoaded = true;
        this.resetView();
      };
      this.image.src = this.api.imageUrl(id);
      this.setStatus(`loaded ${record.image} (${record.status}, revision ${record.revision})`);
    } catch (err) {
      this.setStatus(`load failed: ${err}`, 'error');
    }
  }

  private async save(): Promise<void> {
    if (!this.editor.points) {
      this.setStatus('nothing to save', 'error');
      return;
    }
    const result = await this.api.putLandmarks(
      this.editor.imageId!,
      this.editor.pointsPayload(),
      this.editor.revision,
    );
    if (result.ok) {
      this.editor.applySaved(result.record);
      this.setStatus(`saved revision ${result.record.revision}`);
      void this.refreshListLabels();
    } else if (result.kind === 'conflict') {
      // local edits stay; the user chooses how to resolve
      const reload = confirm(
        `Save conflict: ${result.detail}.\n\nOK = discard local edits and reload the server version.\nCancel = keep editing (save again to overwrite).`,
      );
      if (reload) {
        await this.openImageForce(this.editor.imageId!);
      } else {
        const record = await this.api.getLandmarks(this.editor.imageId!);
        this.editor.adoptServerRevision(record.revision);
        this.setStatus('kept local edits; save again to overwrite', 'warn');
      }
    } else if (result.kind === 'network') {
      this.setStatus(`network failure, edits kept - retry save (${result.detail})`, 'error');
    } else {
      this.setStatus(`rejected: ${result.detail}`, 'error');
    }
    this.render();
  }

  private async openImageForce(id: string): Promise<void> {
    const record = await this.api.getLandmarks(id);
    this.editor.loadRecord(record);
    this.render();
    this.setStatus(`reloaded revision ${record.revision}`);
  }

  private async predict(): Promise<void> {
    try {
      const record = await this.api.predict(this.editor.imageId!);
      this.editor.loadRecord(record);
      this.setStatus(`model prediction loaded (revision ${record.revision})`);
      this.render();
    } catch (err) {
      this.setStatus(String(err), 'error');
    }
  }

  private async refreshListLabels(): Promise<void> {
    this.images = await this.api.listImages();
    const select = document.getElementById('image-select') as HTMLSelectElement;
    for (const option of Array.from(select.options)) {
      const img = this.images.find((i) => i.id === option.value);
      if (img) option.textContent = `${img.image} [${img.status} r${img.revision}]`;
    }
  }

  // ---- events -------------------------------------------------------------

  private bindToolbar(): void {
    const select = document.getElementById('image-select') as HTMLSelectElement;
    select.addEventListener('change', () => void this.openImage(select.value));
    document.getElementById('btn-save')!.addEventListener('click', () => void this.save());
    document.getElementById('btn-predict')!.addEventListener('click', () => void this.predict());
    document.getElementById('btn-template')!.addEventListener('click', () => {
      this.editor.startFromTemplate();
      this.render();
    });
    document.getElementById('btn-reset')!.addEventListener('click', () => this.resetView());
  }

  private bindCanvas(): void {
    this.canvas.addEventListener('wheel', (ev) => {
      ev.preventDefault();
      const factor = ev.deltaY < 0 ? 1.2 : 1 / 1.2;
      this.viewport = zoomAt(this.viewport, this.pointer(ev), factor);
      this.render();
    });
    this.canvas.addEventListener('pointerdown', (ev) => {
      const p = this.pointer(ev);
      this.lastPointer = p;
      this.dragIndex = this.hitTest(p);
      if (this.dragIndex >= 0) {
        this.selected = this.dragIndex;
        this.lensVisible = true;
        this.canvas.setPointerCapture(ev.pointerId);
      } else {
        this.panning = true;
      }
      this.render();
    });
    this.canvas.addEventListener('pointermove', (ev) => {
      const p = this.pointer(ev);
      const delta = { x: p.x - this.lastPointer.x, y: p.y - this.lastPointer.y };
      this.lastPointer = p;
      if (this.dragIndex >= 0) {
        this.editor.dragPoint(this.dragIndex, delta, this.viewport);
        this.render();
      } else if (this.panning) {
        this.viewport = pan(this.viewport, delta);
        this.render();
      }
    });
    const finish = () => {
      this.dragIndex = -1;
      this.panning = false;
      this.lensVisible = false;
      this.render();
    };
    this.canvas.addEventListener('pointerup', finish);
    this.canvas.addEventListener('pointercancel', finish);
  }

  private bindKeyboard(): void {
    window.addEventListener('keydown', (ev) => {
      if (this.selected < 0 || !this.editor.points) return;
      const steps: Record<string, [number, number]> = {
        ArrowLeft: [-1, 0],
        ArrowRight: [1, 0],
        ArrowUp: [0, -1],
        ArrowDown: [0, 1],
      };
      const step = steps[ev.key];
      if (step) {
        ev.preventDefault();
        this.editor.nudge(this.selected, step[0], step[1]);
        this.render();
      }
    });
  }

  private pointer(ev: MouseEvent): Point {
    const rect = this.canvas.getBoundingClientRect();
    return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  }

  private hitTest(screen: Point): number {
    if (!this.editor.points) return -1;
    let best = -1;
    let bestDist = HANDLE_RADIUS * 2;
    this.editor.points.forEach((p, i) => {
      const s = imageToScreen(this.viewport, p);
      const d = Math.hypot(s.x - screen.x, s.y - screen.y);
      if (d < bestDist) {
        best = i;
        bestDist = d;
      }
    });
    return best;
  }

  // ---- rendering ----------------------------------------------------------

  private resizeCanvas(): void {
    this.canvas.width = this.canvas.clientWidth;
    this.canvas.height = this.canvas.clientHeight;
    this.render();
  }

  private resetView(): void {
    if (this.imageLoaded) {
      this.viewport = fitView(
        this.image.naturalWidth,
        this.image.naturalHeight,
        this.canvas.width,
        this.canvas.height,
      );
    }
    this.render();
  }

  private render(): void {
    const ctx = this.ctx;
    ctx.fillStyle = '#181818';
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.imageLoaded) {
      ctx.save();
      ctx.imageSmoothingEnabled = this.viewport.zoom < 3;
      ctx.translate(this.viewport.panX, this.viewport.panY);
      ctx.scale(this.viewport.zoom, this.viewport.zoom);
      ctx.drawImage(this.image, 0, 0);
      ctx.restore();
    }
    if (this.editor.points) {
      this.editor.points.forEach((p, i) => {
        const s = imageToScreen(this.viewport, p);
        ctx.beginPath();
        ctx.arc(s.x, s.y, i === this.selected ? HANDLE_RADIUS + 2 : HANDLE_RADIUS, 0, 2 * Math.PI);
        ctx.fillStyle = colorOf(i);
        ctx.globalAlpha = 0.85;
        ctx.fill();
        ctx.globalAlpha = 1;
        ctx.lineWidth = 1;
        ctx.strokeStyle = '#000';
        ctx.stroke();
      });
    }
    if (this.lensVisible && this.dragIndex >= 0 && this.imageLoaded) {
      this.renderLens();
    }
    const dirty = document.getElementById('dirty-flag')!;
    dirty.textContent = this.editor.dirty ? 'unsaved edits' : '';
  }

  /** Magnifier near the cursor for sub-pixel placement on large artworks. */
  private renderLens(): void {
    const ctx = this.ctx;
    const p = this.editor.points![this.dragIndex];
    const screen = imageToScreen(this.viewport, p);
    const lensCx = screen.x + LENS_RADIUS + 30;
    const lensCy = screen.y - LENS_RADIUS - 30;
    const srcHalf = LENS_RADIUS / (this.viewport.zoom * LENS_ZOOM);
    ctx.save();
    ctx.beginPath();
    ctx.arc(lensCx, lensCy, LENS_RADIUS, 0, 2 * Math.PI);
    ctx.clip();
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(
      this.image,
      p.x - srcHalf,
      p.y - srcHalf,
      srcHalf * 2,
      srcHalf * 2,
      lensCx - LENS_RADIUS,
      lensCy - LENS_RADIUS,
      LENS_RADIUS * 2,
      LENS_RADIUS * 2,
    );
    ctx.strokeStyle = '#fff';
    ctx.beginPath();
    ctx.moveTo(lensCx - LENS_RADIUS, lensCy);
    ctx.lineTo(lensCx + LENS_RADIUS, lensCy);
    ctx.moveTo(lensCx, lensCy - LENS_RADIUS);
    ctx.lineTo(lensCx, lensCy + LENS_RADIUS);
    ctx.stroke();
    ctx.restore();
    ctx.beginPath();
    ctx.arc(lensCx, lensCy, LENS_RADIUS, 0, 2 * Math.PI);
    ctx.strokeStyle = '#fff';
    ctx.lineWidth = 2;
    ctx.stroke();
  }

  private setStatus(text: string, kind: 'info' | 'warn' | 'error' = 'info'): void {
    const el = document.getElementById('status')!;
    el.textContent = text;
    el.className = kind;
  }
}

new App();
