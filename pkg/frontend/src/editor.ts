import { templateLayout } from './groups.js';
import type { LandmarkRecord, Point } from './types.js';
import { screenDeltaToImage, type Viewport } from './viewport.js';

export const NUM_LANDMARKS = 68;

/** Landmark editing state for one image.
 *
 * Points live in image-pixel coordinates regardless of the viewport; the
 * dirty flag is set iff any point differs from the last loaded or saved
 * record.
 */
export class Editor {
  imageId: string | null = null;
  imageWidth = 0;
  imageHeight = 0;
  revision = 0;
  status = 'unlabeled';
  points: Point[] | null = null;
  private baseline: Point[] | null = null;

  get dirty(): boolean {
    if (this.points === null && this.baseline === null) return false;
    if (this.points === null || this.baseline === null) return true;
    return this.points.some(
      (p, i) => p.x !== this.baseline![i].x || p.y !== this.baseline![i].y,
    );
  }

  loadRecord(record: LandmarkRecord): void {
    this.imageId = record.id;
    this.imageWidth = record.width;
    this.imageHeight = record.height;
    this.revision = record.revision;
    this.status = record.status;
    this.points = record.points ? record.points.map(([x, y]) => ({ x, y })) : null;
    this.baseline = this.points ? this.points.map((p) => ({ ...p })) : null;
  }

  /** From-scratch mode: place an editable template layout. */
  startFromTemplate(): void {
    if (!this.imageId) throw new Error('no image loaded');
    this.points = templateLayout(this.imageWidth, this.imageHeight);
    // baseline unchanged: a fresh template is unsaved work
  }

  /** Move one point by a screen-space delta (divided by the zoom). */
  dragPoint(index: number, screenDelta: Point, viewport: Viewport): void {
    this.requirePoints();
    this.checkIndex(index);
    const d = screenDeltaToImage(viewport, screenDelta);
    const p = this.points![index];
    this.points![index] = { x: p.x + d.x, y: p.y + d.y };
  }

  /** Keyboard nudge: exactly one image pixel per press. */
  nudge(index: number, dx: number, dy: number): void {
    this.requirePoints();
    this.checkIndex(index);
    const p = this.points![index];
    this.points![index] = { x: p.x + dx, y: p.y + dy };
  }

  setPoint(index: number, p: Point): void {
    this.requirePoints();
    this.checkIndex(index);
    this.points![index] = { x: p.x, y: p.y };
  }

  pointsPayload(): [number, number][] {
    this.requirePoints();
    if (this.points!.length !== NUM_LANDMARKS) {
      throw new Error(`expected ${NUM_LANDMARKS} points, have ${this.points!.length}`);
    }
    return this.points!.map((p) => [p.x, p.y]);
  }

  /** Adopt a successful save: server record becomes the new baseline. */
  applySaved(record: LandmarkRecord): void {
    this.revision = record.revision;
    this.status = record.status;
    if (record.points) {
      this.points = record.points.map(([x, y]) => ({ x, y }));
      this.baseline = this.points.map((p) => ({ ...p }));
    }
  }

  /** A conflicted save keeps local edits untouched; the caller decides
   * whether to retry with the server revision or reload. */
  adoptServerRevision(revision: number): void {
    this.revision = revision;
  }

  private requirePoints(): void {
    if (!this.points) throw new Error('no landmarks loaded; predict or start from scratch');
  }

  private checkIndex(index: number): void {
    if (index < 0 || index >= this.points!.length) {
      throw new Error(`landmark index out of range: ${index}`);
    }
  }
}
