export interface Point {
  x: number;
  y: number;
}

export interface ImageSummary {
  id: string;
  image: string;
  width: number;
  height: number;
  status: string;
  revision: number;
}

export interface LandmarkRecord {
  id: string;
  image: string;
  width: number;
  height: number;
  points: [number, number][] | null;
  source: string;
  status: string;
  revision: number;
}

export type SaveResult =
  | { ok: true; record: LandmarkRecord }
  | { ok: false; kind: 'conflict'; detail: string }
  | { ok: false; kind: 'validation'; detail: string }
  | { ok: false; kind: 'network'; detail: string };
