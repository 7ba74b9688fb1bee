/** Wire types shared with the service. */

export interface Target {
  position: [number, number];
  pen_up: boolean;
}

export interface Dynamics {
  dt: number;
  theta: number;
}

export interface TrajectoryDoc {
  t: number[];
  points: [number, number][];
  speed: number[];
  drawn: boolean[];
}

export interface SessionReply {
  plan_version: number;
  seed?: number;
  dynamics: Dynamics[];
  trajectory: TrajectoryDoc | null;
}

export interface ErrorFrame {
  type: "error";
  code: number;
  message: string;
}

export type ServerFrame = SessionReply | ErrorFrame;

export function isErrorFrame(frame: ServerFrame): frame is ErrorFrame {
  return (frame as ErrorFrame).type === "error";
}

export interface ModelInfo {
  id: string;
  kind: "DPP" | "VTP";
  styles: string[];
}

export type ClientMessage =
  | { type: "set_model"; version: number; model: string }
  | { type: "set_primer"; version: number; primer: string | null }
  | { type: "set_seed"; version: number; seed: number }
  | {
      type: "upsert_target";
      version: number;
      index: number;
      position: [number, number];
      pen_up?: boolean;
    }
  | { type: "delete_target"; version: number; index: number }
  | { type: "request_resample"; version: number };
