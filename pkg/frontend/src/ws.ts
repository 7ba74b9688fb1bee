/** WebSocket session client with auto-reconnect and state resync. */

import type { ClientMessage, ServerFrame } from "./types.js";

export interface SessionEvents {
  onFrame(frame: ServerFrame): void;
  onStatus(connected: boolean): void;
  /** called after a reconnect so the owner can replay its state */
  onResync(): void;
}

export class SessionSocket {
  private ws: WebSocket | null = null;
  private closed = false;
  private everOpened = false;

  constructor(
    private readonly url: string,
    private readonly events: SessionEvents,
    private readonly reconnectDelayMs = 1000,
  ) {
    this.connect();
  }

  private connect(): void {
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.events.onStatus(true);
      if (this.everOpened) this.events.onResync();
      this.everOpened = true;
    };
    ws.onmessage = (ev) => {
      this.events.onFrame(JSON.parse(ev.data as string) as ServerFrame);
    };
    ws.onclose = () => {
      this.events.onStatus(false);
      if (!this.closed) {
        setTimeout(() => this.connect(), this.reconnectDelayMs);
      }
    };
  }

  send(msg: ClientMessage): void {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(JSON.stringify(msg));
    }
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
