/** Threshold alarm pane: one dismissible banner per alarm event. */

export interface AlarmData {
  task?: string;
  host?: string;
  data?: { oid?: string; quantity?: number; limit?: number; comparator?: string };
}

export class AlarmPane {
  readonly element: HTMLElement;

  constructor() {
    this.element = document.createElement("div");
    this.element.className = "alarm-pane";
  }

  get count(): number {
    return this.element.querySelectorAll(".alarm-banner").length;
  }

  raise(alarm: AlarmData): void {
    const banner = document.createElement("div");
    banner.className = "alarm-banner";
    const data = alarm.data ?? {};
    const text = document.createElement("span");
    text.textContent =
      `threshold crossed: ${alarm.task ?? "?"} on ${alarm.host ?? "?"} — ` +
      `${data.oid ?? "?"} ${data.comparator ?? ""} ${data.limit ?? ""} (value ${data.quantity ?? "?"})`;
    const dismiss = document.createElement("button");
    dismiss.textContent = "dismiss";
    dismiss.className = "dismiss";
    dismiss.addEventListener("click", () => banner.remove());
    banner.append(text, dismiss);
    this.element.appendChild(banner);
  }
}
