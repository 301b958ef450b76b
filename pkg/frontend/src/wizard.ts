/**
 * Task creation wizard.
 *
 * Mirrors the server-side form rules client-side: a name, at least one
 * OID, a predicate for table filtering, a threshold for monitors, and a
 * positive frequency for periodic tasks.  Submission is blocked with
 * field-level messages until the form is valid; server-side INVALID_FORM
 * responses map back onto the same fields.  A partial distribution shows
 * a warning banner naming every host the bundle did not reach.
 */

import { ApiClient, ApiError, type CreateTaskResult, type TaskForm } from "./api.js";

export function validateForm(form: TaskForm): Record<string, string> {
  const errors: Record<string, string> = {};
  if (!form.name.trim()) {
    errors["name"] = "name required";
  }
  if (form.oids.length === 0) {
    errors["oids"] = "at least one OID required";
  }
  if (form.service_type === "table-filter" && !form.filter) {
    errors["filter"] = "table filtering needs a predicate";
  }
  if (form.service_type === "threshold-monitor" && !form.threshold) {
    errors["threshold"] = "threshold monitors need an expression and limit";
  }
  if (form.poll_mode === "periodic" && (!form.frequency_s || form.frequency_s < 1)) {
    errors["frequency_s"] = "periodic tasks need a frequency of at least 1 s";
  }
  return errors;
}

export class TaskWizard {
  readonly element: HTMLElement;
  onCreated: ((result: CreateTaskResult) => void) | null = null;

  constructor(private api: ApiClient) {
    this.element = document.createElement("form");
    this.element.className = "wizard";
    this.element.innerHTML = `
      <label>name <input name="name"><span class="field-error" data-for="name"></span></label>
      <label>service type
        <select name="service_type">
          <option value="scalar-poll">scalar poll</option>
          <option value="table-filter">table filter</option>
          <option value="threshold-monitor">threshold monitor</option>
        </select>
      </label>
      <label>OIDs (one per line) <textarea name="oids"></textarea>
        <span class="field-error" data-for="oids"></span></label>
      <fieldset class="filter-fields">
        <legend>filter</legend>
        <input name="filter_column" type="number" placeholder="column">
        <select name="filter_comparator">
          ${["EQ", "NE", "LT", "LE", "GT", "GE"].map((c) => `<option>${c}</option>`).join("")}
        </select>
        <input name="filter_constant" placeholder="constant">
        <span class="field-error" data-for="filter"></span>
      </fieldset>
      <fieldset class="threshold-fields">
        <legend>threshold</legend>
        <select name="threshold_expression">
          <option value="value">value</option>
          <option value="delta-per-second">delta per second</option>
        </select>
        <select name="threshold_comparator">
          ${["GT", "GE", "LT", "LE", "EQ", "NE"].map((c) => `<option>${c}</option>`).join("")}
        </select>
        <input name="threshold_limit" type="number" step="any" placeholder="limit">
        <span class="field-error" data-for="threshold"></span>
      </fieldset>
      <label>poll mode
        <select name="poll_mode">
          <option value="periodic">periodic</option>
          <option value="one-shot">one shot</option>
        </select>
      </label>
      <label>frequency (s) <input name="frequency_s" type="number" min="1" value="15">
        <span class="field-error" data-for="frequency_s"></span></label>
      <label><input name="encrypt" type="checkbox"> encrypt collected data</label>
      <label>device class <input name="device_class"></label>
      <label>priority (0-10) <input name="priority" type="number" min="0" max="10" value="5"></label>
      <button type="submit">create task</button>
      <div class="wizard-result"></div>`;
    this.element.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submit();
    });
  }

  private value(name: string): string {
    return (this.element.querySelector(`[name="${name}"]`) as HTMLInputElement).value.trim();
  }

  readForm(): TaskForm {
    const serviceType = this.value("service_type");
    const form: TaskForm = {
      name: this.value("name"),
      service_type: serviceType,
      oids: this.value("oids")
        .split("\n")
        .map((s) => s.trim())
        .filter(Boolean),
      poll_mode: this.value("poll_mode"),
      encrypt: (this.element.querySelector('[name="encrypt"]') as HTMLInputElement).checked,
      device_class: this.value("device_class"),
    };
    if (form.poll_mode === "periodic") {
      form.frequency_s = Number(this.value("frequency_s")) || 0;
    }
    const priority = Number(this.value("priority"));
    if (Number.isInteger(priority)) form.priority = priority;
    if (serviceType === "table-filter" && this.value("filter_column") !== "") {
      const constantRaw = this.value("filter_constant");
      const asNumber = Number(constantRaw);
      form.filter = {
        column: Number(this.value("filter_column")),
        comparator: this.value("filter_comparator"),
        constant: constantRaw !== "" && Number.isInteger(asNumber) ? asNumber : constantRaw,
      };
    }
    if (serviceType === "threshold-monitor" && this.value("threshold_limit") !== "") {
      form.threshold = {
        expression: this.value("threshold_expression"),
        comparator: this.value("threshold_comparator"),
        limit: Number(this.value("threshold_limit")),
      };
    }
    return form;
  }

  showErrors(errors: Record<string, string>): void {
    for (const span of this.element.querySelectorAll<HTMLElement>(".field-error")) {
      span.textContent = errors[span.dataset["for"] ?? ""] ?? "";
    }
  }

  async submit(): Promise<void> {
    const form = this.readForm();
    const errors = validateForm(form);
    this.showErrors(errors);
    const resultBox = this.element.querySelector(".wizard-result") as HTMLElement;
    if (Object.keys(errors).length > 0) {
      resultBox.textContent = "";
      return;
    }
    try {
      const created = await this.api.createTask(form);
      const warning =
        created.warning === "PARTIAL_DISTRIBUTION"
          ? `<div class="warning-banner">bundle did not reach: ${created.failed.join(", ")} — it will be re-pushed when they announce</div>`
          : "";
      resultBox.innerHTML =
        `<div class="ok">task ${created.name} v${created.version} running on ` +
        `${created.distributed.length} host(s)</div>` + warning;
      this.onCreated?.(created);
    } catch (err) {
      if (err instanceof ApiError && err.body["error"] === "INVALID_FORM") {
        const fields = (err.body["fields"] ?? []) as string[];
        this.showErrors(Object.fromEntries(fields.map((f) => [f, "rejected by the manager"])));
        resultBox.textContent = "";
      } else {
        resultBox.textContent = err instanceof Error ? err.message : String(err);
      }
    }
  }
}
