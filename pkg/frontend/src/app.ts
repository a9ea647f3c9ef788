/**
 * Single-page dashboard shell. All data access goes through ApiClient; the
 * logic lives in the tested modules (queue, state, roi, trend, labels) and
 * this file only wires them to the DOM.
 */

import { ApiClient, ApiError, OfflineError, PatientRecord } from "./api.js";
import { formatDate, formatHb, remarkBadge, severityBadge } from "./labels.js";
import { OfflineQueue } from "./queue.js";
import { boxFromDrag, encodeAnnotations, OverlayBox, RegionClass, validateForSubmit } from "./roi.js";
import { SnapshotCache, ViewState } from "./state.js";
import { polyline, trendPoints } from "./trend.js";

const api = new ApiClient("");
const state = new ViewState();
const cache = new SnapshotCache(window.localStorage);
const queue = new OfflineQueue(window.localStorage);

const root = () => document.getElementById("app")!;

function el(tag: string, attrs: Record<string, string> = {}, text = ""): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text) node.textContent = text;
  return node;
}

function banner(): HTMLElement {
  const wrap = el("div", { class: "topbar" });
  wrap.append(el("span", { class: "brand" }, "pocscreen"));
  if (state.offline) {
    wrap.append(el("span", { class: "offline-banner" }, "offline - cached data only"));
  }
  if (queue.length > 0) {
    wrap.append(el("span", { class: "queue-badge" }, `${queue.length} pending`));
  }
  if (state.authenticated) {
    const out = el("button", { class: "linkish" }, "log out");
    out.onclick = () => {
      api.clearSession();
      state.setAuthenticated(false);
    };
    wrap.append(out);
  }
  return wrap;
}

// ---- login -----------------------------------------------------------------

function loginView(): HTMLElement {
  const panel = el("div", { class: "panel" });
  panel.append(el("h1", {}, "Sign in"));
  const user = el("input", { placeholder: "username" }) as HTMLInputElement;
  const pass = el("input", { placeholder: "password", type: "password" }) as HTMLInputElement;
  const err = el("p", { class: "error" });
  const button = el("button", {}, "Log in") as HTMLButtonElement;
  button.onclick = async () => {
    err.textContent = "";
    try {
      await api.login(user.value, pass.value);
      state.setOffline(false);
      state.setAuthenticated(true);
      state.navigate({ kind: "patients" });
    } catch (e) {
      if (e instanceof OfflineError) {
        state.setOffline(true);
        if (cache.patients().length > 0) state.navigate({ kind: "patients" });
      } else {
        err.textContent = "login failed"; // uniform: no detail leaks
      }
    }
  };
  panel.append(user, pass, button, err);
  return panel;
}

// ---- patient list -------------------------------------------------------------

async function patientsView(): Promise<HTMLElement> {
  const panel = el("div", { class: "panel" });
  panel.append(el("h1", {}, "Patients"));
  let patients = cache.patients();
  if (!state.offline) {
    try {
      const page = await api.listPatients();
      patients = page.patients;
      cache.rememberPatients(patients);
    } catch (e) {
      if (e instanceof OfflineError) state.setOffline(true);
      else throw e;
    }
  }
  const list = el("ul", { class: "patient-list" });
  for (const p of patients) {
    const item = el("li");
    const link = el("a", { href: "#" }, `${p.name || p.patient_id} (${p.n_screenings} screenings)`);
    (link as HTMLAnchorElement).onclick = (ev) => {
      ev.preventDefault();
      state.navigate({ kind: "chart", patientId: p.patient_id });
    };
    item.append(link);
    list.append(item);
  }
  if (patients.length === 0) panel.append(el("p", { class: "empty" }, "no patients yet"));
  panel.append(list);

  if (!state.offline) {
    const name = el("input", { placeholder: "full name" }) as HTMLInputElement;
    const birth = el("input", { placeholder: "birth date (YYYY-MM-DD)" }) as HTMLInputElement;
    const sex = el("input", { placeholder: "sex" }) as HTMLInputElement;
    const add = el("button", {}, "Register patient");
    add.onclick = async () => {
      const record = await api.createPatient({
        name: name.value,
        birth_date: birth.value,
        sex: sex.value,
        contact: "",
      });
      cache.rememberRecord(record);
      state.navigate({ kind: "chart", patientId: record.patient_id });
    };
    panel.append(el("h2", {}, "Register"), name, birth, sex, add);
  }
  return panel;
}

// ---- patient chart ----------------------------------------------------------

async function chartView(patientId: string): Promise<HTMLElement> {
  const panel = el("div", { class: "panel" });
  let record: PatientRecord | null = null;
  if (!state.offline) {
    try {
      record = await api.getPatient(patientId);
      cache.rememberRecord(record);
    } catch (e) {
      if (e instanceof ApiError && e.status === 404) {
        panel.append(el("h1", {}, "Not found"), el("p", {}, `no patient ${patientId}`));
        return panel;
      }
      if (e instanceof OfflineError) state.setOffline(true);
      else throw e;
    }
  }
  if (!record) record = cache.record(patientId);
  if (!record) {
    panel.append(el("p", { class: "empty" }, "no cached copy of this record"));
    return panel;
  }

  panel.append(el("h1", {}, record.demographics.name || record.patient_id));
  panel.append(
    el(
      "p",
      { class: "demo" },
      `born ${record.demographics.birth_date || "?"} - sex ${record.demographics.sex || "?"}`,
    ),
  );

  const screenings = record.screenings;
  if (screenings.length === 0) {
    panel.append(el("p", { class: "empty" }, "no screenings recorded for this patient yet"));
  } else {
    const points = trendPoints(screenings);
    const line = polyline(points, 320, 96);
    if (line) {
      const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
      svg.setAttribute("viewBox", "0 0 320 96");
      svg.setAttribute("class", "trend");
      const poly = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
      poly.setAttribute("points", line);
      poly.setAttribute("fill", "none");
      poly.setAttribute("stroke", "currentColor");
      svg.append(poly);
      panel.append(svg);
    }
    const table = el("table", { class: "history" });
    const head = el("tr");
    for (const h of ["date", "hb", "remark", "severity", "model"]) head.append(el("th", {}, h));
    table.append(head);
    for (const s of screenings) {
      const row = el("tr");
      row.append(el("td", {}, formatDate(s.timestamp)));
      row.append(el("td", {}, formatHb(s.predicted_hb_gdl)));
      const remark = remarkBadge(s.remark);
      const severity = severityBadge(s.severity);
      row.append(el("td", { class: remark.css }, remark.label));
      row.append(el("td", { class: severity.css }, severity.label));
      row.append(el("td", {}, s.model_version));
      table.append(row);
    }
    panel.append(table);
  }

  const submit = el("button", {}, "Submit sample");
  submit.onclick = () => state.navigate({ kind: "submit", patientId });
  panel.append(submit);
  return panel;
}

// ---- guided submission ---------------------------------------------------------

const STEPS = ["position the hand", "capture", "confirm ROI overlay", "submit"] as const;

function submitView(patientId: string): HTMLElement {
  const panel = el("div", { class: "panel" });
  panel.append(el("h1", {}, "New sample"));
  const stepLabel = el("p", { class: "step" });
  let step = 0;
  const setStep = (i: number) => {
    step = i;
    stepLabel.textContent = `step ${i + 1}/${STEPS.length}: ${STEPS[i]}`;
  };
  setStep(0);
  panel.append(stepLabel);

  const fileInput = el("input", { type: "file", accept: "image/*", capture: "environment" }) as HTMLInputElement;
  const canvas = el("canvas", { class: "capture", width: "480", height: "360" }) as HTMLCanvasElement;
  const regionPick = el("select") as HTMLSelectElement;
  for (const region of ["nail", "skin", "reference"]) {
    regionPick.append(el("option", { value: region }, region));
  }
  const err = el("p", { class: "error" });
  const result = el("div", { class: "result" });
  const send = el("button", {}, "Submit") as HTMLButtonElement;

  let imageDataUrl = "";
  const boxes: OverlayBox[] = [];
  let dragStart: { x: number; y: number } | null = null;

  const redraw = () => {
    const ctx = canvas.getContext("2d")!;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (imageDataUrl) {
      const img = new Image();
      img.onload = () => {
        ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
        for (const b of boxes) {
          ctx.strokeStyle = b.region === "nail" ? "red" : b.region === "skin" ? "blue" : "green";
          ctx.strokeRect(
            (b.cx - b.w / 2) * canvas.width,
            (b.cy - b.h / 2) * canvas.height,
            b.w * canvas.width,
            b.h * canvas.height,
          );
        }
      };
      img.src = imageDataUrl;
    }
  };

  fileInput.onchange = () => {
    const file = fileInput.files?.[0];
    if (!file) return;
    const reader = new FileReader();
    reader.onload = () => {
      imageDataUrl = String(reader.result);
      setStep(2);
      redraw();
    };
    reader.readAsDataURL(file);
    setStep(1);
  };

  canvas.onmousedown = (ev) => {
    dragStart = { x: ev.offsetX, y: ev.offsetY };
  };
  canvas.onmouseup = (ev) => {
    if (!dragStart) return;
    const box = boxFromDrag(
      regionPick.value as RegionClass,
      dragStart.x,
      dragStart.y,
      ev.offsetX,
      ev.offsetY,
      canvas.width,
      canvas.height,
    );
    dragStart = null;
    if (box) {
      boxes.push(box);
      setStep(3);
      redraw();
    }
  };

  send.onclick = async () => {
    err.textContent = "";
    const problem = validateForSubmit(boxes);
    if (!imageDataUrl) {
      err.textContent = "capture an image first";
      return;
    }
    if (problem) {
      err.textContent = problem;
      return;
    }
    const annotations = encodeAnnotations(boxes);
    try {
      const { dataUrlToBlob } = await import("./queue.js");
      const screening = await api.submitSample(patientId, dataUrlToBlob(imageDataUrl), annotations);
      const severity = severityBadge(screening.severity);
      const remark = remarkBadge(screening.remark);
      result.replaceChildren(
        el("h2", {}, "Result"),
        el("p", {}, `${formatHb(screening.predicted_hb_gdl)}`),
        el("p", { class: remark.css }, remark.label),
        el("p", { class: severity.css }, severity.label),
        el("p", { class: "latency" }, `${screening.latency_ms.toFixed(1)} ms`),
      );
    } catch (e) {
      if (e instanceof OfflineError) {
        queue.enqueue({ patientId, imageDataUrl, annotations });
        state.setOffline(true);
        result.replaceChildren(el("p", { class: "queued" }, "offline: submission queued"));
      } else if (e instanceof ApiError) {
        err.textContent = `rejected: ${e.message}`;
      } else {
        throw e;
      }
    }
  };

  const back = el("button", { class: "linkish" }, "back to chart");
  back.onclick = () => state.navigate({ kind: "chart", patientId });
  panel.append(fileInput, canvas, regionPick, send, back, err, result);
  return panel;
}

// ---- shell ------------------------------------------------------------------------

async function render(): Promise<void> {
  const view = state.view;
  const host = root();
  host.replaceChildren(banner());
  switch (view.kind) {
    case "login":
      host.append(loginView());
      break;
    case "patients":
      host.append(await patientsView());
      break;
    case "chart":
      host.append(await chartView(view.patientId));
      break;
    case "submit":
      host.append(submitView(view.patientId));
      break;
    case "not_found":
      host.append(el("p", {}, `unknown patient ${view.patientId}`));
      break;
  }
}

async function drainQueue(): Promise<void> {
  if (queue.length === 0 || !state.authenticated) return;
  const report = await queue.drain(api);
  if (report.delivered.length > 0 && state.view.kind === "chart") {
    await render(); // chart reflects freshly delivered results
  }
}

window.addEventListener("online", () => {
  state.setOffline(false);
  void drainQueue();
});

state.subscribe(() => void render());
void render();
