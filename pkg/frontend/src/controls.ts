/** Slider/control construction; each control maps to exactly one endpoint
 *  via the callbacks wired in main.ts. */

export interface SliderSpec {
  label: string;
  min: number;
  max: number;
  step: number;
  value: number;
  onInput: (value: number) => void;
}

export function makeSlider(spec: SliderSpec): HTMLElement {
  const wrap = document.createElement("label");
  wrap.className = "control";
  const text = document.createElement("span");
  text.textContent = `${spec.label}: ${spec.value.toFixed(2)}`;
  const input = document.createElement("input");
  input.type = "range";
  input.min = String(spec.min);
  input.max = String(spec.max);
  input.step = String(spec.step);
  input.value = String(spec.value);
  input.addEventListener("input", () => {
    const v = parseFloat(input.value);
    text.textContent = `${spec.label}: ${v.toFixed(2)}`;
    spec.onInput(v);
  });
  wrap.append(text, input);
  return wrap;
}

export function makeToggle(label: string,
                           onChange: (on: boolean) => void): HTMLElement {
  const wrap = document.createElement("label");
  wrap.className = "control";
  const input = document.createElement("input");
  input.type = "checkbox";
  input.addEventListener("change", () => onChange(input.checked));
  const text = document.createElement("span");
  text.textContent = label;
  wrap.append(input, text);
  return wrap;
}

export function makeSelect(label: string, options: string[],
                           onChange: (value: string) => void): HTMLElement {
  const wrap = document.createElement("label");
  wrap.className = "control";
  const text = document.createElement("span");
  text.textContent = label;
  const select = document.createElement("select");
  for (const opt of options) {
    const o = document.createElement("option");
    o.value = opt;
    o.textContent = opt;
    select.append(o);
  }
  select.addEventListener("change", () => onChange(select.value));
  wrap.append(text, select);
  return wrap;
}

export function errorBanner(): { el: HTMLElement;
                                 show: (msg: string) => void;
                                 hide: () => void } {
  const el = document.createElement("div");
  el.className = "error-banner";
  el.style.display = "none";
  return {
    el,
    show: (msg: string) => {
      el.textContent = `server error: ${msg}`;
      el.style.display = "block";
    },
    hide: () => {
      el.style.display = "none";
    },
  };
}
