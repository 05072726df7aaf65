/**
 * Pure geometry for the adaptation loss chart: one vertex per inner step,
 * x spread uniformly, y linearly rescaled so the trace fills the box.
 * Rendering is a single SVG polyline built from these vertices.
 */
export interface ChartVertex {
  x: number;
  y: number;
  loss: number;
}

export function traceVertices(
  trace: number[],
  width: number,
  height: number,
  pad = 4,
): ChartVertex[] {
  if (trace.length === 0) return [];
  const lo = Math.min(...trace);
  const hi = Math.max(...trace);
  const span = hi - lo;
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  return trace.map((loss, i) => ({
    x: pad + (trace.length === 1 ? innerW / 2 : (i / (trace.length - 1)) * innerW),
    // lower loss sits lower on screen, so larger y
    y: pad + (span === 0 ? innerH / 2 : ((hi - loss) / span) * innerH),
    loss,
  }));
}

export function polylinePoints(verts: ChartVertex[]): string {
  return verts.map((v) => `${round2(v.x)},${round2(v.y)}`).join(" ");
}

function round2(v: number): number {
  return Math.round(v * 100) / 100;
}

/** Build the SVG chart node; jsdom-safe (pure DOM, no layout queries). */
export function renderTraceChart(
  doc: Document,
  trace: number[],
  width = 320,
  height = 120,
): SVGSVGElement {
  const ns = "http://www.w3.org/2000/svg";
  const svg = doc.createElementNS(ns, "svg");
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));
  svg.setAttribute("class", "trace-chart");
  const verts = traceVertices(trace, width, height);
  if (verts.length > 0) {
    const line = doc.createElementNS(ns, "polyline");
    line.setAttribute("points", polylinePoints(verts));
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", "#3a7bd5");
    svg.appendChild(line);
    for (const v of verts) {
      const dot = doc.createElementNS(ns, "circle");
      dot.setAttribute("cx", String(round2(v.x)));
      dot.setAttribute("cy", String(round2(v.y)));
      dot.setAttribute("r", "2.5");
      dot.setAttribute("class", "trace-point");
      svg.appendChild(dot);
    }
  }
  return svg;
}
