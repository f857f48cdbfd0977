/**
 * HUD over the 3d view: active component badge, reduced-coordinate bar
 * chart, FPS and latency readouts, plus the connection banner and the
 * full-screen blocker used for protocol version mismatches.
 */

const MAX_BARS_SHOWN = 64;

function grab(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`overlay element #${id} missing from the page`);
  return el;
}

export class OverlayPanel {
  private readonly badge = grab("component-badge");
  private readonly fps = grab("fps");
  private readonly latency = grab("latency");
  private readonly banner = grab("banner");
  private readonly bannerText = grab("banner-text");
  private readonly retryButton = grab("banner-retry") as HTMLButtonElement;
  private readonly blocker = grab("blocker");
  private readonly bars = grab("bars") as HTMLCanvasElement;
  private readonly barsCtx = this.bars.getContext("2d")!;

  private labels: string[] = [];
  private barScale = 1e-6;   // grows to track the largest coordinate seen

  constructor(onRetry: () => void) {
    this.retryButton.onclick = onRetry;
  }

  setSceneName(name: string | null): void {
    if (name) grab("scene-name").textContent = name;
  }

  setLabels(labels: string[]): void {
    this.labels = labels;
  }

  setActive(index: number): void {
    const label = this.labels[index] ?? `component ${index}`;
    this.badge.textContent = `${index}: ${label}`;
  }

  setReduced(z: Float32Array, length: number): void {
    const ctx = this.barsCtx;
    const w = this.bars.width;
    const h = this.bars.height;
    const shown = Math.min(length, MAX_BARS_SHOWN);
    let peak = 0;
    for (let i = 0; i < shown; i++) peak = Math.max(peak, Math.abs(z[i]));
    this.barScale = Math.max(peak, this.barScale * 0.995, 1e-6);

    ctx.clearRect(0, 0, w, h);
    ctx.fillStyle = "rgba(255,255,255,0.25)";
    ctx.fillRect(0, h / 2, w, 1);
    ctx.fillStyle = "#7aa2cc";
    const slot = w / shown;
    const barW = Math.max(1, slot - 1);
    for (let i = 0; i < shown; i++) {
      const frac = z[i] / this.barScale;
      const len = Math.min(Math.abs(frac), 1) * (h / 2 - 1);
      const y = frac >= 0 ? h / 2 - len : h / 2;
      ctx.fillRect(i * slot, y, barW, Math.max(len, 1));
    }
  }

  setFps(fps: number): void {
    this.fps.textContent = `${fps.toFixed(0)} fps`;
  }

  setLatency(ms: number): void {
    this.latency.textContent = `${ms.toFixed(1)} ms`;
  }

  showBanner(text: string, withRetry: boolean): void {
    this.bannerText.textContent = text;
    this.retryButton.style.display = withRetry ? "inline-block" : "none";
    this.banner.style.display = "flex";
  }

  hideBanner(): void {
    this.banner.style.display = "none";
  }

  /** Terminal state; the session will not recover without a reload. */
  showBlocker(text: string): void {
    this.blocker.textContent = text;
    this.blocker.style.display = "flex";
  }
}
