"""Static SVG line plots, written by hand so no plotting library is needed."""
import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=72, right=160, top=36, bottom=52)


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def _num(x):
    return f"{x:.4g}"


def line_plot_svg(series, title="", xlabel="epoch", ylabel="", logy=True):
    """Return SVG text for ``series``: a mapping ``label -> (xs, ys)``.

    With ``logy`` non-positive values are dropped from each curve.
    """
    curves = []
    for label, (xs, ys) in series.items():
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if y is not None and math.isfinite(float(y)) and (not logy or float(y) > 0)]
        curves.append((label, pts))
    allpts = [p for _, pts in curves for p in pts]
    if not allpts:
        allpts = [(0.0, 1.0), (1.0, 10.0)]
    xlo, xhi = min(p[0] for p in allpts), max(p[0] for p in allpts)
    ys = [math.log10(p[1]) if logy else p[1] for p in allpts]
    ylo, yhi = min(ys), max(ys)
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    if logy:
        ylo, yhi = math.floor(ylo), math.ceil(yhi)
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - xlo) / (xhi - xlo) * pw

    def sy(y):
        v = math.log10(y) if logy else y
        return MARGIN["top"] + (1 - (v - ylo) / (yhi - ylo)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           'fill="none" stroke="black"/>']
    for t in _ticks(xlo, xhi):
        x = sx(t)
        out.append(f'<line x1="{x:.1f}" y1="{MARGIN["top"] + ph}" x2="{x:.1f}" y2="{MARGIN["top"] + ph + 5}" '
                   'stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{_num(t)}</text>')
    yticks = range(int(ylo), int(yhi) + 1) if logy else _ticks(ylo, yhi)
    for t in yticks:
        v = 10.0 ** t if logy else t
        y = sy(v)
        label = f"1e{t}" if logy else _num(t)
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{y:.1f}" x2="{MARGIN["left"] + pw}" y2="{y:.1f}" '
                   'stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{y + 4:.1f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, pts) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        if pts:
            d = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{d}"/>')
        ly = MARGIN["top"] + 14 + 18 * i
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" '
                   'stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_line_plot(path, series, **kwargs):
    with open(path, "w") as fh:
        fh.write(line_plot_svg(series, **kwargs))
