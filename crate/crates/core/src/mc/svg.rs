//! Minimal self-contained SVG writers for sweep summaries: no plotting
//! dependency, diffable text output.

/// Box-summary plot of per-method estimate distributions with a reference
/// line at the true effect.
pub fn boxplot_svg(
    title: &str,
    method_names: &[String],
    gamma_draws: &[Vec<f64>],
    gamma_true: f64,
) -> String {
    let width = 720.0;
    let height = 120.0 + 46.0 * method_names.len() as f64;
    let left = 150.0;
    let right = width - 30.0;
    let top = 60.0;

    let mut lo = gamma_true;
    let mut hi = gamma_true;
    for draws in gamma_draws {
        for &g in draws {
            lo = lo.min(g);
            hi = hi.max(g);
        }
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.08 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = move |v: f64| left + (v - lo) / (hi - lo) * (right - left);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str("<style>text{font-family:monospace;font-size:12px}</style>\n");
    s.push_str(&format!("<text x=\"20\" y=\"24\" font-size=\"14\">{title}</text>\n"));

    // Reference line at the true effect.
    let x_true = sx(gamma_true);
    s.push_str(&format!(
        "<line x1=\"{x_true:.2}\" y1=\"{top}\" x2=\"{x_true:.2}\" y2=\"{:.2}\" \
         stroke=\"#c33\" stroke-dasharray=\"4 3\"/>\n",
        height - 30.0
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"#c33\">truth {gamma_true}</text>\n",
        x_true + 4.0,
        top - 6.0
    ));

    for (k, (name, draws)) in method_names.iter().zip(gamma_draws).enumerate() {
        let y = top + 20.0 + 46.0 * k as f64;
        s.push_str(&format!("<text x=\"16\" y=\"{:.2}\">{name}</text>\n", y + 5.0));
        if draws.is_empty() {
            continue;
        }
        let mut sorted = draws.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let quant = |p: f64| -> f64 {
            let pos = p * (sorted.len() as f64 - 1.0);
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 < sorted.len() {
                sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
            } else {
                sorted[i]
            }
        };
        let (min, q1, med, q3, max) =
            (sorted[0], quant(0.25), quant(0.5), quant(0.75), sorted[sorted.len() - 1]);
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#555\"/>\n",
            sx(min),
            sx(max)
        ));
        s.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"24\" \
             fill=\"#9cf\" stroke=\"#336\"/>\n",
            sx(q1),
            y - 12.0,
            (sx(q3) - sx(q1)).max(1.0)
        ));
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#036\" \
             stroke-width=\"2\"/>\n",
            sx(med),
            y - 12.0,
            sx(med),
            y + 12.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Point-and-interval plot: one estimate with its confidence bounds per
/// labelled position (the basis-size sensitivity figure).
pub fn interval_svg(
    title: &str,
    labels: &[String],
    estimates: &[f64],
    lowers: &[f64],
    uppers: &[f64],
) -> String {
    let width = 720.0;
    let height = 360.0;
    let left = 70.0;
    let right = width - 30.0;
    let top = 60.0;
    let bottom = height - 50.0;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&l, &u) in lowers.iter().zip(uppers) {
        lo = lo.min(l);
        hi = hi.max(u);
    }
    if !lo.is_finite() || hi - lo < 1e-9 {
        lo = -1.0;
        hi = 1.0;
    }
    let pad = 0.08 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let sy = move |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);
    let n = labels.len().max(1) as f64;
    let sx = move |k: usize| left + (k as f64 + 0.5) / n * (right - left);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str("<style>text{font-family:monospace;font-size:12px}</style>\n");
    s.push_str(&format!("<text x=\"20\" y=\"24\" font-size=\"14\">{title}</text>\n"));
    s.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\" stroke=\"#333\"/>\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"#333\"/>\n"
    ));
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = lo + frac * (hi - lo);
        let y = sy(v);
        s.push_str(&format!(
            "<text x=\"8\" y=\"{:.2}\">{v:.2}</text>\n<line x1=\"{:.2}\" y1=\"{y:.2}\" \
             x2=\"{left}\" y2=\"{y:.2}\" stroke=\"#999\"/>\n",
            y + 4.0,
            left - 5.0
        ));
    }
    for (k, label) in labels.iter().enumerate() {
        let x = sx(k);
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{label}</text>\n",
            x,
            bottom + 20.0
        ));
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#336\" \
             stroke-width=\"2\"/>\n",
            sy(lowers[k]),
            sy(uppers[k])
        ));
        s.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#036\"/>\n",
            sy(estimates[k])
        ));
    }
    s.push_str("</svg>\n");
    s
}
